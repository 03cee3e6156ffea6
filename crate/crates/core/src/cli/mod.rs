//! Command-line driver: `prepare`, `train`, `eval` and `sweep`.
//!
//! Every command reads a [`RunConfig`], checks its inputs before doing any
//! work and writes all outputs at the end through temporary files, so a
//! failed run leaves nothing half-written. Outputs are byte-identical across
//! reruns; the creation time lives only in `provenance.toml`.

mod artifacts;
mod config;

pub use artifacts::{sha256_hex, Outputs, PROVENANCE_FILE};
pub use config::{
    under_data_root, DataSection, EvalSection, EvalSplit, RunConfig, Source, SweepSection, DATA_ENV,
    RUN_SCHEMA_VERSION,
};

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::{
    build_slates, dataset_to_text, parse_movielens, read_dataset, synth_generate, Dataset, SlateSample, SplitRatios,
    DATASET_FILE, VOCAB_FILE,
};
use crate::error::{Error, Result};
use crate::metrics::{
    alignment_stats, default_merge_weights, diversity_eval, evaluate, sample_requests, EvalMode, MetricsReport,
};
use crate::models::{checkpoint_bytes, load_checkpoint, Model, SarVariant, TaskKind};
use crate::trainer::{sub_seed, sweep_table, train, train_pfd, SeedStream, TrainHistory};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const TEACHER_FILE: &str = "teacher.ckpt";
pub const HISTORY_FILE: &str = "history.csv";
pub const TEACHER_HISTORY_FILE: &str = "teacher_history.csv";
pub const VAL_METRICS_FILE: &str = "val_metrics.csv";
pub const REPORT_FILE: &str = "report.csv";
pub const REPORT_B_FILE: &str = "report_b.csv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const EMBEDDINGS_FILE: &str = "embeddings.csv";
pub const DIVERSITY_FILE: &str = "diversity.csv";
pub const SWEEP_FILE: &str = "sweep.csv";

#[derive(Debug, Parser)]
#[command(name = "slate-rank", version, about = "Slate-aware ranking: prepare data, train, evaluate, sweep")]
pub struct Cli {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a processed dataset from MovieLens or the synthetic generator.
    Prepare(PrepareArgs),
    /// Train a model (or a teacher/student pair) on a prepared dataset.
    Train(DataArgs),
    /// Evaluate one checkpoint, or compare two with --diversity.
    Eval(EvalArgs),
    /// Similarity-weight sweep over ratios and seeds.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// MovieLens directory; implies a MovieLens source.
    #[arg(long)]
    pub movielens: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Prepared dataset directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Checkpoint to evaluate; give two with --diversity.
    #[arg(long = "checkpoint", required = true)]
    pub checkpoints: Vec<PathBuf>,
    /// Write paired encoder outputs to embeddings.csv.
    #[arg(long)]
    pub export_embeddings: bool,
    /// Compare top-K exposure Gini of two checkpoints.
    #[arg(long)]
    pub diversity: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Comma-separated ratios, overriding the config grid.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    /// Comma-separated seeds, overriding the config seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code: 0 success, 2 usage or config, 3 numeric failure.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Environment the commands read besides their arguments.
#[derive(Debug, Clone, Default)]
pub struct Env {
    pub data_root: Option<PathBuf>,
}

impl Env {
    pub fn from_process() -> Self {
        Env {
            data_root: std::env::var_os(DATA_ENV).filter(|v| !v.is_empty()).map(PathBuf::from),
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    run_in(cli, &Env::from_process())
}

pub fn run_in(cli: &Cli, env: &Env) -> Result<()> {
    let (mut cfg, config_bytes) = match &cli.config {
        Some(p) => {
            let bytes = fs::read(p).map_err(|e| Error::io(p, e))?;
            let text = String::from_utf8(bytes.clone())
                .map_err(|_| Error::Config(format!("{}: not UTF-8", p.display())))?;
            (RunConfig::parse(&text, p)?, bytes)
        }
        None => (RunConfig::default(), Vec::new()),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let ctx = Ctx {
        cfg,
        config_sha: sha256_hex(&config_bytes),
        env: env.clone(),
    };
    match &cli.command {
        Command::Prepare(a) => ctx.prepare(a, cli.out.as_deref()),
        Command::Train(a) => ctx.train(a, out_dir(cli)?),
        Command::Eval(a) => ctx.eval(a, out_dir(cli)?),
        Command::Sweep(a) => ctx.sweep(a, out_dir(cli)?),
    }
}

fn out_dir(cli: &Cli) -> Result<&Path> {
    cli.out
        .as_deref()
        .ok_or_else(|| Error::Usage("--out DIR is required".into()))
}

fn check_out(out: &Path) -> Result<()> {
    if out.exists() && !out.is_dir() {
        return Err(Error::Usage(format!("{} exists and is not a directory", out.display())));
    }
    Ok(())
}

fn require_file(path: &Path) -> Result<()> {
    if !path.is_file() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
        ));
    }
    Ok(())
}

struct Ctx {
    cfg: RunConfig,
    config_sha: String,
    env: Env,
}

struct Counts {
    users: usize,
    items: usize,
    slates: usize,
    clicks: usize,
}

fn counts(samples: &[&SlateSample]) -> Counts {
    let users: BTreeSet<u32> = samples.iter().map(|s| s.user_id).collect();
    let items: BTreeSet<u32> = samples.iter().map(|s| s.item_id).collect();
    let slates: BTreeSet<u64> = samples.iter().map(|s| s.slate_id).collect();
    Counts {
        users: users.len(),
        items: items.len(),
        slates: slates.len(),
        clicks: samples.iter().filter(|s| s.click == 1).count(),
    }
}

impl Ctx {
    fn provenance(&self, command: &str) -> toml::Table {
        let mut t = toml::Table::new();
        t.insert("command".into(), command.into());
        t.insert("version".into(), env!("CARGO_PKG_VERSION").into());
        t.insert("seed".into(), toml::Value::Integer(self.cfg.seed as i64));
        t.insert("config_sha256".into(), self.config_sha.clone().into());
        t
    }

    fn data_dir(&self, args: &DataArgs) -> Result<PathBuf> {
        let dir = args
            .data
            .clone()
            .or_else(|| {
                self.cfg
                    .data
                    .dir
                    .as_ref()
                    .map(|d| under_data_root(d, self.env.data_root.as_deref()))
            })
            .ok_or_else(|| Error::Usage("no dataset: pass --data DIR or set data.dir".into()))?;
        require_file(&dir.join(DATASET_FILE))?;
        require_file(&dir.join(VOCAB_FILE))?;
        Ok(dir)
    }

    fn load_dataset(&self, dir: &Path, prov: &mut toml::Table) -> Result<Dataset> {
        let ds = read_dataset(dir)?;
        let bytes = fs::read(dir.join(DATASET_FILE)).map_err(|e| Error::io(dir, e))?;
        prov.insert("dataset".into(), dir.display().to_string().into());
        prov.insert("dataset_sha256".into(), sha256_hex(&bytes).into());
        Ok(ds)
    }

    fn prepare(&self, args: &PrepareArgs, out: Option<&Path>) -> Result<()> {
        let cfg = &self.cfg;
        let out = match out {
            Some(o) => o.to_path_buf(),
            None => cfg
                .data
                .dir
                .as_ref()
                .map(|d| under_data_root(d, self.env.data_root.as_deref()))
                .ok_or_else(|| Error::Usage("prepare needs --out DIR or data.dir".into()))?,
        };
        check_out(&out)?;
        let source = if args.movielens.is_some() {
            Source::MovieLens
        } else {
            cfg.data.source
        };
        let mut prov = self.provenance("prepare");
        let split_seed = sub_seed(cfg.seed, SeedStream::Split);
        let (samples, slate_size, label) = match source {
            Source::MovieLens => {
                let dir = match &args.movielens {
                    Some(d) => d.clone(),
                    None => {
                        let rel = cfg.data.movielens.clone().unwrap_or_else(|| PathBuf::from("ml-1m"));
                        under_data_root(&rel, self.env.data_root.as_deref())
                    }
                };
                let ratings = dir.join("ratings.dat");
                let movies = dir.join("movies.dat");
                require_file(&ratings)?;
                require_file(&movies)?;
                let k = cfg.data.slate_size.unwrap_or(20);
                let mut raw = fs::read(&ratings).map_err(|e| Error::io(&ratings, e))?;
                raw.extend(fs::read(&movies).map_err(|e| Error::io(&movies, e))?);
                prov.insert("source".into(), "movielens".into());
                prov.insert("source_path".into(), dir.display().to_string().into());
                prov.insert("source_sha256".into(), sha256_hex(&raw).into());
                let log = parse_movielens(&ratings, &movies)?;
                eprintln!("parsed {} ratings", log.len());
                prov.insert("ratings".into(), toml::Value::Integer(log.len() as i64));
                (build_slates(&log, k)?, k, "movielens")
            }
            Source::Synth => {
                if let Some(k) = cfg.data.slate_size {
                    if k != cfg.synth.slate_size {
                        return Err(Error::Config(format!(
                            "data.slate_size {k} disagrees with synth.slate_size {}",
                            cfg.synth.slate_size
                        )));
                    }
                }
                let synth = crate::data::SynthConfig {
                    seed: sub_seed(cfg.seed, SeedStream::Synth),
                    ..cfg.synth.clone()
                };
                let text = toml::to_string(&synth).expect("synth config serializes");
                prov.insert("source".into(), "synth".into());
                prov.insert("source_sha256".into(), sha256_hex(text.as_bytes()).into());
                (synth_generate(&synth)?, synth.slate_size, "synth")
            }
        };
        let ds = Dataset::from_samples(samples, slate_size, SplitRatios::default(), split_seed, label)?;
        let all: Vec<&SlateSample> = ds.train.iter().chain(&ds.val).chain(&ds.test).collect();
        let c = counts(&all);
        let mut tc = toml::Table::new();
        for (k, v) in [
            ("samples", all.len()),
            ("train", ds.train.len()),
            ("val", ds.val.len()),
            ("test", ds.test.len()),
            ("users", c.users),
            ("items", c.items),
            ("slates", c.slates),
            ("clicks", c.clicks),
        ] {
            tc.insert(k.into(), toml::Value::Integer(v as i64));
        }
        prov.insert("slate_size".into(), toml::Value::Integer(slate_size as i64));
        prov.insert("counts".into(), tc.into());
        println!(
            "{label}: {} samples ({} train, {} val, {} test), {} users, {} items, {} slates of {slate_size}, ctr {:.4}",
            all.len(),
            ds.train.len(),
            ds.val.len(),
            ds.test.len(),
            c.users,
            c.items,
            c.slates,
            c.clicks as f64 / all.len().max(1) as f64
        );
        let mut o = Outputs::new();
        o.add(DATASET_FILE, dataset_to_text(&ds));
        o.add(VOCAB_FILE, ds.vocab.to_text());
        o.commit(&out, prov)
    }

    fn train(&self, args: &DataArgs, out: &Path) -> Result<()> {
        check_out(out)?;
        let dir = self.data_dir(args)?;
        let mut prov = self.provenance("train");
        let ds = self.load_dataset(&dir, &mut prov)?;
        let spec = &self.cfg.model;
        let tc = self.cfg.train_config();
        let mut o = Outputs::new();
        let (model, history) = if self.cfg.distill {
            let student_spec = spec.clone().with_sar(SarVariant::None);
            let r = train_pfd(spec, &student_spec, &tc, &ds)?;
            report_history("teacher", &r.teacher_history);
            o.add(TEACHER_FILE, checkpoint_bytes(&r.teacher)?);
            o.add(TEACHER_HISTORY_FILE, r.teacher_history.to_csv());
            (r.student, r.student_history)
        } else {
            let r = train(spec, &tc, &ds)?;
            (r.model, r.history)
        };
        report_history("model", &history);
        let val = if ds.val.is_empty() {
            MetricsReport::default()
        } else {
            evaluate(&model, &ds.val, &ds.vocab, self.cfg.eval.batch_size, EvalMode::Infer)?
        };
        print!("{}", val.summary());
        o.add(CHECKPOINT_FILE, checkpoint_bytes(&model)?);
        o.add(HISTORY_FILE, history.to_csv());
        o.add(VAL_METRICS_FILE, val.to_csv());
        o.commit(out, prov)
    }

    fn eval(&self, args: &EvalArgs, out: &Path) -> Result<()> {
        check_out(out)?;
        let n = args.checkpoints.len();
        if args.diversity && n != 2 {
            return Err(Error::Usage(format!("--diversity needs two checkpoints, got {n}")));
        }
        if !args.diversity && n != 1 {
            return Err(Error::Usage(format!("eval takes one checkpoint without --diversity, got {n}")));
        }
        for c in &args.checkpoints {
            require_file(c)?;
        }
        let dir = self.data_dir(&args.data)?;
        let mut prov = self.provenance("eval");
        let ds = self.load_dataset(&dir, &mut prov)?;
        let ec = &self.cfg.eval;
        let mut models: Vec<Model> = Vec::new();
        for (i, path) in args.checkpoints.iter().enumerate() {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            let m = load_checkpoint(path)?;
            m.check_compatible(&ds.vocab.sizes(), ds.slate_size())
                .map_err(|e| Error::Shape(format!("{}: {e}", path.display())))?;
            prov.insert(format!("checkpoint_{i}"), path.display().to_string().into());
            prov.insert(format!("checkpoint_{i}_sha256"), sha256_hex(&bytes).into());
            models.push(m);
        }
        let samples = match ec.split {
            EvalSplit::Val => &ds.val,
            EvalSplit::Test => &ds.test,
        };
        if samples.is_empty() {
            return Err(Error::Data("evaluation split is empty".into()));
        }
        let mut o = Outputs::new();
        let mut report = evaluate(&models[0], samples, &ds.vocab, ec.batch_size, EvalMode::Infer)?;
        if args.export_embeddings || ec.alignment {
            let mut csv = String::new();
            let export = args.export_embeddings.then_some(&mut csv);
            report.alignment = Some(alignment_stats(&models[0], samples, &ds.vocab, ec.batch_size, export)?);
            if args.export_embeddings {
                o.add(EMBEDDINGS_FILE, csv);
            }
        }
        if args.diversity {
            let kinds: Vec<TaskKind> = models[0].spec.tasks.iter().map(|t| t.kind).collect();
            if models[1].spec.tasks != models[0].spec.tasks {
                return Err(Error::Usage("diversity comparison needs models with the same tasks".into()));
            }
            let weights = if ec.merge_weights.is_empty() {
                default_merge_weights(&kinds)
            } else {
                ec.merge_weights.clone()
            };
            let requests = sample_requests(&ds, ec.users, ec.pool_size, sub_seed(self.cfg.seed, SeedStream::Requests))?;
            let d = diversity_eval(&models[0], &models[1], &requests, ec.k, &weights)?;
            o.add(
                DIVERSITY_FILE,
                format!(
                    "metric,a,b,rel_diff\ngini_item,{},{},{}\ngini_category,{},{},{}\n",
                    d.a.item, d.b.item, d.rel_diff_item, d.a.category, d.b.category, d.rel_diff_category
                ),
            );
            report.diversity = Some(d);
            let rb = evaluate(&models[1], samples, &ds.vocab, ec.batch_size, EvalMode::Infer)?;
            o.add(REPORT_B_FILE, rb.to_csv());
        }
        print!("{}", report.summary());
        o.add(REPORT_FILE, report.to_csv());
        o.add(SUMMARY_FILE, report.summary());
        o.commit(out, prov)
    }

    fn sweep(&self, args: &SweepArgs, out: &Path) -> Result<()> {
        check_out(out)?;
        if args.jobs == 0 {
            return Err(Error::Usage("--jobs must be at least 1".into()));
        }
        let dir = self.data_dir(&args.data)?;
        let mut prov = self.provenance("sweep");
        let ds = self.load_dataset(&dir, &mut prov)?;
        let grid = args.grid.clone().unwrap_or_else(|| self.cfg.sweep.grid.clone());
        let seeds = args.seeds.clone().unwrap_or_else(|| self.cfg.sweep.seeds.clone());
        let table = sweep_table(&self.cfg.model, &self.cfg.train_config(), &ds, &grid, &seeds, args.jobs)?;
        for r in &table.means {
            println!(
                "ratio {} lambda {} mean val auc {}",
                r.ratio,
                r.lambda,
                r.val_auc.map_or("-".into(), |a| format!("{a:.4}"))
            );
        }
        let mut o = Outputs::new();
        o.add(SWEEP_FILE, table.to_csv());
        o.commit(out, prov)
    }
}

fn report_history(label: &str, h: &TrainHistory) {
    if let Some(b) = h.best() {
        eprintln!(
            "{label}: best epoch {} of {}, val auc {}",
            b.epoch,
            h.epochs.len(),
            b.val_auc.map_or("-".into(), |a| format!("{a:.4}"))
        );
    }
}
