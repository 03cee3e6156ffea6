use std::fmt::Write as _;
use std::sync::Mutex;

use super::{train, TrainConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalMode};
use crate::models::{ModelSpec, TaskKind};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    /// Similarity weight relative to the binary task weight.
    pub ratio: f64,
    pub seed: u64,
    pub lambda: f64,
    pub val_auc: Option<f64>,
    pub val_mae: Option<f64>,
    pub best_epoch: usize,
}

/// Per-seed runs plus one seed-mean row per ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub means: Vec<SweepRow>,
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Config("lambda grid is empty".into()));
    }
    if let Some(r) = grid.iter().find(|r| !(**r >= 0.0) || !r.is_finite()) {
        return Err(Error::Config(format!("lambda ratio {r} must be finite and >= 0")));
    }
    Ok(())
}

fn ctr_weight(spec: &ModelSpec, cfg: &TrainConfig) -> Result<f64> {
    let w = cfg.weights(spec)?;
    spec.task_index(TaskKind::Binary)
        .map(|i| w[i])
        .ok_or_else(|| Error::Config("lambda sweep needs a binary task".into()))
}

fn one_run(spec: &ModelSpec, cfg: &TrainConfig, ds: &Dataset, ratio: f64, seed: u64) -> Result<SweepRow> {
    let lambda = ratio * ctr_weight(spec, cfg)?;
    let run_cfg = TrainConfig { lambda, seed, ..cfg.clone() };
    let out = train(spec, &run_cfg, ds)?;
    let rep = evaluate(&out.model, &ds.val, &ds.vocab, 1024, EvalMode::Infer)?;
    Ok(SweepRow {
        ratio,
        seed,
        lambda,
        val_auc: rep.primary_auc(),
        val_mae: rep.primary_mae(),
        best_epoch: out.history.best_epoch,
    })
}

/// One model per ratio at `cfg.seed`, sorted by ratio.
pub fn lambda_sweep(spec: &ModelSpec, cfg: &TrainConfig, ds: &Dataset, grid: &[f64]) -> Result<Vec<SweepRow>> {
    Ok(sweep_table(spec, cfg, ds, grid, &[cfg.seed], 1)?.rows)
}

/// Every `(ratio, seed)` pair, run on up to `jobs` threads. Output order
/// does not depend on `jobs`.
pub fn sweep_table(
    spec: &ModelSpec,
    cfg: &TrainConfig,
    ds: &Dataset,
    grid: &[f64],
    seeds: &[u64],
    jobs: usize,
) -> Result<SweepTable> {
    check_grid(grid)?;
    if seeds.is_empty() {
        return Err(Error::Config("sweep needs at least one seed".into()));
    }
    ctr_weight(spec, cfg)?;
    let mut ratios = grid.to_vec();
    ratios.sort_by(f64::total_cmp);
    ratios.dedup();
    let work: Vec<(f64, u64)> = ratios
        .iter()
        .flat_map(|&r| seeds.iter().map(move |&s| (r, s)))
        .collect();
    let results: Mutex<Vec<Option<Result<SweepRow>>>> = Mutex::new((0..work.len()).map(|_| None).collect());
    let next = Mutex::new(0usize);
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, work.len()) {
            scope.spawn(|| loop {
                let i = {
                    let mut n = next.lock().expect("sweep queue");
                    let i = *n;
                    *n += 1;
                    i
                };
                let Some(&(ratio, seed)) = work.get(i) else { break };
                let row = one_run(spec, cfg, ds, ratio, seed);
                results.lock().expect("sweep results")[i] = Some(row);
            });
        }
    });
    let rows = results
        .into_inner()
        .expect("sweep results")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect::<Result<Vec<_>>>()?;
    let mean = |xs: Vec<Option<f64>>| -> Option<f64> {
        let v: Option<Vec<f64>> = xs.into_iter().collect();
        v.map(|v| v.iter().sum::<f64>() / v.len() as f64)
    };
    let means = ratios
        .iter()
        .map(|&r| {
            let group: Vec<&SweepRow> = rows.iter().filter(|x| x.ratio == r).collect();
            SweepRow {
                ratio: r,
                seed: 0,
                lambda: group[0].lambda,
                val_auc: mean(group.iter().map(|x| x.val_auc).collect()),
                val_mae: mean(group.iter().map(|x| x.val_mae).collect()),
                best_epoch: 0,
            }
        })
        .collect();
    Ok(SweepTable { rows, means })
}

impl SweepTable {
    /// Mean row with the highest validation AUC.
    pub fn best_mean(&self) -> Option<&SweepRow> {
        self.means
            .iter()
            .filter(|r| r.val_auc.is_some())
            .max_by(|a, b| a.val_auc.partial_cmp(&b.val_auc).expect("finite auc"))
    }

    /// `kind` is `run` for single seeds and `mean` for the seed averages,
    /// whose `seed` and `best_epoch` cells are empty.
    pub fn to_csv(&self) -> String {
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from("kind,ratio,seed,lambda,val_auc,val_mae,best_epoch\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "run,{},{},{},{},{},{}",
                r.ratio,
                r.seed,
                r.lambda,
                cell(r.val_auc),
                cell(r.val_mae),
                r.best_epoch
            );
        }
        for r in &self.means {
            let _ = writeln!(out, "mean,{},,{},{},{},", r.ratio, r.lambda, cell(r.val_auc), cell(r.val_mae));
        }
        out
    }
}
