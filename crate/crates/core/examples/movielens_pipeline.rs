//! MovieLens-1M end to end: ratings to slates of 20, baseline and
//! slate-aware NCF, test AUC.
//!
//! SLATE_RANK_DATA=/data cargo run --release --example movielens_pipeline
//! (expects /data/ml-1m/ratings.dat and movies.dat)

use std::path::PathBuf;

use slate_rank::data::{build_slates, parse_movielens, Dataset, SplitRatios};
use slate_rank::metrics::{evaluate, EvalMode};
use slate_rank::models::{Backbone, ModelSpec, SarVariant};
use slate_rank::trainer::{train, TrainConfig};

fn main() -> slate_rank::Result<()> {
    let Some(root) = std::env::var_os("SLATE_RANK_DATA") else {
        eprintln!("set SLATE_RANK_DATA to the directory containing ml-1m/");
        std::process::exit(2);
    };
    let dir = PathBuf::from(root).join("ml-1m");
    let log = parse_movielens(&dir.join("ratings.dat"), &dir.join("movies.dat"))?;
    let samples = build_slates(&log, 20)?;
    println!("{} ratings -> {} slate samples", log.len(), samples.len());
    let ds = Dataset::from_samples(samples, 20, SplitRatios::default(), 1, "movielens")?;

    let cfg = TrainConfig { epochs: 20, ..TrainConfig::default() };
    for (sar, lambda) in [(SarVariant::None, 0.0), (SarVariant::Attn, 1.0)] {
        let spec = ModelSpec::new(Backbone::Ncf, sar);
        let out = train(&spec, &TrainConfig { lambda, ..cfg.clone() }, &ds)?;
        let rep = evaluate(&out.model, &ds.test, &ds.vocab, 4096, EvalMode::Infer)?;
        println!("ncf/{sar}: test auc {:.4} (best epoch {})", rep.primary_auc().unwrap_or(f64::NAN), out.history.best_epoch);
    }
    Ok(())
}
