//! Validation AUC as a function of the encoder-similarity weight, several
//! seeds per ratio, run on worker threads.
//!
//! cargo run --release --example similarity_sweep -- [jobs]

use slate_rank::data::{synth_generate, Dataset, SplitRatios, SynthConfig};
use slate_rank::models::{Backbone, ModelSpec, SarVariant};
use slate_rank::trainer::{sweep_table, TrainConfig};

fn main() -> slate_rank::Result<()> {
    let jobs: usize = std::env::args().nth(1).map_or(2, |s| s.parse().expect("jobs"));
    let synth = SynthConfig {
        n_users: 300,
        n_items: 60,
        n_categories: 6,
        latent_dim: 3,
        ..SynthConfig::default()
    };
    let ds = Dataset::from_samples(synth_generate(&synth)?, synth.slate_size, SplitRatios::default(), 1, "synth")?;
    let spec = ModelSpec::new(Backbone::Ncf, SarVariant::Attn);
    let cfg = TrainConfig { epochs: 3, lr: 3e-3, ..TrainConfig::default() };
    let table = sweep_table(&spec, &cfg, &ds, &[0.0, 0.25, 1.0, 4.0], &[1, 2], jobs)?;
    print!("{}", table.to_csv());
    if let Some(best) = table.best_mean() {
        println!("best ratio {} (mean val auc {:.4})", best.ratio, best.val_auc.unwrap_or(f64::NAN));
    }
    Ok(())
}
