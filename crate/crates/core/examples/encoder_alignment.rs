//! Distance between the user-side and slate-side encodings before and after
//! training, with the paired encodings written to a CSV for plotting.
//!
//! cargo run --release --example encoder_alignment -- [out.csv]

use slate_rank::data::{synth_generate, Dataset, SplitRatios, SynthConfig};
use slate_rank::metrics::alignment_stats;
use slate_rank::models::{Backbone, ModelSpec, SarVariant};
use slate_rank::trainer::{train, TrainConfig};

fn main() -> slate_rank::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "embeddings.csv".into());
    let synth = SynthConfig { n_users: 300, ..SynthConfig::default() };
    let ds = Dataset::from_samples(synth_generate(&synth)?, synth.slate_size, SplitRatios::default(), 1, "synth")?;
    let spec = ModelSpec::new(Backbone::Ncf, SarVariant::Attn);
    let cfg = TrainConfig { epochs: 5, lr: 3e-3, lambda: 1.0, ..TrainConfig::default() };
    let trained = train(&spec, &cfg, &ds)?;
    for r in &trained.history.epochs {
        println!("epoch {}: sim loss {:.4}, val distance {:.4}", r.epoch, r.loss_sim.unwrap_or(f64::NAN), r.val_align_dist.unwrap_or(f64::NAN));
    }

    let mut csv = String::new();
    let stats = alignment_stats(&trained.model, &ds.val, &ds.vocab, 1024, Some(&mut csv))?;
    println!(
        "distance {:.4} (init {:.4}), cosine {:.4} over {} samples",
        stats.mean_distance,
        trained.history.init_align_dist.unwrap_or(f64::NAN),
        stats.mean_cosine,
        stats.n
    );
    std::fs::write(&out, csv).map_err(|e| slate_rank::Error::Io { path: out.clone().into(), source: e })?;
    println!("wrote {out}");
    Ok(())
}
