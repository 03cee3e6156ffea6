//! Slate-blind baseline against the three slate encoders on synthetic data
//! where redundant slate-mates suppress clicks.
//!
//! cargo run --release --example slate_aware_synthetic -- [users] [epochs]

use slate_rank::data::{synth_generate, Dataset, SplitRatios, SynthConfig};
use slate_rank::metrics::{evaluate, EvalMode};
use slate_rank::models::{Backbone, ModelSpec, SarVariant, TaskSpec};
use slate_rank::trainer::{train, TrainConfig};

fn main() -> slate_rank::Result<()> {
    let mut args = std::env::args().skip(1);
    let users: usize = args.next().map_or(400, |s| s.parse().expect("users"));
    let epochs: usize = args.next().map_or(4, |s| s.parse().expect("epochs"));

    let synth = SynthConfig {
        n_users: users,
        n_items: 40,
        n_categories: 4,
        latent_dim: 2,
        category_spread: 0.3,
        sharpness: 1.5,
        click_scale: 0.3,
        min_slates_per_user: 10,
        max_slates_per_user: 20,
        ..SynthConfig::default()
    };
    let ds = Dataset::from_samples(synth_generate(&synth)?, synth.slate_size, SplitRatios::default(), 1, "synth")?;
    println!("{} train / {} val / {} test samples", ds.train.len(), ds.val.len(), ds.test.len());

    let tasks = vec![TaskSpec::binary("ctr"), TaskSpec::regression("watch")];
    let cfg = TrainConfig { epochs, lr: 3e-3, ..TrainConfig::default() };
    for sar in [SarVariant::None, SarVariant::SumPool, SarVariant::Lstm, SarVariant::Attn] {
        let spec = ModelSpec::new(Backbone::Ncf, sar).with_tasks(tasks.clone());
        let lambda = if spec.is_sar() { 1.0 } else { 0.0 };
        let out = train(&spec, &TrainConfig { lambda, ..cfg.clone() }, &ds)?;
        let rep = evaluate(&out.model, &ds.test, &ds.vocab, 1024, EvalMode::Infer)?;
        println!(
            "{sar:>8}: test auc {:.4}, watch mae {:.3}, best epoch {}",
            rep.primary_auc().unwrap_or(f64::NAN),
            rep.primary_mae().unwrap_or(f64::NAN),
            out.history.best_epoch
        );
    }
    Ok(())
}
