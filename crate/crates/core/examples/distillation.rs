//! Privileged-feature distillation: a teacher that reads the slate trains a
//! student that never does.
//!
//! cargo run --release --example distillation -- [users] [epochs]

use slate_rank::data::{synth_generate, Dataset, SplitRatios, SynthConfig};
use slate_rank::metrics::{evaluate, EvalMode};
use slate_rank::models::{Backbone, ModelSpec, SarVariant};
use slate_rank::trainer::{train, train_pfd, TrainConfig};

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
        click_scale: 0.3,
        min_slates_per_user: 10,
        max_slates_per_user: 20,
        ..SynthConfig::default()
    };
    let ds = Dataset::from_samples(synth_generate(&synth)?, synth.slate_size, SplitRatios::default(), 1, "synth")?;

    let teacher = ModelSpec::new(Backbone::WideDeep, SarVariant::Attn);
    let student = ModelSpec::new(Backbone::WideDeep, SarVariant::None);
    let cfg = TrainConfig { epochs, lr: 3e-3, pfd_alpha: 0.5, pfd_temperature: 2.0, ..TrainConfig::default() };

    let plain = train(&student, &cfg, &ds)?.model;
    let pfd = train_pfd(&teacher, &student, &cfg, &ds)?;
    let auc = |m, mode| -> slate_rank::Result<f64> {
        Ok(evaluate(m, &ds.test, &ds.vocab, 1024, mode)?.primary_auc().unwrap_or(f64::NAN))
    };
    println!("teacher (reads slates)  {:.4}", auc(&pfd.teacher, EvalMode::Teacher)?);
    println!("student (distilled)     {:.4}", auc(&pfd.student, EvalMode::Infer)?);
    println!("baseline (plain labels) {:.4}", auc(&plain, EvalMode::Infer)?);
    Ok(())
}
