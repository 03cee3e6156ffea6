//! Top-K exposure Gini of two models ranking the same candidate pools.
//!
//! cargo run --release --example exposure_diversity

use slate_rank::data::{synth_generate, Dataset, SplitRatios, SynthConfig};
use slate_rank::metrics::{diversity_eval, rank_topk, sample_requests};
use slate_rank::models::{Backbone, ModelSpec, SarVariant, TaskSpec};
use slate_rank::trainer::{train, TrainConfig};

fn main() -> slate_rank::Result<()> {
    let synth = SynthConfig {
        n_users: 300,
        n_items: 80,
        n_categories: 8,
        latent_dim: 4,
        ..SynthConfig::default()
    };
    let ds = Dataset::from_samples(synth_generate(&synth)?, synth.slate_size, SplitRatios::default(), 1, "synth")?;
    let tasks = vec![TaskSpec::binary("ctr"), TaskSpec::regression("watch")];
    let cfg = TrainConfig { epochs: 3, lr: 3e-3, ..TrainConfig::default() };
    let base = train(&ModelSpec::new(Backbone::Fm, SarVariant::None).with_tasks(tasks.clone()), &cfg, &ds)?.model;
    let sar_cfg = TrainConfig { lambda: 1.0, ..cfg };
    let sar = train(&ModelSpec::new(Backbone::Fm, SarVariant::Attn).with_tasks(tasks), &sar_cfg, &ds)?.model;

    // ranking merges the click logit and watch time with these weights
    let weights = [1.0, 0.05];
    let requests = sample_requests(&ds, 100, 40, 7)?;
    let top = rank_topk(&sar, &requests[0], 5, &weights)?;
    println!("top 5 for the first request: {top:?}");

    let d = diversity_eval(&base, &sar, &requests, 10, &weights)?;
    println!("{} requests, top {}", d.requests, d.k);
    println!("item gini     baseline {:.4}  slate-aware {:.4}  ({:+.1}%)", d.a.item, d.b.item, 100.0 * d.rel_diff_item);
    println!("category gini baseline {:.4}  slate-aware {:.4}  ({:+.1}%)", d.a.category, d.b.category, 100.0 * d.rel_diff_category);
    Ok(())
}
