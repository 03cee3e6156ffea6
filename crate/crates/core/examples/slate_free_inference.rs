//! Scoring candidates for one user without any slate: the slate-aware model
//! computes its user-side encodings once and reuses them for every item.
//!
//! cargo run --example slate_free_inference

use slate_rank::data::{synth_generate, Dataset, SplitRatios, SynthConfig};
use slate_rank::diffcore::{Precision, Tape};
use slate_rank::metrics::{predict, sample_requests, EvalMode};
use slate_rank::models::{Backbone, Model, ModelSpec, SarVariant, TaskSpec};

fn main() -> slate_rank::Result<()> {
    let synth = SynthConfig { n_users: 50, n_items: 60, ..SynthConfig::default() };
    let ds = Dataset::from_samples(synth_generate(&synth)?, synth.slate_size, SplitRatios::default(), 1, "synth")?;
    let spec = ModelSpec::new(Backbone::Ple, SarVariant::Lstm).with_tasks(vec![TaskSpec::binary("ctr"), TaskSpec::regression("watch")]);
    let model = Model::new(spec, ds.vocab.sizes(), ds.slate_size(), 3, Precision::F32)?;

    let req = &sample_requests(&ds, 1, 20, 1)?[0];
    let mut tape = Tape::new();
    let out = model.forward_candidates(&mut tape, req.user, &req.context, &req.pool.items, &req.pool.cat_ids, &req.pool.cat_offsets)?;
    // one row per candidate: click logit, watch time
    for (id, row) in req.pool.item_ids.iter().zip(tape.value(out.preds).chunks(2)).take(5) {
        println!("item {id}: click logit {:.4}, watch {:.3}", row[0], row[1]);
    }

    // scrambling every slate leaves inference outputs untouched
    let mut scrambled = ds.test.clone();
    for s in &mut scrambled {
        s.slate_items.reverse();
        s.slate_categories.iter_mut().for_each(|c| *c = 1);
    }
    let a = predict(&model, &ds.test, &ds.vocab, 256, EvalMode::Infer)?;
    let b = predict(&model, &scrambled, &ds.vocab, 256, EvalMode::Infer)?;
    println!("{} predictions, identical after scrambling slates: {}", a.values.len(), a == b);
    Ok(())
}
