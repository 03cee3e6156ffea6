use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::movielens::InteractionLog;
use super::SlateSample;
use crate::error::{Error, Result};

/// 1 for ratings 4-5, 0 for ratings 1-3.
pub fn binarize_labels(rating: u8) -> Result<u8> {
    match rating {
        1..=3 => Ok(0),
        4 | 5 => Ok(1),
        r => Err(Error::Data(format!("rating {r} outside 1..5"))),
    }
}

/// Turns each user's timestamp-ordered history into consecutive slates of
/// exactly `k` ratings; the trailing partial chunk is dropped.
///
/// Every rating in a kept chunk becomes one sample whose slate features are
/// the chunk's `k` items in order. Slate ids are assigned sequentially in
/// (user id, chunk) order.
pub fn build_slates(log: &InteractionLog, k: usize) -> Result<Vec<SlateSample>> {
    if k == 0 {
        return Err(Error::Precondition("slate size must be at least 1".into()));
    }
    let mut by_user: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, r) in log.records.iter().enumerate() {
        by_user.entry(r.user_id).or_default().push(i);
    }

    let mut out = Vec::new();
    let mut slate_id = 0u64;
    for (user, mut idx) in by_user {
        idx.sort_by_key(|&i| (log.records[i].timestamp, log.records[i].item_id));
        for chunk in idx.chunks_exact(k) {
            let items: Vec<u32> = chunk.iter().map(|&i| log.records[i].item_id).collect();
            let cats: Vec<u32> = chunk
                .iter()
                .map(|&i| log.records[i].genres.first().copied().unwrap_or(0))
                .collect();
            for &i in chunk {
                let r = &log.records[i];
                out.push(SlateSample {
                    slate_id,
                    user_id: user,
                    user_context: Vec::new(),
                    item_id: r.item_id,
                    item_categories: r.genres.clone(),
                    slate_items: items.clone(),
                    slate_categories: cats.clone(),
                    click: binarize_labels(r.rating)?,
                    watch_time: None,
                });
            }
            slate_id += 1;
        }
    }
    Ok(out)
}

/// Relative sizes of the train/validation/test splits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios(pub f64, pub f64, pub f64);

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios(8.0, 1.0, 1.0)
    }
}

/// Random split at slate granularity: all samples of a slate land together.
///
/// Slate ids are shuffled with `seed` and cut at the rounded cumulative
/// ratio boundaries, so each split is within one slate of its exact share.
/// Sample order inside each split follows the input order.
pub fn split_dataset(
    samples: Vec<SlateSample>,
    ratios: SplitRatios,
    seed: u64,
) -> Result<(Vec<SlateSample>, Vec<SlateSample>, Vec<SlateSample>)> {
    let SplitRatios(a, b, c) = ratios;
    if !(a > 0.0 && b > 0.0 && c > 0.0) {
        return Err(Error::Config(format!("split ratios must be positive, got {ratios:?}")));
    }
    let mut seen = HashMap::new();
    let mut slates = Vec::new();
    for s in &samples {
        seen.entry(s.slate_id).or_insert_with(|| {
            slates.push(s.slate_id);
        });
    }
    let n = slates.len();
    if n < 3 {
        return Err(Error::Data(format!("{n} slates cannot fill 3 splits")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    slates.shuffle(&mut rng);

    let total = a + b + c;
    let cut1 = ((n as f64) * a / total).round() as usize;
    let cut2 = ((n as f64) * (a + b) / total).round() as usize;
    let assignment: HashMap<u64, u8> = slates
        .iter()
        .enumerate()
        .map(|(pos, &id)| (id, if pos < cut1 { 0 } else if pos < cut2 { 1 } else { 2 }))
        .collect();

    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for s in samples {
        match assignment[&s.slate_id] {
            0 => train.push(s),
            1 => val.push(s),
            _ => test.push(s),
        }
    }
    Ok((train, val, test))
}
