use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{FeatureVocab, SlateSample};
use crate::error::{Error, Result};

/// Sample order for one epoch, chunked into batches; the last batch may be short.
///
/// With `shuffle`, the permutation is drawn from a stream keyed by
/// `(seed, epoch)`, so any epoch can be replayed on its own.
pub fn batch_indices(
    n: usize,
    batch_size: usize,
    shuffle: bool,
    seed: u64,
    epoch: u64,
) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch);
        order.shuffle(&mut rng);
    }
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Iterates over borrowed batches of `samples` for one epoch.
pub fn batch_iter<'s>(
    samples: &'s [SlateSample],
    batch_size: usize,
    shuffle: bool,
    seed: u64,
    epoch: u64,
) -> Result<impl Iterator<Item = Vec<&'s SlateSample>>> {
    let batches = batch_indices(samples.len(), batch_size, shuffle, seed, epoch)?;
    Ok(batches
        .into_iter()
        .map(move |idx| idx.into_iter().map(|i| &samples[i]).collect()))
}

/// The per-sample features available at ranking time: user and target item,
/// never the slate.
#[derive(Debug, Clone, Copy)]
pub struct PointFeatures<'b> {
    pub users: &'b [usize],
    /// One column per user context field.
    pub contexts: &'b [Vec<usize>],
    pub items: &'b [usize],
    pub item_cat_ids: &'b [usize],
    pub item_cat_offsets: &'b [usize],
}

impl PointFeatures<'_> {
    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }
}

/// Vocabulary-encoded, column-major view of a batch of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub len: usize,
    pub slate_size: usize,
    pub users: Vec<usize>,
    /// One column per user context field.
    pub contexts: Vec<Vec<usize>>,
    pub items: Vec<usize>,
    /// Bag of target categories: `item_cat_ids[item_cat_offsets[b]..item_cat_offsets[b + 1]]`.
    pub item_cat_ids: Vec<usize>,
    pub item_cat_offsets: Vec<usize>,
    /// Category of the target at its slate position.
    pub target_slate_cat: Vec<usize>,
    /// Row-major `[len, slate_size]`.
    pub slate_items: Vec<usize>,
    pub slate_cats: Vec<usize>,
    pub clicks: Vec<f64>,
    /// Watch time where observed, 0 elsewhere.
    pub watch: Vec<f64>,
    /// 1 where watch time is observed.
    pub watch_mask: Vec<f64>,
}

impl Batch {
    pub fn encode(samples: &[&SlateSample], vocab: &FeatureVocab, slate_size: usize) -> Result<Batch> {
        if samples.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        let n = samples.len();
        let mut b = Batch {
            len: n,
            slate_size,
            users: Vec::with_capacity(n),
            contexts: vec![Vec::with_capacity(n); vocab.context.len()],
            items: Vec::with_capacity(n),
            item_cat_ids: Vec::new(),
            item_cat_offsets: vec![0],
            target_slate_cat: Vec::with_capacity(n),
            slate_items: Vec::with_capacity(n * slate_size),
            slate_cats: Vec::with_capacity(n * slate_size),
            clicks: Vec::with_capacity(n),
            watch: Vec::with_capacity(n),
            watch_mask: Vec::with_capacity(n),
        };
        for s in samples {
            if s.slate_items.len() != slate_size || s.slate_categories.len() != slate_size {
                return Err(Error::Shape(format!(
                    "slate {} has {} members, expected {slate_size}",
                    s.slate_id,
                    s.slate_items.len()
                )));
            }
            if s.user_context.len() != vocab.context.len() {
                return Err(Error::Data(format!(
                    "sample has {} context fields, vocab has {}",
                    s.user_context.len(),
                    vocab.context.len()
                )));
            }
            b.users.push(vocab.user.encode(s.user_id));
            for (col, (f, &id)) in b.contexts.iter_mut().zip(vocab.context.iter().zip(&s.user_context)) {
                col.push(f.encode(id));
            }
            b.items.push(vocab.item.encode(s.item_id));
            b.item_cat_ids
                .extend(s.item_categories.iter().map(|&c| vocab.category.encode(c)));
            b.item_cat_offsets.push(b.item_cat_ids.len());
            let pos = s.target_position().ok_or_else(|| {
                Error::Data(format!("target {} missing from slate {}", s.item_id, s.slate_id))
            })?;
            b.target_slate_cat.push(vocab.category.encode(s.slate_categories[pos]));
            b.slate_items
                .extend(s.slate_items.iter().map(|&i| vocab.item.encode(i)));
            b.slate_cats
                .extend(s.slate_categories.iter().map(|&c| vocab.category.encode(c)));
            b.clicks.push(s.click as f64);
            b.watch.push(s.watch_time.unwrap_or(0.0));
            b.watch_mask.push(if s.watch_time.is_some() { 1.0 } else { 0.0 });
        }
        Ok(b)
    }

    pub fn point(&self) -> PointFeatures<'_> {
        PointFeatures {
            users: &self.users,
            contexts: &self.contexts,
            items: &self.items,
            item_cat_ids: &self.item_cat_ids,
            item_cat_offsets: &self.item_cat_offsets,
        }
    }

    /// Encodes owned samples.
    pub fn from_samples(samples: &[SlateSample], vocab: &FeatureVocab, slate_size: usize) -> Result<Batch> {
        let refs: Vec<&SlateSample> = samples.iter().collect();
        Batch::encode(&refs, vocab, slate_size)
    }
}
