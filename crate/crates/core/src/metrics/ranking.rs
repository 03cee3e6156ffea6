use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{gini_map, merge_scores, rank_order};
use crate::data::Dataset;
use crate::diffcore::Tape;
use crate::error::{Error, Result};
use crate::models::{Model, TaskKind};

/// Candidate items with their encoded features.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePool {
    /// Raw item ids; also the tie-break key.
    pub item_ids: Vec<u32>,
    /// Raw primary category per candidate; the key for category exposure.
    pub primary_category: Vec<u32>,
    pub items: Vec<usize>,
    pub cat_ids: Vec<usize>,
    pub cat_offsets: Vec<usize>,
}

impl CandidatePool {
    pub fn len(&self) -> usize {
        self.item_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.item_ids.is_empty()
    }
}

/// One ranking request: an encoded user with its context and pool.
#[derive(Debug, Clone, PartialEq)]
pub struct RankRequest {
    pub user: usize,
    pub context: Vec<usize>,
    pub pool: CandidatePool,
}

/// Indices of the `k` best scores, descending, ties by ascending key.
pub fn top_k(scores: &[f64], keys: &[u32], k: usize) -> Result<Vec<usize>> {
    if scores.len() != keys.len() {
        return Err(Error::Shape(format!("{} scores for {} keys", scores.len(), keys.len())));
    }
    if scores.len() < k {
        return Err(Error::Usage(format!("candidate pool of {} is smaller than K = {k}", scores.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Metric("NaN ranking score".into()));
    }
    let mut order = rank_order(scores, keys);
    order.truncate(k);
    Ok(order)
}

/// Scores every pool member with the inference graph, merges the task heads
/// and returns the top-`k` raw item ids in rank order.
pub fn rank_topk(model: &Model, request: &RankRequest, k: usize, weights: &[f64]) -> Result<Vec<u32>> {
    let pool = &request.pool;
    if pool.len() < k {
        return Err(Error::Usage(format!("candidate pool of {} is smaller than K = {k}", pool.len())));
    }
    let mut tape = Tape::new();
    let out = model.forward_candidates(
        &mut tape,
        request.user,
        &request.context,
        &pool.items,
        &pool.cat_ids,
        &pool.cat_offsets,
    )?;
    let kinds: Vec<TaskKind> = model.spec.tasks.iter().map(|t| t.kind).collect();
    let scores = merge_scores(tape.value(out.preds), &kinds, weights)?;
    Ok(top_k(&scores, &pool.item_ids, k)?
        .into_iter()
        .map(|i| pool.item_ids[i])
        .collect())
}

/// Item and category Gini of one model's exposures.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GiniPair {
    pub item: f64,
    pub category: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DiversityReport {
    pub a: GiniPair,
    pub b: GiniPair,
    /// `(b - a) / a`; zero when both are zero.
    pub rel_diff_item: f64,
    pub rel_diff_category: f64,
    pub requests: usize,
    pub k: usize,
}

fn rel_diff(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (b - a) / a
    }
}

fn exposure_gini(model: &Model, requests: &[RankRequest], k: usize, weights: &[f64]) -> Result<GiniPair> {
    // every pool member starts at zero so unexposed items count
    let mut items: BTreeMap<u32, u64> = BTreeMap::new();
    let mut cats: BTreeMap<u32, u64> = BTreeMap::new();
    for r in requests {
        let primary: BTreeMap<u32, u32> = r
            .pool
            .item_ids
            .iter()
            .copied()
            .zip(r.pool.primary_category.iter().copied())
            .collect();
        for (&i, &c) in &primary {
            items.entry(i).or_insert(0);
            cats.entry(c).or_insert(0);
        }
        for id in rank_topk(model, r, k, weights)? {
            *items.get_mut(&id).expect("pool member") += 1;
            *cats.get_mut(&primary[&id]).expect("pool category") += 1;
        }
    }
    Ok(GiniPair {
        item: gini_map(&items)?,
        category: gini_map(&cats)?,
    })
}

/// Top-`k` exposure Gini of two models over the same requests.
pub fn diversity_eval(
    model_a: &Model,
    model_b: &Model,
    requests: &[RankRequest],
    k: usize,
    weights: &[f64],
) -> Result<DiversityReport> {
    if requests.is_empty() {
        return Err(Error::Usage("diversity evaluation over no requests".into()));
    }
    let a = exposure_gini(model_a, requests, k, weights)?;
    let b = exposure_gini(model_b, requests, k, weights)?;
    Ok(DiversityReport {
        a,
        b,
        rel_diff_item: rel_diff(a.item, b.item),
        rel_diff_category: rel_diff(a.category, b.category),
        requests: requests.len(),
        k,
    })
}

/// Draws up to `n_users` distinct test users and gives each its own random
/// pool of `pool_size` catalog items seen in training.
///
/// The user's context is taken from their first test sample; a candidate's
/// primary category is the slate category recorded for it.
pub fn sample_requests(ds: &Dataset, n_users: usize, pool_size: usize, seed: u64) -> Result<Vec<RankRequest>> {
    let mut catalog: BTreeMap<u32, (Vec<u32>, u32)> = BTreeMap::new();
    for s in &ds.train {
        if let Some(pos) = s.target_position() {
            catalog
                .entry(s.item_id)
                .or_insert_with(|| (s.item_categories.clone(), s.slate_categories[pos]));
        }
    }
    if catalog.len() < pool_size || pool_size == 0 {
        return Err(Error::Usage(format!(
            "pool size {pool_size} needs at least that many catalog items, have {}",
            catalog.len()
        )));
    }
    let mut users: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for s in &ds.test {
        users.entry(s.user_id).or_insert_with(|| s.user_context.clone());
    }
    if users.is_empty() {
        return Err(Error::Data("no test users to rank for".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut user_list: Vec<(u32, Vec<u32>)> = users.into_iter().collect();
    user_list.shuffle(&mut rng);
    user_list.truncate(n_users);
    let catalog: Vec<(u32, (Vec<u32>, u32))> = catalog.into_iter().collect();
    let v = &ds.vocab;
    let mut out = Vec::with_capacity(user_list.len());
    for (user, ctx) in user_list {
        let picked: BTreeSet<usize> = rand::seq::index::sample(&mut rng, catalog.len(), pool_size)
            .into_iter()
            .collect();
        let mut pool = CandidatePool {
            item_ids: Vec::with_capacity(pool_size),
            primary_category: Vec::with_capacity(pool_size),
            items: Vec::with_capacity(pool_size),
            cat_ids: Vec::new(),
            cat_offsets: vec![0],
        };
        for i in picked {
            let (id, (cats, primary)) = &catalog[i];
            pool.item_ids.push(*id);
            pool.primary_category.push(*primary);
            pool.items.push(v.item.encode(*id));
            pool.cat_ids.extend(cats.iter().map(|&c| v.category.encode(c)));
            pool.cat_offsets.push(pool.cat_ids.len());
        }
        out.push(RankRequest {
            user: v.user.encode(user),
            context: ctx
                .iter()
                .zip(&v.context)
                .map(|(&c, f)| f.encode(c))
                .collect(),
            pool,
        });
    }
    Ok(out)
}
