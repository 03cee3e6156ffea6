//! Synthetic multi-task slate data with an injected cross-item effect.
//!
//! Users and items live in a shared latent space; items cluster around
//! per-category centroids. Each slate is drawn by a noisy affinity ranker
//! (Gumbel top-K over `sharpness * <u, v>`), so slates reflect user taste.
//! The click logit of an item is
//!
//! ```text
//! click_scale * <u, v_i> + click_bias - gamma * mean_{j != i} cos(v_i, v_j) + noise
//! ```
//!
//! which makes redundant slate-mates suppress clicks. Watch time after a
//! click is `10 * softplus(<u, v_i>) + N(0, watch_noise)`, floored at zero.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gumbel, StandardNormal};
use serde::{Deserialize, Serialize};

use super::SlateSample;
use crate::diffcore::{sigmoid, softplus};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_categories: usize,
    pub latent_dim: usize,
    pub slate_size: usize,
    /// Inclusive range of slates drawn per user.
    pub min_slates_per_user: usize,
    pub max_slates_per_user: usize,
    /// Scale of the affinity term in the click logit.
    pub click_scale: f64,
    pub click_bias: f64,
    /// Strength of the slate-redundancy penalty.
    pub gamma: f64,
    /// Std of the per-sample Gaussian added to the click logit.
    pub logit_noise: f64,
    pub watch_noise: f64,
    /// How strongly slate selection follows affinity.
    pub sharpness: f64,
    /// Std of item vectors around their category centroid.
    pub category_spread: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_users: 2000,
            n_items: 800,
            n_categories: 16,
            latent_dim: 8,
            slate_size: 10,
            min_slates_per_user: 2,
            max_slates_per_user: 8,
            click_scale: 1.0,
            click_bias: -0.5,
            gamma: 1.0,
            logit_noise: 0.3,
            watch_noise: 2.0,
            sharpness: 2.0,
            category_spread: 0.5,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_users", self.n_users),
            ("n_items", self.n_items),
            ("n_categories", self.n_categories),
            ("latent_dim", self.latent_dim),
            ("slate_size", self.slate_size),
            ("min_slates_per_user", self.min_slates_per_user),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("synth.{name} must be positive")));
        }
        if self.max_slates_per_user < self.min_slates_per_user {
            return Err(Error::Config("synth.max_slates_per_user < min_slates_per_user".into()));
        }
        if self.slate_size > self.n_items {
            return Err(Error::Config("synth.slate_size exceeds n_items".into()));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::Config(format!("synth.gamma must be >= 0, got {}", self.gamma)));
        }
        let nonneg = [
            ("logit_noise", self.logit_noise),
            ("watch_noise", self.watch_noise),
            ("category_spread", self.category_spread),
        ];
        if let Some((name, v)) = nonneg.iter().find(|(_, v)| !(*v >= 0.0)) {
            return Err(Error::Config(format!("synth.{name} must be >= 0, got {v}")));
        }
        Ok(())
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, rng))
        .collect::<Vec<f64>>()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Latent state of the generator. Raw ids are 1-based indices into the
/// vectors below.
#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub cfg: SynthConfig,
    pub users: Vec<Vec<f64>>,
    pub items: Vec<Vec<f64>>,
    pub item_category: Vec<u32>,
    item_norm: Vec<f64>,
}

impl SyntheticWorld {
    pub fn new(cfg: SynthConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let l = cfg.latent_dim;
        let centroids: Vec<Vec<f64>> = (0..cfg.n_categories).map(|_| normal_vec(&mut rng, l, 1.0)).collect();
        let mut items = Vec::with_capacity(cfg.n_items);
        let mut item_category = Vec::with_capacity(cfg.n_items);
        for _ in 0..cfg.n_items {
            let k = rng.random_range(0..cfg.n_categories);
            let noise = normal_vec(&mut rng, l, cfg.category_spread);
            items.push(centroids[k].iter().zip(&noise).map(|(c, e)| c + e).collect::<Vec<_>>());
            item_category.push(k as u32 + 1);
        }
        let users = (0..cfg.n_users)
            .map(|_| normal_vec(&mut rng, l, 1.0 / (l as f64).sqrt()))
            .collect();
        let item_norm = items.iter().map(|v: &Vec<f64>| dot(v, v).sqrt().max(1e-12)).collect();
        Ok(SyntheticWorld {
            cfg,
            users,
            items,
            item_category,
            item_norm,
        })
    }

    pub fn affinity(&self, user: u32, item: u32) -> f64 {
        dot(&self.users[user as usize - 1], &self.items[item as usize - 1])
    }

    pub fn cosine(&self, a: u32, b: u32) -> f64 {
        let (ia, ib) = (a as usize - 1, b as usize - 1);
        dot(&self.items[ia], &self.items[ib]) / (self.item_norm[ia] * self.item_norm[ib])
    }

    /// Mean cosine similarity between `item` and the other members of `slate`.
    pub fn redundancy(&self, item: u32, slate: &[u32]) -> f64 {
        let others: Vec<u32> = slate.iter().copied().filter(|&j| j != item).collect();
        if others.is_empty() {
            return 0.0;
        }
        others.iter().map(|&j| self.cosine(item, j)).sum::<f64>() / others.len() as f64
    }

    /// Bernoulli parameter of a click given the per-sample logit noise.
    pub fn click_probability(&self, user: u32, item: u32, slate: &[u32], noise: f64) -> f64 {
        let c = &self.cfg;
        let penalty = if c.gamma == 0.0 {
            0.0
        } else {
            c.gamma * self.redundancy(item, slate)
        };
        sigmoid(c.click_scale * self.affinity(user, item) + c.click_bias - penalty + noise)
    }

    /// Draws one slate for `user`: the top `slate_size` items under
    /// Gumbel-perturbed affinity, in descending perturbed-score order.
    pub fn draw_slate(&self, user: u32, rng: &mut ChaCha8Rng) -> Vec<u32> {
        let gumbel = Gumbel::new(0.0, 1.0).expect("unit gumbel");
        let mut scored: Vec<(f64, u32)> = (1..=self.cfg.n_items as u32)
            .map(|i| (self.cfg.sharpness * self.affinity(user, i) + gumbel.sample(rng), i))
            .collect();
        let k = self.cfg.slate_size;
        scored.select_nth_unstable_by(k - 1, |a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        scored.truncate(k);
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        scored.into_iter().map(|(_, i)| i).collect()
    }

    /// Generates the full labelled dataset; fully determined by `cfg.seed`.
    pub fn generate(&self) -> Vec<SlateSample> {
        let c = &self.cfg;
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        rng.set_stream(1);
        let mut out = Vec::new();
        let mut slate_id = 0u64;
        for user in 1..=c.n_users as u32 {
            let n_slates = rng.random_range(c.min_slates_per_user..=c.max_slates_per_user);
            let activity = usize::BITS - 1 - n_slates.leading_zeros();
            for _ in 0..n_slates {
                let slate = self.draw_slate(user, &mut rng);
                let cats: Vec<u32> = slate.iter().map(|&i| self.item_category[i as usize - 1]).collect();
                for (pos, &item) in slate.iter().enumerate() {
                    let noise = c.logit_noise * Distribution::<f64>::sample(&StandardNormal, &mut rng);
                    let p = self.click_probability(user, item, &slate, noise);
                    let click = rng.random_bool(p.clamp(0.0, 1.0));
                    let watch_eps: f64 = StandardNormal.sample(&mut rng);
                    let watch_time = click.then(|| {
                        (10.0 * softplus(self.affinity(user, item)) + c.watch_noise * watch_eps).max(0.0)
                    });
                    out.push(SlateSample {
                        slate_id,
                        user_id: user,
                        user_context: vec![activity],
                        item_id: item,
                        item_categories: vec![cats[pos]],
                        slate_items: slate.clone(),
                        slate_categories: cats.clone(),
                        click: click as u8,
                        watch_time,
                    });
                }
                slate_id += 1;
            }
        }
        out
    }
}

/// Builds the latent world for `cfg` and generates its samples.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Vec<SlateSample>> {
    Ok(SyntheticWorld::new(cfg.clone())?.generate())
}
