//! Joint-loss optimization, training loops (plain, slate-aware, distilled)
//! and the similarity-weight sweep.

mod history;
mod sweep;
mod train;

pub use history::{EpochRecord, TrainHistory};
pub use sweep::{lambda_sweep, sweep_table, SweepRow, SweepTable};
pub use train::{train, train_pfd, train_student, train_teacher, PfdOutcome, TrainOutcome};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Batch;
use crate::diffcore::{AdamConfig, Tape, Var};
use crate::error::{Error, Result};
use crate::models::{ForwardOutput, ModelSpec, TaskKind, DEFAULT_ALPHA, DEFAULT_TEMPERATURE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Loss weight per task in spec order; empty means 1 for every task.
    pub task_weights: Vec<f64>,
    /// Weight of the encoder similarity loss.
    pub lambda: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub huber_delta: f64,
    /// Epochs without a validation AUC improvement before stopping; 0 never stops.
    pub patience: usize,
    pub pfd_alpha: f64,
    pub pfd_temperature: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            task_weights: Vec::new(),
            lambda: 0.0,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 20,
            batch_size: 256,
            seed: 1,
            huber_delta: 1.0,
            patience: 3,
            pfd_alpha: DEFAULT_ALPHA,
            pfd_temperature: DEFAULT_TEMPERATURE,
        }
    }
}

/// Independent random streams derived from the run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum SeedStream {
    Init = 1,
    Shuffle = 2,
    Split = 3,
    Synth = 4,
    Requests = 5,
}

pub(crate) fn sub_seed(seed: u64, stream: SeedStream) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng.next_u64()
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    /// ω per task of `spec`.
    pub fn weights(&self, spec: &ModelSpec) -> Result<Vec<f64>> {
        if self.task_weights.is_empty() {
            return Ok(vec![1.0; spec.num_tasks()]);
        }
        if self.task_weights.len() != spec.num_tasks() {
            return Err(Error::Config(format!(
                "{} task weights for {} tasks",
                self.task_weights.len(),
                spec.num_tasks()
            )));
        }
        Ok(self.task_weights.clone())
    }

    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        let w = self.weights(spec)?;
        if w.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) || !(w.iter().sum::<f64>() > 0.0) {
            return Err(Error::Config(format!(
                "task weights must be non-negative with a positive sum, got {w:?}"
            )));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::Config("adam needs lr > 0, betas in [0, 1) and eps > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.huber_delta > 0.0) {
            return Err(Error::Config(format!("huber_delta must be positive, got {}", self.huber_delta)));
        }
        if !(0.0..=1.0).contains(&self.pfd_alpha) || !(self.pfd_temperature > 0.0) {
            return Err(Error::Config("pfd_alpha must be in [0, 1] and pfd_temperature positive".into()));
        }
        if self.lambda > 0.0 && !spec.is_sar() {
            return Err(Error::Usage("lambda > 0 needs a slate-aware model".into()));
        }
        Ok(())
    }
}

/// Loss graph node plus the numeric components that built it.
#[derive(Debug, Clone)]
pub struct LossParts {
    pub total: Var,
    /// Unweighted, batch-averaged loss per task.
    pub tasks: Vec<f64>,
    /// Similarity loss value; `None` when the outputs carry no `l_s`.
    pub sim: Option<f64>,
}

/// Loss of one task head: BCE on clicks for binary heads, Huber on watch
/// time over clicked samples for regression heads.
pub(crate) fn task_loss(tape: &mut Tape<'_>, head: Var, kind: TaskKind, batch: &Batch, delta: f64) -> Result<Var> {
    let n = batch.len as f64;
    match kind {
        TaskKind::Binary => tape.bce_with_logits(head, &batch.clicks, &vec![1.0; batch.len], n),
        TaskKind::Regression => {
            // a batch without clicks contributes zero
            let clicked = batch.watch_mask.iter().sum::<f64>().max(1.0);
            tape.huber(head, &batch.watch, &batch.watch_mask, delta, clicked)
        }
    }
}

/// `sum_m w_m L_m + lambda * L_sim`.
pub fn joint_loss(
    tape: &mut Tape<'_>,
    out: &ForwardOutput,
    batch: &Batch,
    spec: &ModelSpec,
    cfg: &TrainConfig,
) -> Result<LossParts> {
    let weights = cfg.weights(spec)?;
    let mut total: Option<Var> = None;
    let mut tasks = Vec::with_capacity(weights.len());
    for (m, (task, &w)) in spec.tasks.iter().zip(&weights).enumerate() {
        let head = tape.slice(out.preds, 1, m, 1)?;
        let l = task_loss(tape, head, task.kind, batch, cfg.huber_delta)?;
        tasks.push(tape.scalar(l));
        let term = tape.scale(l, w);
        total = Some(match total {
            Some(t) => tape.add(t, term)?,
            None => term,
        });
    }
    let mut total = total.ok_or_else(|| Error::Config("model has no tasks".into()))?;
    let sim = match (out.l_u, out.l_s) {
        (Some(u), Some(s)) if cfg.lambda > 0.0 => {
            let l = tape.mean_squared_diff(u, s)?;
            let term = tape.scale(l, cfg.lambda);
            total = tape.add(total, term)?;
            Some(tape.scalar(l))
        }
        (Some(u), Some(s)) => Some(mse(tape.value(u), tape.value(s))),
        _ if cfg.lambda > 0.0 => {
            return Err(Error::Usage("lambda > 0 but the outputs carry no slate encoding".into()));
        }
        _ => None,
    };
    Ok(LossParts { total, tasks, sim })
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}
