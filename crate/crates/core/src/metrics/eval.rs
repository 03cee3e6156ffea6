use super::report::{MetricsReport, TaskMetric};
use super::{auc, mae};
use crate::data::{Batch, FeatureVocab, SlateSample};
use crate::diffcore::Tape;
use crate::error::{Error, Result};
use crate::models::{Model, TaskKind};

/// Which graph produces the scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EvalMode {
    /// Ranking-time graph; slate features are never read.
    #[default]
    Infer,
    /// Slate-aware PFD teacher graph (privileged features visible).
    Teacher,
}

/// Row-major `[N, M]` model outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub tasks: usize,
    pub values: Vec<f64>,
}

impl Predictions {
    pub fn len(&self) -> usize {
        self.values.len() / self.tasks
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn task(&self, t: usize) -> Vec<f64> {
        self.values.iter().skip(t).step_by(self.tasks).copied().collect()
    }
}

pub fn predict(
    model: &Model,
    samples: &[SlateSample],
    vocab: &FeatureVocab,
    batch_size: usize,
    mode: EvalMode,
) -> Result<Predictions> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let mut values = Vec::with_capacity(samples.len() * model.spec.num_tasks());
    for chunk in samples.chunks(batch_size) {
        let batch = Batch::from_samples(chunk, vocab, model.slate_size)?;
        let mut tape = Tape::new();
        let out = match mode {
            EvalMode::Infer => model.forward_infer(&mut tape, &batch.point())?,
            EvalMode::Teacher => model.pfd_teacher_forward(&mut tape, &batch)?,
        };
        values.extend_from_slice(tape.value(out.preds));
    }
    Ok(Predictions {
        tasks: model.spec.num_tasks(),
        values,
    })
}

/// AUC for binary heads (against clicks) and MAE for regression heads
/// (against watch time, over samples where it is observed).
pub fn evaluate(
    model: &Model,
    samples: &[SlateSample],
    vocab: &FeatureVocab,
    batch_size: usize,
    mode: EvalMode,
) -> Result<MetricsReport> {
    let preds = predict(model, samples, vocab, batch_size, mode)?;
    let mut tasks = Vec::new();
    for (t, spec) in model.spec.tasks.iter().enumerate() {
        let p = preds.task(t);
        let metric = match spec.kind {
            TaskKind::Binary => {
                let labels: Vec<f64> = samples.iter().map(|s| s.click as f64).collect();
                TaskMetric {
                    name: spec.name.clone(),
                    kind: spec.kind,
                    auc: Some(auc(&p, &labels)?),
                    mae: None,
                    n: samples.len(),
                }
            }
            TaskKind::Regression => {
                let (mut pr, mut tg) = (Vec::new(), Vec::new());
                for (s, v) in samples.iter().zip(&p) {
                    if let Some(w) = s.watch_time {
                        pr.push(*v);
                        tg.push(w);
                    }
                }
                TaskMetric {
                    name: spec.name.clone(),
                    kind: spec.kind,
                    auc: None,
                    mae: Some(mae(&pr, &tg)?),
                    n: pr.len(),
                }
            }
        };
        tasks.push(metric);
    }
    Ok(MetricsReport {
        n_samples: samples.len(),
        tasks,
        ..MetricsReport::default()
    })
}
