use super::history::{EpochRecord, TrainHistory};
use super::{joint_loss, sub_seed, task_loss, SeedStream, TrainConfig};
use crate::data::{batch_indices, Batch, Dataset, SlateSample};
use crate::diffcore::{adam_step, AdamState, Precision, Tape, Var};
use crate::error::{Error, Result};
use crate::metrics::{alignment_stats, evaluate, EvalMode};
use crate::models::{distill_loss, Model, ModelSpec, TaskKind};

const EVAL_BATCH: usize = 1024;

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the best validation epoch.
    pub model: Model,
    pub history: TrainHistory,
}

#[derive(Debug, Clone)]
pub struct PfdOutcome {
    pub teacher: Model,
    pub student: Model,
    pub teacher_history: TrainHistory,
    pub student_history: TrainHistory,
}

#[derive(Clone, Copy)]
enum Phase<'t> {
    Plain,
    Teacher,
    Student(&'t Model),
}

/// Trains `spec` on `ds.train`, selecting the epoch with the best validation
/// AUC of the binary task (lowest MAE when there is none).
pub fn train(spec: &ModelSpec, cfg: &TrainConfig, ds: &Dataset) -> Result<TrainOutcome> {
    run(spec, cfg, ds, Phase::Plain)
}

/// Two-phase privileged-feature distillation.
///
/// Phase 1 trains the slate-aware teacher graph on task losses alone.
/// Phase 2 freezes it and trains the baseline-shaped student with the
/// distillation loss on binary heads and the plain loss on regression heads.
pub fn train_pfd(teacher_spec: &ModelSpec, student_spec: &ModelSpec, cfg: &TrainConfig, ds: &Dataset) -> Result<PfdOutcome> {
    if teacher_spec.tasks != student_spec.tasks {
        return Err(Error::Config("teacher and student must share the task list".into()));
    }
    let t = train_teacher(teacher_spec, cfg, ds)?;
    let s = train_student(student_spec, &t.model, cfg, ds)?;
    Ok(PfdOutcome {
        teacher: t.model,
        student: s.model,
        teacher_history: t.history,
        student_history: s.history,
    })
}

/// Phase 1: the slate-aware teacher graph on task losses alone; `lambda` is
/// ignored and validation uses the teacher graph.
pub fn train_teacher(spec: &ModelSpec, cfg: &TrainConfig, ds: &Dataset) -> Result<TrainOutcome> {
    if !spec.is_sar() {
        return Err(Error::Config("the distillation teacher needs slate features (sar != none)".into()));
    }
    run(spec, &TrainConfig { lambda: 0.0, ..cfg.clone() }, ds, Phase::Teacher)
}

/// Phase 2: a slate-blind student against a frozen teacher.
pub fn train_student(spec: &ModelSpec, teacher: &Model, cfg: &TrainConfig, ds: &Dataset) -> Result<TrainOutcome> {
    if spec.is_sar() {
        return Err(Error::Config("the distillation student must be slate-blind (sar = none)".into()));
    }
    if teacher.spec.tasks != spec.tasks {
        return Err(Error::Config("teacher and student must share the task list".into()));
    }
    run(spec, cfg, ds, Phase::Student(teacher))
}

/// Selection score: higher is better.
fn selection_score(auc: Option<f64>, mae: Option<f64>) -> f64 {
    auc.or(mae.map(|m| -m)).unwrap_or(f64::NEG_INFINITY)
}

fn loss_for<'a>(
    model: &'a Model,
    tape: &mut Tape<'a>,
    batch: &Batch,
    cfg: &TrainConfig,
    phase: Phase<'_>,
) -> Result<(Var, Vec<f64>, Option<f64>)> {
    match phase {
        Phase::Plain | Phase::Teacher => {
            let out = match phase {
                Phase::Teacher => model.pfd_teacher_forward(tape, batch)?,
                _ => model.forward_train(tape, batch)?,
            };
            let parts = joint_loss(tape, &out, batch, &model.spec, cfg)?;
            Ok((parts.total, parts.tasks, parts.sim))
        }
        Phase::Student(teacher) => {
            let teacher_logits = {
                let mut tt = Tape::new();
                let out = teacher.pfd_teacher_forward(&mut tt, batch)?;
                tt.value(out.preds).to_vec()
            };
            let m = model.spec.num_tasks();
            let out = model.forward_train(tape, batch)?;
            let weights = cfg.weights(&model.spec)?;
            let mut total: Option<Var> = None;
            let mut tasks = Vec::with_capacity(m);
            for (j, task) in model.spec.tasks.iter().enumerate() {
                let head = tape.slice(out.preds, 1, j, 1)?;
                let l = match task.kind {
                    TaskKind::Binary => {
                        let t: Vec<f64> = teacher_logits.iter().skip(j).step_by(m).copied().collect();
                        distill_loss(tape, head, &t, &batch.clicks, cfg.pfd_alpha, cfg.pfd_temperature)?
                    }
                    TaskKind::Regression => task_loss(tape, head, task.kind, batch, cfg.huber_delta)?,
                };
                tasks.push(tape.scalar(l));
                let term = tape.scale(l, weights[j]);
                total = Some(match total {
                    Some(t) => tape.add(t, term)?,
                    None => term,
                });
            }
            Ok((total.expect("validated task list"), tasks, None))
        }
    }
}

fn validate_on(model: &Model, val: &[SlateSample], ds: &Dataset, phase: Phase<'_>) -> Result<(Option<f64>, Option<f64>, Option<f64>)> {
    let mode = match phase {
        Phase::Teacher => EvalMode::Teacher,
        _ => EvalMode::Infer,
    };
    let rep = evaluate(model, val, &ds.vocab, EVAL_BATCH, mode)?;
    let align = match phase {
        Phase::Plain if model.spec.is_sar() => {
            Some(alignment_stats(model, val, &ds.vocab, EVAL_BATCH, None)?.mean_distance)
        }
        _ => None,
    };
    Ok((rep.primary_auc(), rep.primary_mae(), align))
}

fn run(spec: &ModelSpec, cfg: &TrainConfig, ds: &Dataset, phase: Phase<'_>) -> Result<TrainOutcome> {
    spec.validate()?;
    cfg.validate(spec)?;
    if ds.train.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    if cfg.epochs > 0 && ds.val.is_empty() {
        return Err(Error::Data("validation split is empty".into()));
    }
    let mut model = Model::new(
        spec.clone(),
        ds.vocab.sizes(),
        ds.slate_size(),
        sub_seed(cfg.seed, SeedStream::Init),
        Precision::F32,
    )?;
    let mut history = TrainHistory {
        task_names: spec.tasks.iter().map(|t| t.name.clone()).collect(),
        ..TrainHistory::default()
    };
    if matches!(phase, Phase::Plain) && spec.is_sar() && !ds.val.is_empty() {
        history.init_align_dist = Some(alignment_stats(&model, &ds.val, &ds.vocab, EVAL_BATCH, None)?.mean_distance);
    }
    let adam = cfg.adam();
    let mut state = AdamState::new(&model.params);
    let shuffle_seed = sub_seed(cfg.seed, SeedStream::Shuffle);
    let mut best = model.clone();
    let mut best_score = f64::NEG_INFINITY;
    let mut stale = 0usize;

    for epoch in 1..=cfg.epochs {
        let batches = batch_indices(ds.train.len(), cfg.batch_size, true, shuffle_seed, epoch as u64)?;
        let m = spec.num_tasks();
        let (mut sum_total, mut sum_tasks, mut sum_sim) = (0.0, vec![0.0; m], 0.0);
        let mut has_sim = false;
        for (b, idx) in batches.iter().enumerate() {
            let refs: Vec<&SlateSample> = idx.iter().map(|&i| &ds.train[i]).collect();
            let batch = Batch::encode(&refs, &ds.vocab, ds.slate_size())?;
            let grads = {
                let mut tape = Tape::new();
                let (total, tasks, sim) = loss_for(&model, &mut tape, &batch, cfg, phase)?;
                let value = tape.scalar(total);
                if !value.is_finite() {
                    return Err(Error::Numeric(format!("loss is {value} at epoch {epoch}, batch {}", b + 1)));
                }
                let n = batch.len as f64;
                sum_total += value * n;
                for (s, l) in sum_tasks.iter_mut().zip(&tasks) {
                    *s += l * n;
                }
                if let Some(s) = sim {
                    has_sim = true;
                    sum_sim += s * n;
                }
                tape.backward(total)?
            };
            model.params.zero_grad();
            model.params.accumulate(&grads);
            adam_step(&mut model.params, &mut state, &adam).map_err(|e| match e {
                Error::Numeric(msg) => Error::Numeric(format!("{msg} at epoch {epoch}, batch {}", b + 1)),
                e => e,
            })?;
        }
        let n = ds.train.len() as f64;
        let (val_auc, val_mae, val_align) = validate_on(&model, &ds.val, ds, phase)?;
        history.epochs.push(EpochRecord {
            epoch,
            loss_total: sum_total / n,
            loss_tasks: sum_tasks.iter().map(|s| s / n).collect(),
            loss_sim: has_sim.then_some(sum_sim / n),
            val_auc,
            val_mae,
            val_align_dist: val_align,
        });
        let score = selection_score(val_auc, val_mae);
        // strict improvement keeps the earlier epoch on ties
        if score > best_score {
            best_score = score;
            best = model.clone();
            history.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if cfg.patience > 0 && stale >= cfg.patience {
                break;
            }
        }
    }
    best.params.zero_grad();
    Ok(TrainOutcome { model: best, history })
}
