//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates forward values, so it is independent
//! of every backward rule it is used to verify.

use super::tape::{Tape, Var};
use super::tensor::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub checked: usize,
    /// Name or index of the worst entry, for failure messages.
    pub worst: String,
}

impl GradCheckReport {
    fn new() -> Self {
        GradCheckReport {
            max_rel_err: 0.0,
            max_abs_err: 0.0,
            checked: 0,
            worst: String::new(),
        }
    }

    fn record(&mut self, analytic: f64, numeric: f64, label: impl FnOnce() -> String) {
        let abs = (analytic - numeric).abs();
        let rel = abs / analytic.abs().max(numeric.abs()).max(REL_FLOOR);
        self.checked += 1;
        self.max_abs_err = self.max_abs_err.max(abs);
        if rel > self.max_rel_err {
            self.max_rel_err = rel;
            self.worst = label();
        }
    }
}

/// Denominator floor so exact zeros on both sides do not divide by zero.
const REL_FLOOR: f64 = 1e-6;

fn scalar_loss(tape: &Tape<'_>, loss: Var) -> Result<f64> {
    if tape.value(loss).len() != 1 {
        return Err(Error::Usage("gradient check needs a scalar loss".into()));
    }
    Ok(tape.scalar(loss))
}

/// Checks gradients of `f` with respect to every element of `inputs`.
pub fn check_inputs<F>(inputs: &[Tensor], f: F, step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_>, &[Var]) -> Result<Var>,
{
    let eval = |ts: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ts.iter().map(|t| tape.leaf(t)).collect();
        let loss = f(&mut tape, &vars)?;
        scalar_loss(&tape, loss)
    };

    let owned: Vec<Tensor> = inputs.iter().cloned().map(Tensor::with_grad).collect();
    let mut tape = Tape::new();
    let vars: Vec<Var> = owned.iter().map(|t| tape.leaf(t)).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut report = GradCheckReport::new();
    let mut work = owned.clone();
    for (ti, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).map(<[f64]>::to_vec);
        for j in 0..work[ti].numel() {
            let orig = work[ti].values()[j];
            work[ti].values_mut()[j] = orig + step;
            let plus = eval(&work)?;
            work[ti].values_mut()[j] = orig - step;
            let minus = eval(&work)?;
            work[ti].values_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.as_ref().map_or(0.0, |g| g[j]);
            report.record(a, numeric, || format!("input {ti}[{j}]"));
        }
    }
    Ok(report)
}

/// Checks gradients of `f` with respect to the parameters held by `state`
/// (a bare [`ParamStore`] or anything that owns one, such as a model).
///
/// With `max_per_tensor`, each tensor contributes at most that many entries,
/// preferring ones with a non-zero analytic gradient (embedding tables are
/// mostly untouched rows).
pub fn check_params<S, F>(
    state: &S,
    f: F,
    step: f64,
    max_per_tensor: Option<usize>,
) -> Result<GradCheckReport>
where
    S: Clone + AsRef<ParamStore> + AsMut<ParamStore>,
    F: for<'a> Fn(&mut Tape<'a>, &'a S) -> Result<Var>,
{
    let mut base = state.as_ref().clone();
    base.zero_grad();
    {
        let mut tape = Tape::new();
        let loss = f(&mut tape, state)?;
        let grads = tape.backward(loss)?;
        base.accumulate(&grads);
    }

    let eval = |s: &S| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = f(&mut tape, s)?;
        scalar_loss(&tape, loss)
    };

    let mut report = GradCheckReport::new();
    let mut work = state.clone();
    let ids: Vec<_> = base.iter().map(|(id, name, _)| (id, name.to_string())).collect();
    for (id, name) in ids {
        let analytic = base.get(id).grad.clone().unwrap_or_else(|| vec![0.0; base.get(id).numel()]);
        let picks = pick_entries(&analytic, max_per_tensor);
        for j in picks {
            let orig = work.as_ref().get(id).values()[j];
            work.as_mut().get_mut(id).values_mut()[j] = orig + step;
            let plus = eval(&work)?;
            work.as_mut().get_mut(id).values_mut()[j] = orig - step;
            let minus = eval(&work)?;
            work.as_mut().get_mut(id).values_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            report.record(analytic[j], numeric, || format!("{name}[{j}]"));
        }
    }
    Ok(report)
}

fn pick_entries(analytic: &[f64], cap: Option<usize>) -> Vec<usize> {
    let n = analytic.len();
    let Some(cap) = cap.filter(|&c| c < n) else {
        return (0..n).collect();
    };
    let nonzero: Vec<usize> = (0..n).filter(|&j| analytic[j] != 0.0).collect();
    let source: Vec<usize> = if nonzero.is_empty() { (0..n).collect() } else { nonzero };
    if source.len() <= cap {
        let mut out = source;
        // one untouched entry keeps the zero side honest
        if let Some(z) = (0..n).find(|&j| analytic[j] == 0.0) {
            out.push(z);
        }
        return out;
    }
    let stride = source.len() as f64 / cap as f64;
    (0..cap).map(|i| source[(i as f64 * stride) as usize]).collect()
}
