//! Composite layers and losses built from tape primitives.

use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// `x W + b` for `x: [B, in]`, `W: [in, out]`, `b: [out]`.
pub fn linear(tape: &mut Tape<'_>, x: Var, w: Var, b: Var) -> Result<Var> {
    let xw = tape.matmul(x, w)?;
    tape.add_bias(xw, b)
}

/// Weights of one LSTM cell. Gate blocks in the packed matrices are ordered
/// input, forget, candidate, output.
#[derive(Debug, Clone, Copy)]
pub struct LstmWeights {
    /// `[d_in, 4 h]`
    pub w_x: Var,
    /// `[h, 4 h]`
    pub w_h: Var,
    /// `[4 h]`
    pub bias: Var,
}

/// One step of the standard gated recurrence over a batch.
///
/// `x: [B, d_in]`, `h`, `c: [B, hidden]`; returns `(h', c')`.
pub fn lstm_step(
    tape: &mut Tape<'_>,
    x: Var,
    h: Var,
    c: Var,
    w: &LstmWeights,
) -> Result<(Var, Var)> {
    let hidden = tape.shape(h)[1];
    let wh = tape.shape(w.w_h).to_vec();
    if wh != [hidden, 4 * hidden] || tape.shape(c) != tape.shape(h) {
        return Err(Error::Dimension {
            op: "lstm_step",
            lhs: tape.shape(h).to_vec(),
            rhs: wh,
        });
    }
    let gx = tape.matmul(x, w.w_x)?;
    let gh = tape.matmul(h, w.w_h)?;
    let pre = tape.add(gx, gh)?;
    let pre = tape.add_bias(pre, w.bias)?;

    let i = tape.slice(pre, 1, 0, hidden)?;
    let f = tape.slice(pre, 1, hidden, hidden)?;
    let g = tape.slice(pre, 1, 2 * hidden, hidden)?;
    let o = tape.slice(pre, 1, 3 * hidden, hidden)?;
    let i = tape.sigmoid(i);
    let f = tape.sigmoid(f);
    let g = tape.tanh(g);
    let o = tape.sigmoid(o);

    let keep = tape.mul(f, c)?;
    let write = tape.mul(i, g)?;
    let c_next = tape.add(keep, write)?;
    let squashed = tape.tanh(c_next);
    let h_next = tape.mul(o, squashed)?;
    Ok((h_next, c_next))
}

/// Binary cross-entropy of a single logit against a hard label.
pub fn loss_bce(tape: &mut Tape<'_>, logit: Var, label: f64) -> Result<Var> {
    if label != 0.0 && label != 1.0 {
        return Err(Error::Data(format!("binary label must be 0 or 1, got {label}")));
    }
    let n = tape.value(logit).len();
    tape.bce_with_logits(logit, &vec![label; n], &vec![1.0; n], n as f64)
}

/// Huber loss of a single prediction.
pub fn loss_huber(tape: &mut Tape<'_>, pred: Var, target: f64, delta: f64) -> Result<Var> {
    let n = tape.value(pred).len();
    tape.huber(pred, &vec![target; n], &vec![1.0; n], delta, n as f64)
}

/// Alignment loss: mean over dimensions of squared differences.
pub fn loss_sim(tape: &mut Tape<'_>, u: Var, v: Var) -> Result<Var> {
    tape.mean_squared_diff(u, v)
}
