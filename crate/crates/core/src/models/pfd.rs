use crate::diffcore::{sigmoid, Tape, Var};
use crate::error::{Error, Result};

/// Distillation defaults: equal soft/hard mix at unit temperature.
pub const DEFAULT_ALPHA: f64 = 0.5;
pub const DEFAULT_TEMPERATURE: f64 = 1.0;

/// `alpha * BCE(s, sigmoid(t / T)) + (1 - alpha) * BCE(s, y)`, averaged over
/// the batch.
///
/// Teacher logits enter as plain numbers, so no gradient can reach the
/// teacher's parameters.
pub fn distill_loss(
    tape: &mut Tape<'_>,
    student_logits: Var,
    teacher_logits: &[f64],
    labels: &[f64],
    alpha: f64,
    temperature: f64,
) -> Result<Var> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("distillation alpha must be in [0, 1], got {alpha}")));
    }
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::Config(format!(
            "distillation temperature must be positive, got {temperature}"
        )));
    }
    if let Some(y) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
        return Err(Error::Data(format!("hard label must be 0 or 1, got {y}")));
    }
    let n = tape.value(student_logits).len();
    if teacher_logits.len() != n {
        return Err(Error::Dimension {
            op: "distill_loss",
            lhs: vec![n],
            rhs: vec![teacher_logits.len()],
        });
    }
    let soft: Vec<f64> = teacher_logits.iter().map(|&t| sigmoid(t / temperature)).collect();
    let ones = vec![1.0; n];
    let soft_loss = tape.bce_with_logits(student_logits, &soft, &ones, n as f64)?;
    let hard_loss = tape.bce_with_logits(student_logits, labels, &ones, n as f64)?;
    let a = tape.scale(soft_loss, alpha);
    let b = tape.scale(hard_loss, 1.0 - alpha);
    tape.add(a, b)
}
