//! Finite-difference check of a small two-layer network built on the tape.
//!
//! cargo run --example gradient_check

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slate_rank::diffcore::gradcheck::{check_inputs, DEFAULT_STEP};
use slate_rank::diffcore::nn::linear;
use slate_rank::diffcore::Tensor;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn main() -> slate_rank::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let inputs = [
        random(&mut rng, &[4, 5]),
        random(&mut rng, &[5, 3]),
        random(&mut rng, &[3]),
        random(&mut rng, &[3, 1]),
        random(&mut rng, &[1]),
    ];
    let labels = [1.0, 0.0, 0.0, 1.0];
    let report = check_inputs(
        &inputs,
        |t, v| {
            let h = linear(t, v[0], v[1], v[2])?;
            let h = t.tanh(h);
            let logit = linear(t, h, v[3], v[4])?;
            t.bce_with_logits(logit, &labels, &[1.0; 4], 4.0)
        },
        DEFAULT_STEP,
    )?;
    println!(
        "checked {} entries: max relative error {:.2e}, max absolute error {:.2e} (worst {})",
        report.checked, report.max_rel_err, report.max_abs_err, report.worst
    );
    Ok(())
}
