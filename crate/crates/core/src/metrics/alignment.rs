use std::fmt::Write as _;

use crate::data::{Batch, FeatureVocab, SlateSample};
use crate::diffcore::Tape;
use crate::error::{Error, Result};
use crate::models::Model;

pub const EMBEDDING_EXPORT_SOURCES: [&str; 2] = ["user_enc", "slate_enc"];

/// How closely the user encoder tracks the slate encoder.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AlignmentStats {
    /// Mean Euclidean distance `|l_u - l_s|`.
    pub mean_distance: f64,
    pub mean_cosine: f64,
    pub n: usize,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        // two zero vectors coincide; a zero and a non-zero vector share nothing
        return if a == b { 1.0 } else { 0.0 };
    }
    dot / (na * nb)
}

/// Computes `l_u` and `l_s` for every sample through the training graph.
///
/// When `export` is given, appends a CSV with one `user_enc` and one
/// `slate_enc` row per sample: `sample_id,source,dim_0,..`. The sample id is
/// the position in `samples`.
pub fn alignment_stats(
    model: &Model,
    samples: &[SlateSample],
    vocab: &FeatureVocab,
    batch_size: usize,
    mut export: Option<&mut String>,
) -> Result<AlignmentStats> {
    if !model.spec.is_sar() {
        return Err(Error::Usage("alignment statistics need a slate-aware model".into()));
    }
    if samples.is_empty() || batch_size == 0 {
        return Err(Error::Usage("alignment statistics over no samples".into()));
    }
    let dim = model.spec.dim;
    if let Some(out) = export.as_deref_mut() {
        out.push_str("sample_id,source");
        for j in 0..dim {
            let _ = write!(out, ",dim_{j}");
        }
        out.push('\n');
    }
    let (mut dist, mut cos) = (0.0, 0.0);
    let mut id = 0usize;
    for chunk in samples.chunks(batch_size) {
        let batch = Batch::from_samples(chunk, vocab, model.slate_size)?;
        let mut tape = Tape::new();
        let out = model.forward_train(&mut tape, &batch)?;
        let (lu, ls) = (out.l_u.expect("sar model"), out.l_s.expect("sar model"));
        for (u, s) in tape.value(lu).chunks_exact(dim).zip(tape.value(ls).chunks_exact(dim)) {
            dist += u.iter().zip(s).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            cos += cosine(u, s);
            if let Some(buf) = export.as_deref_mut() {
                for (src, v) in EMBEDDING_EXPORT_SOURCES.iter().zip([u, s]) {
                    let _ = write!(buf, "{id},{src}");
                    for x in v {
                        let _ = write!(buf, ",{x}");
                    }
                    buf.push('\n');
                }
            }
            id += 1;
        }
    }
    let n = samples.len() as f64;
    Ok(AlignmentStats {
        mean_distance: dist / n,
        mean_cosine: cos / n,
        n: samples.len(),
    })
}
