//! Rotary position embedding with fractional indices, and the diagonal
//! text/speech index assignment.

use crate::tensor::Tensor;

/// Position indices for a concatenated text + speech sequence. Text tokens
/// get integers 0..n_text-1; speech token k gets k * n_text / n_speech, so
/// both spans cover the same index range and attention starts out diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct PositionIndexing {
    pub text_indices: Vec<f64>,
    pub speech_indices: Vec<f64>,
    pub n_text: usize,
    pub n_speech: usize,
}

impl PositionIndexing {
    /// All indices in sequence order (text then speech).
    pub fn combined(&self) -> Vec<f64> {
        let mut out = self.text_indices.clone();
        out.extend_from_slice(&self.speech_indices);
        out
    }
}

pub fn assign_position_indices(n_text: usize, n_speech: usize) -> PositionIndexing {
    assert!(n_text >= 1, "n_text must be positive");
    assert!(n_speech >= 1, "n_speech must be positive");
    let text_indices = (0..n_text).map(|i| i as f64).collect();
    let step = n_text as f64 / n_speech as f64;
    let speech_indices = (0..n_speech).map(|k| k as f64 * step).collect();
    PositionIndexing { text_indices, speech_indices, n_text, n_speech }
}

/// Rotate each adjacent feature pair `(2k, 2k+1)` of the last axis by
/// `index * base^(-2k/d)`. `vectors` is `[.., seq, d]` with one index per
/// position along the second-to-last axis; d must be even. Indices may be
/// fractional. Per-position L2 norms are preserved.
pub fn rope_apply(vectors: &Tensor, indices: &[f64], base: f64) -> Tensor {
    let rank = vectors.rank();
    assert!(rank >= 2, "rope needs [.., seq, d], got {:?}", vectors.shape());
    let d = vectors.shape()[rank - 1];
    assert!(d % 2 == 0, "rope feature dimension must be even, got {d}");
    let seq = vectors.shape()[rank - 2];
    assert_eq!(indices.len(), seq, "one index per sequence position");

    let freqs: Vec<f64> = (0..d / 2)
        .map(|k| base.powf(-2.0 * k as f64 / d as f64))
        .collect();

    let mut out = vectors.data().to_vec();
    let batch = out.len() / (seq * d);
    for b in 0..batch {
        for (p, &idx) in indices.iter().enumerate() {
            let row = &mut out[(b * seq + p) * d..(b * seq + p + 1) * d];
            for (k, &f) in freqs.iter().enumerate() {
                let angle = idx * f;
                let (sin, cos) = angle.sin_cos();
                let x = row[2 * k];
                let y = row[2 * k + 1];
                row[2 * k] = x * cos - y * sin;
                row[2 * k + 1] = x * sin + y * cos;
            }
        }
    }
    Tensor::new(vectors.shape().to_vec(), out)
}

/// Sinusoidal features of a scalar time in [0, 1]: interleaved sin/cos over
/// a geometric frequency ladder. `dim` must be even.
pub fn time_embedding(t: f64, dim: usize) -> Vec<f64> {
    assert!(dim >= 2 && dim % 2 == 0, "time embedding dim must be even");
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for k in 0..half {
        let freq = 1000.0_f64.powf(k as f64 / half as f64);
        let angle = t * freq;
        out.push(angle.sin());
        out.push(angle.cos());
    }
    out
}
