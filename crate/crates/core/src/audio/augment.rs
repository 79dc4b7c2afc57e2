//! Training-time feature augmentation: SpecAugment-style masking and
//! mixup of feature/label pairs.

use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};

use super::logmel::LogMel;

/// Masks exactly `n_time_masks` time stripes and `n_freq_masks` mel
/// stripes with the per-utterance mean value; every other entry is
/// bit-identical to the input. Stripe widths are drawn uniformly from
/// `1..=max_*` and may overlap.
pub fn spec_augment(
    x: &LogMel,
    rng: &mut Rng,
    n_time_masks: usize,
    max_time_w: usize,
    n_freq_masks: usize,
    max_freq_w: usize,
) -> Result<LogMel> {
    let (t, m) = (x.n_frames(), x.n_mels());
    if n_time_masks > 0 && (max_time_w == 0 || max_time_w > t) {
        return Err(Error::invalid("spec_augment", format!("time mask width {max_time_w} vs {t} frames")));
    }
    if n_freq_masks > 0 && (max_freq_w == 0 || max_freq_w > m) {
        return Err(Error::invalid("spec_augment", format!("freq mask width {max_freq_w} vs {m} mels")));
    }
    let mean = x.frames.data().iter().sum::<f64>() / x.frames.numel() as f64;
    let mut out = x.frames.clone();
    for _ in 0..n_time_masks {
        let w = 1 + rng.uniform_usize(max_time_w);
        let start = rng.uniform_usize(t - w + 1);
        for ti in start..start + w {
            for mi in 0..m {
                out.data_mut()[ti * m + mi] = mean;
            }
        }
    }
    for _ in 0..n_freq_masks {
        let w = 1 + rng.uniform_usize(max_freq_w);
        let start = rng.uniform_usize(m - w + 1);
        for ti in 0..t {
            for mi in start..start + w {
                out.data_mut()[ti * m + mi] = mean;
            }
        }
    }
    Ok(LogMel { frames: out, params: x.params.clone() })
}

/// Convex combination of two feature/label pairs with lambda drawn from
/// Beta(alpha, alpha). Targets become soft values in [0, 1].
pub fn mixup_batch(
    x1: &Tensor,
    y1: &[f64],
    x2: &Tensor,
    y2: &[f64],
    rng: &mut Rng,
    alpha: f64,
) -> Result<(Tensor, Vec<f64>)> {
    if x1.shape() != x2.shape() {
        return Err(Error::shape("mixup_batch", format!("{:?} vs {:?}", x1.shape(), x2.shape())));
    }
    if y1.len() != y2.len() {
        return Err(Error::shape("mixup_batch", "label lengths differ"));
    }
    if alpha <= 0.0 {
        return Err(Error::invalid("mixup_batch", "alpha must be > 0"));
    }
    let lambda = rng.beta(alpha, alpha);
    Ok(mixup_with_lambda(x1, y1, x2, y2, lambda))
}

/// Mixup with an explicit lambda (used by tests and the sampling wrapper).
pub fn mixup_with_lambda(
    x1: &Tensor,
    y1: &[f64],
    x2: &Tensor,
    y2: &[f64],
    lambda: f64,
) -> (Tensor, Vec<f64>) {
    let data: Vec<f64> = x1
        .data()
        .iter()
        .zip(x2.data())
        .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
        .collect();
    let y: Vec<f64> = y1.iter().zip(y2).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect();
    (Tensor::from_vec(x1.shape().to_vec(), data), y)
}
