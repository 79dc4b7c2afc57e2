//! Finite-difference verification of reverse-mode gradients.

use std::collections::HashMap;

use crate::error::{Error, Result};

use super::params::{ParamId, ParamSet};
use super::rng::Rng;
use super::tape::{NodeId, Tape};
use super::tensor::Tensor;

/// Compares the reverse-mode gradient of a scalar function against central
/// finite differences and returns the max relative error over the checked
/// coordinates: `|g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|)`.
///
/// `f` must be deterministic (any dropout masks frozen by the caller); a
/// second forward evaluation is compared bit-for-bit to enforce this. At
/// most `max_coords` coordinates per parameter are sampled.
pub fn grad_check<F>(
    pset: &mut ParamSet,
    ids: &[ParamId],
    f: F,
    epsilon: f64,
    max_coords: usize,
    rng: &mut Rng,
) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamSet) -> Result<NodeId>,
{
    let eval = |pset: &ParamSet| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = f(&mut tape, pset)?;
        if tape.value(loss).numel() != 1 {
            return Err(Error::invalid("grad_check", "f must produce a scalar"));
        }
        Ok(tape.value(loss).item())
    };

    let v1 = eval(pset)?;
    let v2 = eval(pset)?;
    if v1.to_bits() != v2.to_bits() {
        return Err(Error::invalid(
            "grad_check",
            "f is not deterministic (freeze dropout masks and other randomness)",
        ));
    }

    // One reverse-mode pass collecting per-parameter gradients.
    let mut tape = Tape::new();
    let loss = f(&mut tape, pset)?;
    let grads = tape.backward(loss)?;
    let mut by_param: HashMap<ParamId, Tensor> = HashMap::new();
    // Pull gradients through a scratch copy so the caller's accumulated
    // grads are untouched.
    let mut scratch = pset.clone();
    scratch.zero_grad();
    grads.accumulate_into(&tape, &mut scratch);
    for &id in ids {
        by_param.insert(id, scratch.get(id).grad.clone());
    }

    let mut max_rel: f64 = 0.0;
    for &id in ids {
        let n = pset.get(id).value.numel();
        let coords: Vec<usize> = if n <= max_coords {
            (0..n).collect()
        } else {
            (0..max_coords).map(|_| rng.uniform_usize(n)).collect()
        };
        for ci in coords {
            let orig = pset.get(id).value.data()[ci];
            pset.get_mut(id).value.data_mut()[ci] = orig + epsilon;
            let fp = eval(pset)?;
            pset.get_mut(id).value.data_mut()[ci] = orig - epsilon;
            let fm = eval(pset)?;
            pset.get_mut(id).value.data_mut()[ci] = orig;

            let fd = (fp - fm) / (2.0 * epsilon);
            let ad = by_param[&id].data()[ci];
            let rel = (ad - fd).abs() / (1e-8f64).max(ad.abs() + fd.abs());
            max_rel = max_rel.max(rel);
        }
    }
    Ok(max_rel)
}
