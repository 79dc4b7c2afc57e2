//! Named trainable parameters with accumulated gradients.

use std::collections::HashMap;

use super::rng::Rng;
use super::tensor::{Precision, Tensor};

/// Handle into a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

/// How a parameter is filled at registration time.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    Const(f64),
    /// Uniform in (-bound, bound).
    Uniform(f64),
    /// Uniform with bound sqrt(1 / fan_in).
    FanIn(usize),
}

/// Ordered set of parameters. Registration order is the checkpoint
/// manifest order; initialization draws are keyed by (seed, name) so the
/// values of a parameter do not depend on which other parameters exist.
#[derive(Debug, Clone)]
pub struct ParamSet {
    seed: u64,
    prec: Precision,
    entries: Vec<Parameter>,
    index: HashMap<String, ParamId>,
}

impl ParamSet {
    pub fn new(seed: u64) -> ParamSet {
        ParamSet { seed, prec: Precision::Double, entries: Vec::new(), index: HashMap::new() }
    }

    pub fn with_precision(mut self, prec: Precision) -> ParamSet {
        self.prec = prec;
        self
    }

    pub fn precision(&self) -> Precision {
        self.prec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn register(&mut self, name: &str, shape: Vec<usize>, init: Init) -> ParamId {
        assert!(!self.index.contains_key(name), "duplicate parameter name {name}");
        let n: usize = shape.iter().product();
        let mut rng = Rng::for_name(self.seed, name);
        let data: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Const(c) => vec![c; n],
            Init::Uniform(b) => (0..n).map(|_| rng.uniform_range(-b, b)).collect(),
            Init::FanIn(fan) => {
                let b = (1.0 / fan as f64).sqrt();
                (0..n).map(|_| rng.uniform_range(-b, b)).collect()
            }
        };
        let value = Tensor::from_vec(shape.clone(), data).with_precision(self.prec);
        let grad = Tensor::zeros(shape);
        let id = ParamId(self.entries.len());
        self.entries.push(Parameter { name: name.to_string(), value, grad });
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar values across all parameters.
    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|p| p.value.numel()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.entries[id.0]
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.entries.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids_with_prefix(&self, prefix: &str) -> Vec<ParamId> {
        self.iter()
            .filter(|(_, p)| p.name.starts_with(prefix))
            .map(|(id, _)| id)
            .collect()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.entries {
            for g in p.grad.data_mut() {
                *g = 0.0;
            }
        }
    }

    /// Adds `grad` into the accumulated gradient of `id`.
    pub fn accumulate_grad(&mut self, id: ParamId, grad: &Tensor) {
        let p = &mut self.entries[id.0];
        assert_eq!(p.grad.shape(), grad.shape(), "gradient shape mismatch for {}", p.name);
        for (g, d) in p.grad.data_mut().iter_mut().zip(grad.data()) {
            *g += d;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_independent_of_registration_order() {
        let mut a = ParamSet::new(5);
        a.register("x", vec![4], Init::Uniform(1.0));
        let xa = a.get(ParamId(0)).value.clone();

        let mut b = ParamSet::new(5);
        b.register("other", vec![32], Init::Uniform(1.0));
        let xb_id = b.register("x", vec![4], Init::Uniform(1.0));
        assert_eq!(xa, b.get(xb_id).value);
    }

    #[test]
    fn zero_grad_resets_exactly() {
        let mut p = ParamSet::new(0);
        let id = p.register("w", vec![3], Init::Ones);
        p.accumulate_grad(id, &Tensor::vector(vec![1.0, 2.0, 3.0]));
        p.accumulate_grad(id, &Tensor::vector(vec![0.5, 0.5, 0.5]));
        assert_eq!(p.get(id).grad.data(), &[1.5, 2.5, 3.5]);
        p.zero_grad();
        assert!(p.get(id).grad.data().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn same_seed_bit_identical_init() {
        let mut a = ParamSet::new(99);
        let mut b = ParamSet::new(99);
        let ia = a.register("w", vec![64], Init::FanIn(64));
        let ib = b.register("w", vec![64], Init::FanIn(64));
        for (x, y) in a.get(ia).value.data().iter().zip(b.get(ib).value.data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}
