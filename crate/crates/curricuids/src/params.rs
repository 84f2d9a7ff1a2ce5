//! Named, trainable parameter storage shared by the tape and the optimizer.

use std::collections::BTreeMap;

use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle into a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct Param<S> {
    pub name: String,
    pub value: Tensor<S>,
    pub grad: Tensor<S>,
    pub trainable: bool,
}

/// Ordered collection of parameters keyed by layer-qualified name
/// (e.g. `"gru1.update.w"`). Insertion order is the audit order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<S> {
    params: Vec<Param<S>>,
    by_name: BTreeMap<String, usize>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            by_name: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, name: &str, value: Tensor<S>, trainable: bool) -> ParamId {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter name {name:?}"
        );
        let grad = Tensor::zeros(value.shape());
        let id = ParamId(self.params.len());
        self.by_name.insert(name.to_string(), id.0);
        self.params.push(Param {
            name: name.to_string(),
            value,
            grad,
            trainable,
        });
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<S> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<S> {
        &mut self.params[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<S>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(S::zero());
        }
    }

    /// Total number of scalar elements across all parameters.
    pub fn total_elements(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.is_finite())
    }
}

/// Glorot/Xavier uniform init: +/- sqrt(6/(fan_in+fan_out)).
pub fn glorot_uniform<S: Scalar>(
    rng: &mut SeededRng,
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
) -> Tensor<S> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    random_uniform(rng, shape, limit)
}

/// Simple scaled init for recurrent kernels: +/- 1/sqrt(d_h).
pub fn recurrent_uniform<S: Scalar>(rng: &mut SeededRng, shape: &[usize], d_h: usize) -> Tensor<S> {
    let limit = 1.0 / (d_h as f64).sqrt();
    random_uniform(rng, shape, limit)
}

fn random_uniform<S: Scalar>(rng: &mut SeededRng, shape: &[usize], limit: f64) -> Tensor<S> {
    let numel: usize = shape.iter().product();
    let data = (0..numel)
        .map(|_| S::from_f64_c(crate::rng::uniform(rng, -limit, limit)))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("consistent shape")
}
