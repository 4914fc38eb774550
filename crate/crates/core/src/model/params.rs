use indexmap::IndexMap;
use ndarray::{ArrayView2, ArrayViewMut2};
use rand::Rng as _;

use super::real::Real;
use crate::{Error, Result};

/// Dense row-major tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<F> {
    pub shape: Vec<usize>,
    pub data: Vec<F>,
}

impl<F: Real> Tensor<F> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![F::zero(); shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: F) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<F>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "tensor of shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Glorot-uniform init, `fan_in`/`fan_out` taken from a conv/dense shape
    /// `(out, in, k...)`.
    pub fn glorot(shape: &[usize], rng: &mut crate::Rng) -> Self {
        let receptive: usize = shape[2..].iter().product::<usize>().max(1);
        let fan_in = shape[1] * receptive;
        let fan_out = shape[0] * receptive;
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| F::lit(rng.random_range(-bound..bound)))
            .collect();
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// View as `(shape[0], rest)`.
    pub fn as_matrix(&self) -> ArrayView2<'_, F> {
        let rows = self.shape.first().copied().unwrap_or(1);
        ArrayView2::from_shape((rows, self.data.len() / rows.max(1)), &self.data)
            .expect("tensor matrix view")
    }

    pub fn as_matrix_mut(&mut self) -> ArrayViewMut2<'_, F> {
        let rows = self.shape.first().copied().unwrap_or(1);
        let cols = self.data.len() / rows.max(1);
        ArrayViewMut2::from_shape((rows, cols), &mut self.data).expect("tensor matrix view")
    }

    pub fn cast<G: Real>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| G::lit(v.as_f64())).collect(),
        }
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64() * v.as_f64()).sum()
    }
}

/// Named, ordered collection of weight tensors.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamSet<F> {
    tensors: IndexMap<String, Tensor<F>>,
}

impl<F: Real> ParamSet<F> {
    pub fn new() -> Self {
        Self {
            tensors: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<F>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> &Tensor<F> {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter tensor {name}"))
    }

    pub fn try_get(&self, name: &str) -> Option<&Tensor<F>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor<F> {
        self.tensors
            .get_mut(name)
            .unwrap_or_else(|| panic!("missing parameter tensor {name}"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<F>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<F>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Zeroed tensors with the shapes of every trainable tensor.
    pub fn zeros_like_trainable(&self) -> Self {
        let mut out = Self::new();
        for (name, t) in &self.tensors {
            if is_trainable(name) {
                out.insert(name.clone(), Tensor::zeros(&t.shape));
            }
        }
        out
    }

    pub fn cast<G: Real>(&self) -> ParamSet<G> {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Accumulate `grad` into the tensor `name` (created on first use).
    pub fn accumulate(&mut self, name: &str, shape: &[usize], grad: &[F]) {
        let t = self
            .tensors
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(shape));
        for (a, g) in t.data.iter_mut().zip(grad) {
            *a += *g;
        }
    }

    pub fn n_values(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }
}

/// Batch-norm running statistics are state, not trainable weights.
pub fn is_trainable(name: &str) -> bool {
    !(name.ends_with(".mean") || name.ends_with(".var"))
}
