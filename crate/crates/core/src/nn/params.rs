use rand::Rng;

use super::Tensor2;
use crate::error::{Error, Result};

/// Handle into a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Named parameters with same-shape gradient buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor2>,
    grads: Vec<Tensor2>,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor2) -> Result<ParamId> {
        let name = name.into();
        if self.names.contains(&name) {
            return Err(Error::InvalidArgument(format!(
                "duplicate parameter name `{name}`"
            )));
        }
        let (r, c) = value.shape();
        self.names.push(name);
        self.values.push(value);
        self.grads.push(Tensor2::zeros(r, c));
        Ok(ParamId(self.values.len() - 1))
    }

    /// Adds a parameter drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn add_uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        fan_in: usize,
        rng: &mut R,
    ) -> Result<ParamId> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        self.add(name, Tensor2::from_vec(rows, cols, data)?)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    #[inline]
    pub fn value(&self, id: ParamId) -> &Tensor2 {
        &self.values[id.0]
    }

    #[inline]
    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor2 {
        &mut self.values[id.0]
    }

    #[inline]
    pub fn grad(&self, id: ParamId) -> &Tensor2 {
        &self.grads[id.0]
    }

    #[inline]
    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor2 {
        &mut self.grads[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn values(&self) -> &[Tensor2] {
        &self.values
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| g.fill(0.0));
    }

    /// Empty gradient buffer shaped like this store.
    pub fn grad_buffer(&self) -> GradBuffer {
        GradBuffer {
            grads: self
                .values
                .iter()
                .map(|v| Tensor2::zeros(v.rows(), v.cols()))
                .collect(),
        }
    }

    /// Adds `buf * k` into the store's gradients.
    pub fn accumulate(&mut self, buf: &GradBuffer, k: f64) {
        for (g, b) in self.grads.iter_mut().zip(&buf.grads) {
            for (x, y) in g.data_mut().iter_mut().zip(b.data()) {
                *x += k * y;
            }
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.grads.iter().map(Tensor2::norm_sq).sum::<f64>().sqrt()
    }

    /// Rescales gradients so their global L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm.is_finite() {
            let k = max_norm / norm;
            self.grads.iter_mut().for_each(|g| g.scale(k));
        }
        norm
    }

    /// Replaces all values, keeping names and shapes.
    pub fn load_values(&mut self, values: Vec<Tensor2>) -> Result<()> {
        if values.len() != self.values.len()
            || values
                .iter()
                .zip(&self.values)
                .any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::ShapeMismatch(
                "parameter set does not match store layout".into(),
            ));
        }
        self.values = values;
        Ok(())
    }
}

/// Gradients for one computation, parallel to a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradBuffer {
    grads: Vec<Tensor2>,
}

impl GradBuffer {
    #[inline]
    pub fn get(&self, id: ParamId) -> &Tensor2 {
        &self.grads[id.0]
    }

    #[inline]
    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor2 {
        &mut self.grads[id.0]
    }

    pub fn add_assign(&mut self, other: &GradBuffer) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.grads.iter_mut().for_each(|g| g.scale(k));
    }

    pub fn tensors(&self) -> &[Tensor2] {
        &self.grads
    }
}
