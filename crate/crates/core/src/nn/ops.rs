//! Activations, softmax and the dense layer.

use super::{GradBuffer, ParamId, ParamStore};
use crate::error::{Error, Result};

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Shift-stabilised softmax.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Vector-Jacobian product of softmax: `dv_i = a_i (da_i - sum_j a_j da_j)`.
pub fn softmax_backward(alpha: &[f64], dalpha: &[f64]) -> Vec<f64> {
    let dot: f64 = alpha.iter().zip(dalpha).map(|(a, d)| a * d).sum();
    alpha
        .iter()
        .zip(dalpha)
        .map(|(a, d)| a * (d - dot))
        .collect()
}

/// Fully connected layer `y = W x + b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
}

impl Dense {
    pub fn register<R: rand::Rng>(
        store: &mut ParamStore,
        prefix: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            w: store.add_uniform(format!("{prefix}.w"), outputs, inputs, inputs, rng)?,
            b: store.add_uniform(format!("{prefix}.b"), outputs, 1, inputs, rng)?,
        })
    }

    pub fn forward(&self, store: &ParamStore, x: &[f64]) -> Result<Vec<f64>> {
        let w = store.value(self.w);
        if x.len() != w.cols() {
            return Err(Error::ShapeMismatch(format!(
                "dense layer expects {} inputs, got {}",
                w.cols(),
                x.len()
            )));
        }
        let mut y = w.matvec(x);
        for (o, b) in y.iter_mut().zip(store.value(self.b).data()) {
            *o += b;
        }
        Ok(y)
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub fn backward(
        &self,
        store: &ParamStore,
        x: &[f64],
        dy: &[f64],
        grads: &mut GradBuffer,
    ) -> Vec<f64> {
        grads.get_mut(self.w).add_outer(dy, x);
        for (g, d) in grads.get_mut(self.b).data_mut().iter_mut().zip(dy) {
            *g += d;
        }
        let mut dx = vec![0.0; x.len()];
        store.value(self.w).t_matvec_acc(dy, &mut dx);
        dx
    }
}

/// `tanh` applied elementwise; the backward uses the output.
pub fn tanh_backward(y: &[f64], dy: &[f64]) -> Vec<f64> {
    y.iter().zip(dy).map(|(y, d)| d * (1.0 - y * y)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn softmax_closed_form() {
        let a = softmax(&[2f64.ln(), 0.0]);
        assert!((a[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((a[1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(softmax(&[4.2]), vec![1.0]);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert!((sigmoid(0.3) + sigmoid(-0.3) - 1.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_ignores_shifts(
            v in prop::collection::vec(-30.0f64..30.0, 1..20),
            shift in -100.0f64..100.0,
        ) {
            let a = softmax(&v);
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let shifted: Vec<f64> = v.iter().map(|x| x + shift).collect();
            let b = softmax(&shifted);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
