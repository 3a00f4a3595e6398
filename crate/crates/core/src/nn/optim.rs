use serde::{Deserialize, Serialize};

use super::{ParamStore, Tensor2};
use crate::error::{Error, Result};

fn check_grads(store: &ParamStore) -> Result<()> {
    for id in store.ids() {
        if !store.grad(id).all_finite() {
            return Err(Error::NonFinite(format!(
                "gradient of `{}`",
                store.name(id)
            )));
        }
    }
    Ok(())
}

/// `θ ← θ − lr·(g + weight_decay·θ)`, then zeroes the gradients.
pub fn sgd_step(store: &mut ParamStore, lr: f64, weight_decay: f64) -> Result<()> {
    if !(lr >= 0.0 && lr.is_finite()) || !(weight_decay >= 0.0 && weight_decay.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "learning rate {lr} and weight decay {weight_decay} must be finite and non-negative"
        )));
    }
    check_grads(store)?;
    for id in store.ids().collect::<Vec<_>>() {
        let grad = store.grad(id).data().to_vec();
        for (w, g) in store.value_mut(id).data_mut().iter_mut().zip(grad) {
            *w -= lr * (g + weight_decay * *w);
        }
    }
    store.zero_grads();
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::Config(format!("unknown optimizer `{other}`"))),
        }
    }
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Tensor2>,
    v: Vec<Tensor2>,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        let zeros = || {
            store
                .values()
                .iter()
                .map(|t| Tensor2::zeros(t.rows(), t.cols()))
                .collect::<Vec<_>>()
        };
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, lr: f64, weight_decay: f64) -> Result<()> {
        check_grads(store)?;
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for id in store.ids().collect::<Vec<_>>() {
            let grad = store.grad(id).data().to_vec();
            let (m, v) = (self.m[id.0].data_mut(), self.v[id.0].data_mut());
            for (k, (w, g)) in store
                .value_mut(id)
                .data_mut()
                .iter_mut()
                .zip(grad)
                .enumerate()
            {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                let update = (m[k] / c1) / ((v[k] / c2).sqrt() + self.eps);
                *w -= lr * (update + weight_decay * *w);
            }
        }
        store.zero_grads();
        Ok(())
    }
}

/// Optimizer state chosen by [`OptimizerKind`].
#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd,
    Adam(Adam),
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, store: &ParamStore) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(store)),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, lr: f64, weight_decay: f64) -> Result<()> {
        match self {
            Optimizer::Sgd => sgd_step(store, lr, weight_decay),
            Optimizer::Adam(adam) => adam.step(store, lr, weight_decay),
        }
    }
}
