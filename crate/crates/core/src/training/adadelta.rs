use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdadeltaConfig {
    pub rho: f64,
    pub eps: f64,
}

impl Default for AdadeltaConfig {
    fn default() -> Self {
        Self { rho: 0.95, eps: 1e-6 }
    }
}

/// Running averages of one parameter tensor.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Accumulators {
    pub sq_grad: Vec<f32>,
    pub sq_delta: Vec<f32>,
}

/// ADADELTA:
///
/// ```text
/// E[g^2]  <- rho E[g^2] + (1 - rho) g^2
/// dx      <- -sqrt(E[dx^2] + eps) / sqrt(E[g^2] + eps) * g
/// E[dx^2] <- rho E[dx^2] + (1 - rho) dx^2
/// x       <- x + dx
/// ```
#[derive(Clone, Debug, Default)]
pub struct Adadelta {
    pub config: AdadeltaConfig,
    state: Vec<Option<Accumulators>>,
}

impl Adadelta {
    pub fn new(config: AdadeltaConfig) -> Self {
        Self {
            config,
            state: Vec::new(),
        }
    }

    pub fn state(&self, id: ParamId) -> Option<&Accumulators> {
        self.state.get(id.index()).and_then(Option::as_ref)
    }

    /// Updates every parameter in `ids` from its gradient buffer.
    pub fn step(&mut self, store: &mut ParamStore, ids: &[ParamId]) -> Result<()> {
        let AdadeltaConfig { rho, eps } = self.config;
        for &id in ids {
            if store.tensor(id).grad.is_none() {
                return Err(Error::InvalidInput {
                    op: "adadelta",
                    reason: format!("parameter {} has no gradient", store.get(id).name),
                });
            }
        }
        for &id in ids {
            if self.state.len() <= id.index() {
                self.state.resize(id.index() + 1, None);
            }
            let tensor = store.tensor_mut(id);
            let n = tensor.numel();
            let acc = self.state[id.index()].get_or_insert_with(|| Accumulators {
                sq_grad: vec![0.0; n],
                sq_delta: vec![0.0; n],
            });
            let grad = tensor.grad.take().expect("checked above");
            let data = tensor.data_mut();
            for i in 0..n {
                let g = grad[i] as f64;
                let eg = rho * acc.sq_grad[i] as f64 + (1.0 - rho) * g * g;
                let dx = -((acc.sq_delta[i] as f64 + eps).sqrt() / (eg + eps).sqrt()) * g;
                let ed = rho * acc.sq_delta[i] as f64 + (1.0 - rho) * dx * dx;
                acc.sq_grad[i] = eg as f32;
                acc.sq_delta[i] = ed as f32;
                data[i] = (data[i] as f64 + dx) as f32;
            }
            tensor.grad = Some(grad);
        }
        Ok(())
    }
}
