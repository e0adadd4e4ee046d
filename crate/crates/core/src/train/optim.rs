//! Parameter-space optimizers over the encoder's named blocks.

use crate::encoder::EncoderParams;
use crate::numerics::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerKind {
    pub fn lr(&self) -> f64 {
        match self {
            OptimizerKind::Sgd { lr } => *lr,
            OptimizerKind::Adam { lr, .. } => *lr,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.lr() <= 0.0 {
            return Err(format!("learning rate must be positive, got {}", self.lr()));
        }
        Ok(())
    }
}

/// First/second-moment buffers aligned with the block order of
/// [`EncoderParams::named_blocks`].
#[derive(Debug, Clone)]
pub struct OptimizerState {
    kind: OptimizerKind,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, params: &EncoderParams) -> OptimizerState {
        let zeros: Vec<Tensor> = params
            .named_blocks()
            .iter()
            .map(|(_, t)| Tensor::zeros(t.shape()))
            .collect();
        OptimizerState {
            kind,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Apply one update. `grads` must align with the named block order.
    pub fn step(&mut self, params: &mut EncoderParams, grads: &[Tensor]) {
        self.t += 1;
        match self.kind {
            OptimizerKind::Sgd { lr } => {
                for ((_, block), grad) in params.named_blocks_mut().into_iter().zip(grads) {
                    for (p, g) in block.data_mut().iter_mut().zip(grad.data()) {
                        *p -= lr * g;
                    }
                }
            }
            OptimizerKind::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => {
                let bc1 = 1.0 - beta1.powi(self.t as i32);
                let bc2 = 1.0 - beta2.powi(self.t as i32);
                for (i, ((_, block), grad)) in
                    params.named_blocks_mut().into_iter().zip(grads).enumerate()
                {
                    let m = self.m[i].data_mut();
                    let v = self.v[i].data_mut();
                    for (k, (p, g)) in block.data_mut().iter_mut().zip(grad.data()).enumerate() {
                        m[k] = beta1 * m[k] + (1.0 - beta1) * g;
                        v[k] = beta2 * v[k] + (1.0 - beta2) * g * g;
                        let m_hat = m[k] / bc1;
                        let v_hat = v[k] / bc2;
                        *p -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
    }
}
