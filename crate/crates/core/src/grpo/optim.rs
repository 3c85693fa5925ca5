use serde::{Deserialize, Serialize};

use crate::policy::PolicyParams;

/// Update rule shared by supervised and reinforcement training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    /// Plain gradient step.
    Sgd,
    /// Adaptive moments with bias correction.
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_eps() -> f64 {
    1e-8
}

impl OptimizerConfig {
    pub fn adam() -> Self {
        OptimizerConfig::Adam {
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

/// Moment estimates carried between steps.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    pub t: u64,
    pub moments: Option<(PolicyParams, PolicyParams)>,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig) -> Self {
        OptimizerState {
            config,
            t: 0,
            moments: None,
        }
    }

    /// Moves `params` along `grad` (ascent when `ascend`, else descent).
    pub fn apply(&mut self, params: &mut PolicyParams, grad: &PolicyParams, lr: f64, ascend: bool) {
        let sign = if ascend { 1.0 } else { -1.0 };
        self.t += 1;
        match self.config {
            OptimizerConfig::Sgd => params.axpy(sign * lr, grad),
            OptimizerConfig::Adam { beta1, beta2, eps } => {
                let (m, v) = self.moments.get_or_insert_with(|| {
                    (
                        PolicyParams::zeros(grad.shape()),
                        PolicyParams::zeros(grad.shape()),
                    )
                });
                let c1 = 1.0 - beta1.powi(self.t as i32);
                let c2 = 1.0 - beta2.powi(self.t as i32);
                let p = params.as_mut_slice();
                let (m, v) = (m.as_mut_slice(), v.as_mut_slice());
                for (i, g) in grad.as_slice().iter().enumerate() {
                    m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                    v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                    p[i] += sign * lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                }
            }
        }
    }
}
