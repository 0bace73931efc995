use serde::{Deserialize, Serialize};

use crate::nn::{Grads, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// First-order optimizer over the flat parameter vector.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd { lr: f64 },
    Adam { lr: f64, step: u64, m: Vec<f64>, v: Vec<f64> },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, n_params: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd { lr },
            OptimizerKind::Adam => Optimizer::Adam {
                lr,
                step: 0,
                m: vec![0.0; n_params],
                v: vec![0.0; n_params],
            },
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &Grads) {
        let p = params.data_mut();
        let g = grads.data();
        match self {
            Optimizer::Sgd { lr } => {
                for (pi, gi) in p.iter_mut().zip(g) {
                    *pi -= *lr * gi;
                }
            }
            Optimizer::Adam { lr, step, m, v } => {
                *step += 1;
                let bc1 = 1.0 - BETA1.powi(*step as i32);
                let bc2 = 1.0 - BETA2.powi(*step as i32);
                for i in 0..p.len() {
                    m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
                    v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
                    let mh = m[i] / bc1;
                    let vh = v[i] / bc2;
                    p[i] -= *lr * mh / (vh.sqrt() + EPS);
                }
            }
        }
    }
}
