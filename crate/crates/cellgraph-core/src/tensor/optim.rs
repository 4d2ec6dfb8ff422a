//! First-order optimizers over named parameter sets.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{ParamSet, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam_default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// SGD or bias-corrected Adam; moment buffers are allocated lazily and
/// always match parameter shapes.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Optimizer {
            kind,
            lr,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn sgd(lr: f64) -> Self {
        Self::new(OptimizerKind::Sgd, lr)
    }

    pub fn adam(lr: f64) -> Self {
        Self::new(OptimizerKind::adam_default(), lr)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update in place. Every parameter must have a gradient
    /// of identical shape.
    pub fn step(&mut self, params: &mut ParamSet, grads: &BTreeMap<String, Tensor>) -> Result<()> {
        self.step += 1;
        for (name, p) in params.iter_mut() {
            let g = grads
                .get(name)
                .ok_or_else(|| Error::Config(format!("missing gradient for `{name}`")))?;
            if g.shape() != p.shape() {
                return Err(Error::ShapeMismatch {
                    op: "optimizer_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            match self.kind {
                OptimizerKind::Sgd => {
                    for (pv, &gv) in p.values_mut().iter_mut().zip(g.values()) {
                        *pv -= self.lr * gv;
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let (m, v) = self
                        .moments
                        .entry(name.to_string())
                        .or_insert_with(|| (vec![0.0; g.numel()], vec![0.0; g.numel()]));
                    let bc1 = 1.0 - beta1.powi(self.step as i32);
                    let bc2 = 1.0 - beta2.powi(self.step as i32);
                    for ((pv, &gv), (mv, vv)) in p
                        .values_mut()
                        .iter_mut()
                        .zip(g.values())
                        .zip(m.iter_mut().zip(v.iter_mut()))
                    {
                        *mv = beta1 * *mv + (1.0 - beta1) * gv;
                        *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                        let m_hat = *mv / bc1;
                        let v_hat = *vv / bc2;
                        *pv -= self.lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
