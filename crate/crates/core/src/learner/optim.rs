use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Real};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default)]
    pub kind: OptimizerKind,
    #[serde(default = "lr")]
    pub lr: f64,
    #[serde(default = "beta1")]
    pub beta1: f64,
    #[serde(default = "beta2")]
    pub beta2: f64,
    #[serde(default = "eps")]
    pub eps: f64,
}

fn lr() -> f64 {
    1e-4
}

fn beta1() -> f64 {
    0.9
}

fn beta2() -> f64 {
    0.999
}

fn eps() -> f64 {
    1e-8
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr: lr(),
            beta1: beta1(),
            beta2: beta2(),
            eps: eps(),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::Config(
                "optimizer needs lr >= 0, betas in [0, 1) and eps > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Bias-corrected Adam, or plain SGD, over an ordered list of matrices.
#[derive(Clone, Debug)]
pub struct Optimizer<T> {
    pub config: OptimizerConfig,
    m: Vec<Matrix<T>>,
    v: Vec<Matrix<T>>,
    pub steps: u64,
}

impl<T: Real> Optimizer<T> {
    pub fn new(config: OptimizerConfig, shapes: &[(usize, usize)]) -> Self {
        let zeros = |shapes: &[(usize, usize)]| shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect();
        let adam = config.kind == OptimizerKind::Adam;
        Self {
            m: if adam { zeros(shapes) } else { Vec::new() },
            v: if adam { zeros(shapes) } else { Vec::new() },
            config,
            steps: 0,
        }
    }

    /// Apply one update. Returns the index of the first non-finite
    /// gradient, leaving every parameter untouched, if there is one.
    pub fn step(&mut self, params: &mut [&mut Matrix<T>], grads: &[&Matrix<T>]) -> std::result::Result<(), usize> {
        assert_eq!(params.len(), grads.len(), "parameter and gradient lists differ");
        if let Some(bad) = grads.iter().position(|g| !g.is_finite()) {
            return Err(bad);
        }
        self.steps += 1;
        let lr = T::lit(self.config.lr);
        match self.config.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (p, &g) in p.as_mut_slice().iter_mut().zip(g.as_slice()) {
                        *p -= lr * g;
                    }
                }
            }
            OptimizerKind::Adam => {
                let b1 = T::lit(self.config.beta1);
                let b2 = T::lit(self.config.beta2);
                let eps = T::lit(self.config.eps);
                let t = self.steps as i32;
                let c1 = T::one() - T::lit(self.config.beta1.powi(t));
                let c2 = T::one() - T::lit(self.config.beta2.powi(t));
                for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let m = self.m[k].as_mut_slice();
                    let v = self.v[k].as_mut_slice();
                    for (((p, &g), m), v) in p.as_mut_slice().iter_mut().zip(g.as_slice()).zip(m).zip(v) {
                        *m = b1 * *m + (T::one() - b1) * g;
                        *v = b2 * *v + (T::one() - b2) * g * g;
                        let m_hat = *m / c1;
                        let v_hat = *v / c2;
                        *p -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
