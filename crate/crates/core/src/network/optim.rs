use serde::{Deserialize, Serialize};

use crate::error::{precondition, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Momentum,
    Rmsprop,
}

/// `beta2` doubles as the squared-gradient decay for RMSProp.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
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

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::adam(1e-4)
    }
}

impl OptimizerConfig {
    pub fn adam(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate,
            momentum: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn momentum(learning_rate: f64, momentum: f64) -> Self {
        Self {
            kind: OptimizerKind::Momentum,
            momentum,
            ..Self::adam(learning_rate)
        }
    }

    pub fn rmsprop(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Rmsprop,
            beta2: 0.9,
            eps: 1e-10,
            ..Self::adam(learning_rate)
        }
    }

    /// Defaults per kind: Adam 1e-4, Momentum 0.01 / 0.9, RMSProp 1e-4.
    pub fn default_for(kind: OptimizerKind) -> Self {
        match kind {
            OptimizerKind::Adam => Self::adam(1e-4),
            OptimizerKind::Momentum => Self::momentum(0.01, 0.9),
            OptimizerKind::Rmsprop => Self::rmsprop(1e-4),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(precondition("optimizer", format!("learning rate {} must be > 0", self.learning_rate)));
        }
        Ok(())
    }
}

/// Per-tensor optimizer state, indexed like the parameter list.
pub(crate) struct Optimizer {
    cfg: OptimizerConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: i32,
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig, sizes: &[usize]) -> Self {
        Self {
            cfg,
            first: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: &[Vec<f64>]) {
        self.step += 1;
        let c = self.cfg;
        for (t, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let m = &mut self.first[t];
            let v = &mut self.second[t];
            match c.kind {
                OptimizerKind::Adam => {
                    let lr = c.learning_rate * (1.0 - c.beta2.powi(self.step)).sqrt()
                        / (1.0 - c.beta1.powi(self.step));
                    for i in 0..p.len() {
                        m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                        v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                        p[i] -= lr * m[i] / (v[i].sqrt() + c.eps);
                    }
                }
                OptimizerKind::Momentum => {
                    for i in 0..p.len() {
                        m[i] = c.momentum * m[i] + g[i];
                        p[i] -= c.learning_rate * m[i];
                    }
                }
                OptimizerKind::Rmsprop => {
                    for i in 0..p.len() {
                        v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                        p[i] -= c.learning_rate * g[i] / (v[i] + c.eps).sqrt();
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimize(cfg: OptimizerConfig, steps: usize) -> f64 {
        // f(x) = (x - 3)^2
        let mut x = vec![0.0];
        let mut opt = Optimizer::new(cfg, &[1]);
        for _ in 0..steps {
            let g = vec![vec![2.0 * (x[0] - 3.0)]];
            opt.step(vec![&mut x[..]], &g);
        }
        x[0]
    }

    #[test]
    fn all_kinds_descend() {
        assert!((minimize(OptimizerConfig::adam(0.05), 2000) - 3.0).abs() < 1e-3);
        assert!((minimize(OptimizerConfig::momentum(0.01, 0.9), 2000) - 3.0).abs() < 1e-6);
        assert!((minimize(OptimizerConfig::rmsprop(0.01), 2000) - 3.0).abs() < 0.05);
        assert!(OptimizerConfig::adam(0.0).validate().is_err());
    }

    #[test]
    fn first_adam_step_is_learning_rate() {
        let x = minimize(OptimizerConfig::adam(0.1), 1);
        assert!((x - 0.1).abs() < 1e-6);
    }
}
