//! First-order optimizers over flat parameter vectors.
//!
//! Both optimizers *ascend*: the gradient passed in is the gradient of the
//! objective to maximize.

use serde::{Deserialize, Serialize};

use crate::error::{BndlError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    SgdMomentum,
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::SgdMomentum => "sgd_momentum",
        }
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = BndlError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd_momentum" | "sgd" => Ok(OptimizerKind::SgdMomentum),
            other => Err(BndlError::Config(format!("unknown optimizer `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            momentum: 0.9,
            weight_decay: 0.0,
        }
    }
}

/// Moment accumulators laid out like the parameter vector.
///
/// For SGD with momentum only `first` (the velocity) is used.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

impl OptimizerState {
    pub fn new(n_params: usize) -> Self {
        Self {
            step: 0,
            first: vec![0.0; n_params],
            second: vec![0.0; n_params],
        }
    }

    /// One ascent step. `block_name` maps a flat index to the name reported
    /// when a gradient entry is not finite; nothing is modified in that case.
    pub fn apply(
        &mut self,
        params: &mut [f64],
        grad: &[f64],
        cfg: &OptimizerConfig,
        block_name: impl Fn(usize) -> &'static str,
    ) -> Result<()> {
        if params.len() != grad.len() || params.len() != self.first.len() {
            return Err(BndlError::Shape(format!(
                "optimizer sizes differ: params {}, grad {}, state {}",
                params.len(),
                grad.len(),
                self.first.len()
            )));
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(BndlError::NonFinite {
                block: block_name(i),
                index: i,
            });
        }
        self.step += 1;
        let lr = cfg.learning_rate;
        match cfg.kind {
            OptimizerKind::Adam => {
                let t = self.step as i32;
                let bc1 = 1.0 - cfg.beta1.powi(t);
                let bc2 = 1.0 - cfg.beta2.powi(t);
                for i in 0..params.len() {
                    let g = grad[i] - cfg.weight_decay * params[i];
                    self.first[i] = cfg.beta1 * self.first[i] + (1.0 - cfg.beta1) * g;
                    self.second[i] = cfg.beta2 * self.second[i] + (1.0 - cfg.beta2) * g * g;
                    let m_hat = self.first[i] / bc1;
                    let v_hat = self.second[i] / bc2;
                    params[i] += lr * m_hat / (v_hat.sqrt() + cfg.eps);
                }
            }
            OptimizerKind::SgdMomentum => {
                for i in 0..params.len() {
                    let g = grad[i] - cfg.weight_decay * params[i];
                    self.first[i] = cfg.momentum * self.first[i] + g;
                    params[i] += lr * self.first[i];
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![1.0, -2.0, 0.5];
        let mut st = OptimizerState::new(3);
        st.apply(&mut p, &[0.0; 3], &OptimizerConfig::default(), |_| "x")
            .unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn first_adam_step_is_lr_times_sign() {
        let cfg = OptimizerConfig::default();
        let mut p = vec![0.0; 3];
        let mut st = OptimizerState::new(3);
        st.apply(&mut p, &[0.5, -3.0, 2e-3], &cfg, |_| "x").unwrap();
        // m̂ = g, v̂ = g², so the step is lr·g/(|g| + eps)
        for (v, g) in p.iter().zip([0.5f64, -3.0, 2e-3]) {
            let expect = cfg.learning_rate * g / (g.abs() + cfg.eps);
            assert!((v - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn non_finite_gradient_names_block() {
        let mut p = vec![0.0; 4];
        let mut st = OptimizerState::new(4);
        let err = st
            .apply(
                &mut p,
                &[0.0, 0.0, f64::NAN, 0.0],
                &OptimizerConfig::default(),
                |i| if i < 2 { "W_k" } else { "W2" },
            )
            .unwrap_err();
        match err {
            BndlError::NonFinite { block, index } => {
                assert_eq!(block, "W2");
                assert_eq!(index, 2);
            }
            e => panic!("unexpected {e}"),
        }
        assert_eq!(st.step, 0);
    }

    #[test]
    fn adam_climbs_quadratic_monotonically() {
        // maximize -(x - 3)^2
        let cfg = OptimizerConfig {
            learning_rate: 0.05,
            ..Default::default()
        };
        let mut x = vec![0.0];
        let mut st = OptimizerState::new(1);
        let mut last_dist = 3.0;
        for _ in 0..100 {
            let g = -2.0 * (x[0] - 3.0);
            st.apply(&mut x, &[g], &cfg, |_| "x").unwrap();
            let dist = (x[0] - 3.0f64).abs();
            assert!(dist <= last_dist + 1e-12, "diverged: {dist} > {last_dist}");
            last_dist = dist;
        }
        assert!(last_dist < 0.5);
    }

    #[test]
    fn sgd_momentum_ascends() {
        let cfg = OptimizerConfig {
            kind: OptimizerKind::SgdMomentum,
            learning_rate: 0.01,
            ..Default::default()
        };
        let mut x = vec![0.0];
        let mut st = OptimizerState::new(1);
        for _ in 0..500 {
            let g = -2.0 * (x[0] - 3.0);
            st.apply(&mut x, &[g], &cfg, |_| "x").unwrap();
        }
        assert!((x[0] - 3.0).abs() < 1e-3);
    }
}
