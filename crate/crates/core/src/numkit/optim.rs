use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// AdamW hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Learning-rate override for a contiguous slice `[start, end)` of the parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrGroup {
    pub start: usize,
    pub end: usize,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub config: AdamWConfig,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step: u64,
    /// Per-group rates; parameters outside every group use `config.lr`.
    pub lr_groups: Vec<LrGroup>,
}

impl OptimizerState {
    pub fn new(len: usize, config: AdamWConfig) -> Self {
        Self {
            config,
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step: 0,
            lr_groups: Vec::new(),
        }
    }

    pub fn with_lr_groups(mut self, groups: Vec<LrGroup>) -> Self {
        self.lr_groups = groups;
        self
    }

    fn lr_at(&self, i: usize) -> f64 {
        self.lr_groups
            .iter()
            .find(|g| g.start <= i && i < g.end)
            .map_or(self.config.lr, |g| g.lr)
    }
}

/// One decoupled-weight-decay Adam update, in place.
///
/// `p ← p·(1 − lr·wd) − lr · m̂ / (√v̂ + ε)` with bias-corrected moments.
pub fn adamw_step(params: &mut [f64], grads: &[f64], state: &mut OptimizerState) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::LengthMismatch {
            expected: params.len(),
            actual: grads.len(),
            context: "adamw gradients",
        });
    }
    if state.first_moment.len() != params.len() || state.second_moment.len() != params.len() {
        return Err(Error::LengthMismatch {
            expected: params.len(),
            actual: state.first_moment.len(),
            context: "adamw moments",
        });
    }
    state.step += 1;
    let AdamWConfig {
        beta1,
        beta2,
        eps,
        weight_decay,
        ..
    } = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        let m = beta1 * state.first_moment[i] + (1.0 - beta1) * g;
        let v = beta2 * state.second_moment[i] + (1.0 - beta2) * g * g;
        state.first_moment[i] = m;
        state.second_moment[i] = v;
        let lr = state.lr_at(i);
        let m_hat = m / bc1;
        let v_hat = v / bc2;
        params[i] = params[i] * (1.0 - lr * weight_decay) - lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_decay() -> AdamWConfig {
        AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        }
    }

    #[test]
    fn zero_grads_without_decay_leave_params() {
        let mut p = vec![0.3, -1.2, 4.0];
        let mut st = OptimizerState::new(3, no_decay());
        adamw_step(&mut p, &[0.0; 3], &mut st).unwrap();
        assert_eq!(p, vec![0.3, -1.2, 4.0]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let cfg = no_decay();
        let mut p = vec![0.0, 0.0, 0.0];
        let g = [2.5, -0.01, 100.0];
        let mut st = OptimizerState::new(3, cfg);
        adamw_step(&mut p, &g, &mut st).unwrap();
        for (pi, gi) in p.iter().zip(g) {
            // m̂ = g, v̂ = g², so the step is lr·g/(|g|+ε).
            let expected = -cfg.lr * gi / (gi.abs() + cfg.eps);
            assert!((pi - expected).abs() < 1e-15);
            assert!((pi + cfg.lr * gi.signum()).abs() < 1e-9);
        }
    }

    #[test]
    fn decay_scales_params_with_zero_grads() {
        let cfg = AdamWConfig {
            lr: 0.1,
            weight_decay: 0.5,
            ..AdamWConfig::default()
        };
        let mut p = vec![2.0, -4.0];
        let mut st = OptimizerState::new(2, cfg);
        adamw_step(&mut p, &[0.0, 0.0], &mut st).unwrap();
        assert_eq!(p, vec![2.0 * 0.95, -4.0 * 0.95]);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let mut p = vec![0.0; 2];
        let mut st = OptimizerState::new(2, no_decay());
        assert!(adamw_step(&mut p, &[0.0; 3], &mut st).is_err());
    }

    #[test]
    fn lr_groups_override_rate() {
        let mut p = vec![0.0, 0.0];
        let mut st = OptimizerState::new(2, no_decay()).with_lr_groups(vec![LrGroup {
            start: 0,
            end: 1,
            lr: 1e-5,
        }]);
        adamw_step(&mut p, &[1.0, 1.0], &mut st).unwrap();
        assert!((p[0] + 1e-5).abs() < 1e-10);
        assert!((p[1] + 5e-4).abs() < 1e-10);
    }

    #[test]
    fn deterministic_bitwise() {
        let run = || {
            let mut p = vec![0.1, 0.2, -0.3];
            let mut st = OptimizerState::new(3, AdamWConfig::default());
            for k in 0..10 {
                let g = [0.1 * k as f64, -0.7, 1e-3];
                adamw_step(&mut p, &g, &mut st).unwrap();
            }
            p.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
