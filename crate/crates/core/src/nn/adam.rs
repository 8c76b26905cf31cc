use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates for every tensor of a [`ParamSet`], plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
    pub step_count: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(params: &ParamSet, config: AdamConfig) -> Self {
        let zeros: Vec<Tensor> = params.tensors().map(|t| Tensor::zeros(t.shape())).collect();
        AdamState {
            first_moment: zeros.clone(),
            second_moment: zeros,
            step_count: 0,
            config,
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// One bias-corrected Adam step.
    ///
    /// All gradients are validated before any parameter is touched, so a
    /// non-finite gradient leaves both `params` and the state unchanged.
    pub fn update(&mut self, params: &mut ParamSet, grads: &[Tensor]) -> Result<()> {
        if grads.len() != params.len() || self.first_moment.len() != params.len() {
            return Err(Error::shape(
                "adam_update",
                format!("{} gradient tensors", params.len()),
                grads.len(),
            ));
        }
        for (i, g) in grads.iter().enumerate() {
            if g.shape() != params.tensor(i).shape() {
                return Err(Error::shape(
                    "adam_update",
                    format!("{} {:?}", params.name(i), params.tensor(i).shape()),
                    format!("{:?}", g.shape()),
                ));
            }
            if let Some(index) = g.first_non_finite() {
                return Err(Error::NonFinite {
                    name: format!("gradient of {}", params.name(i)),
                    index,
                });
            }
        }

        self.step_count += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step_count as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (i, g) in grads.iter().enumerate() {
            let m = self.first_moment[i].data_mut();
            let v = self.second_moment[i].data_mut();
            let p = params.tensor_mut(i).data_mut();
            for j in 0..p.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g.data()[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g.data()[j] * g.data()[j];
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.push("w", Tensor::scalar(value)).unwrap();
        p
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = single(0.5);
        let mut s = AdamState::new(&p, AdamConfig::default());
        s.update(&mut p, &[Tensor::scalar(2.0)]).unwrap();
        assert!((p.tensor(0).item() - 0.4999).abs() < 1e-10);
        assert_eq!(s.step_count, 1);
    }

    #[test]
    fn zero_gradient_leaves_fresh_parameters() {
        let mut p = single(0.5);
        let mut s = AdamState::new(&p, AdamConfig::default());
        s.update(&mut p, &[Tensor::scalar(0.0)]).unwrap();
        assert_eq!(p.tensor(0).item(), 0.5);
        assert_eq!(s.first_moment[0].item(), 0.0);
        assert_eq!(s.step_count, 1);
    }

    #[test]
    fn matches_scalar_recurrence_on_quadratic() {
        // f(w) = (w − 3)², gradient 2(w − 3).
        let config = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut p = single(0.0);
        let mut s = AdamState::new(&p, config);

        let (mut w, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        for t in 1..=3 {
            let g = 2.0 * (p.tensor(0).item() - 3.0);
            s.update(&mut p, &[Tensor::scalar(g)]).unwrap();

            let g_ref = 2.0 * (w - 3.0);
            m = 0.9 * m + 0.1 * g_ref;
            v = 0.999 * v + 0.001 * g_ref * g_ref;
            let m_hat = m / (1.0 - 0.9f64.powi(t));
            let v_hat = v / (1.0 - 0.999f64.powi(t));
            w -= 0.1 * m_hat / (v_hat.sqrt() + 1e-8);
            assert!((p.tensor(0).item() - w).abs() < 1e-15, "step {t}");
        }
        // Hand-evaluated trace: every early step moves ≈ lr toward the minimum.
        assert!((w - 0.3).abs() < 1e-3);
    }

    #[test]
    fn non_finite_gradient_names_tensor_and_aborts() {
        let mut p = single(0.5);
        let mut s = AdamState::new(&p, AdamConfig::default());
        let err = s.update(&mut p, &[Tensor::scalar(f64::INFINITY)]).unwrap_err();
        assert!(err.to_string().contains("gradient of w"), "{err}");
        assert_eq!(p.tensor(0).item(), 0.5);
        assert_eq!(s.step_count, 0);
    }

    #[test]
    fn deterministic_bits() {
        let run = || {
            let mut p = single(0.123);
            let mut s = AdamState::new(&p, AdamConfig::default());
            for k in 0..10 {
                s.update(&mut p, &[Tensor::scalar((k as f64).sin())]).unwrap();
            }
            p.tensor(0).item().to_bits()
        };
        assert_eq!(run(), run());
    }
}
