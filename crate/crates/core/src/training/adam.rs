use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Gradients are used as given: no clipping,
/// no rescaling.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    pub t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
        Self {
            config,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.v
    }

    /// Applies one update. A non-finite gradient aborts before any
    /// parameter or moment is touched.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::LengthMismatch {
                expected: self.m.len(),
                got: if params.len() != self.m.len() {
                    params.len()
                } else {
                    grads.len()
                },
            });
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != self.m[i].shape() || g.shape() != self.m[i].shape() {
                return Err(Error::Shape {
                    op: "adam step",
                    lhs: self.m[i].shape(),
                    rhs: g.shape(),
                });
            }
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of parameter {i}")));
            }
        }
        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powf(self.t as f64);
        let bc2 = 1.0 - beta2.powf(self.t as f64);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let (m, v) = (m.data_mut(), v.data_mut());
            for (k, (p, &g)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * g;
                v[k] = beta2 * v[k] + (1.0 - beta2) * g * g;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        for g in [3.0, -0.25, 1e-3] {
            let mut p = vec![Tensor::scalar(1.0)];
            let mut adam = Adam::new(AdamConfig::default(), &p);
            adam.step(&mut p, &[Tensor::scalar(g)]).unwrap();
            let step = p[0].item() - 1.0;
            let expected = -1e-3 * g.signum() * g.abs() / (g.abs() + 1e-8);
            assert!((step - expected).abs() < 1e-15, "{step} vs {expected}");
        }
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = vec![Tensor::row(vec![0.3, -2.0]), Tensor::scalar(5.0)];
        let before = p.clone();
        let mut adam = Adam::new(AdamConfig::default(), &p);
        let g = vec![Tensor::zeros(1, 2), Tensor::zeros(1, 1)];
        for _ in 0..100 {
            adam.step(&mut p, &g).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn quadratic_matches_reference() {
        // f(x) = 0.5 a (x - c)^2
        let (a, c) = (3.0, -1.5);
        let mut p = vec![Tensor::scalar(2.0)];
        let cfg = AdamConfig {
            lr: 0.01,
            ..AdamConfig::default()
        };
        let mut adam = Adam::new(cfg, &p);
        let (mut x, mut m, mut v) = (2.0f64, 0.0f64, 0.0f64);
        for t in 1..=1000 {
            let g = a * (p[0].item() - c);
            adam.step(&mut p, &[Tensor::scalar(g)]).unwrap();

            let g = a * (x - c);
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= 0.01 * mh / (vh.sqrt() + 1e-8);
            assert!((p[0].item() - x).abs() < 1e-12, "step {t}");
        }
        assert!((x - c).abs() < 0.05);
    }

    #[test]
    fn non_finite_gradient_aborts_untouched() {
        let mut p = vec![Tensor::row(vec![1.0, 2.0])];
        let mut adam = Adam::new(AdamConfig::default(), &p);
        let err = adam.step(&mut p, &[Tensor::row(vec![0.5, f64::NAN])]);
        assert!(matches!(err, Err(Error::NonFinite(_))));
        assert_eq!(p[0].data(), &[1.0, 2.0]);
        assert_eq!(adam.t, 0);
        assert!(adam
            .step(&mut p, &[Tensor::row(vec![f64::INFINITY, 0.0])])
            .is_err());
    }

    #[test]
    fn shape_mismatch() {
        let mut p = vec![Tensor::row(vec![1.0, 2.0])];
        let mut adam = Adam::new(AdamConfig::default(), &p);
        assert!(adam.step(&mut p, &[Tensor::scalar(1.0)]).is_err());
        assert!(adam.step(&mut p, &[]).is_err());
    }
}
