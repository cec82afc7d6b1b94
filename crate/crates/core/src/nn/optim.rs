use serde::{Deserialize, Serialize};

use super::ModelParams;
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
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

/// Adam moments for every parameter tensor, in `ModelParams::tensors` order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &ModelParams) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().map(|t| vec![0.0; t.len()]).collect();
        Self {
            config,
            first: zeros.clone(),
            second: zeros,
            step: 0,
        }
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut ModelParams, grads: &[Tensor]) -> Result<()> {
        check_shapes(params, grads, self.first.iter().map(Vec::len))?;
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in params
            .tensors_mut()
            .zip(grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            for (((w, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Plain SGD with optional heavy-ball momentum.
#[derive(Clone, Debug, PartialEq)]
pub struct SgdState {
    pub lr: f64,
    pub momentum: f64,
    pub velocity: Vec<Vec<f64>>,
}

impl SgdState {
    pub fn new(lr: f64, momentum: f64, params: &ModelParams) -> Self {
        Self {
            lr,
            momentum,
            velocity: params.tensors().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &[Tensor]) -> Result<()> {
        check_shapes(params, grads, self.velocity.iter().map(Vec::len))?;
        for ((p, g), vel) in params.tensors_mut().zip(grads).zip(&mut self.velocity) {
            for ((w, &g), u) in p.data_mut().iter_mut().zip(g.data()).zip(vel) {
                *u = self.momentum * *u + g;
                *w -= self.lr * *u;
            }
        }
        Ok(())
    }
}

fn check_shapes(
    params: &ModelParams,
    grads: &[Tensor],
    buffers: impl Iterator<Item = usize>,
) -> Result<()> {
    let n = params.tensors().count();
    if grads.len() != n {
        return Err(Error::Dimension {
            op: "optimizer step",
            left: vec![n],
            right: vec![grads.len()],
        });
    }
    for ((p, g), b) in params.tensors().zip(grads).zip(buffers) {
        if p.shape() != g.shape() || b != p.len() {
            return Err(Error::Dimension {
                op: "optimizer step",
                left: p.shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OptimizerConfig {
    Adam {
        #[serde(default = "default_lr")]
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
    Sgd {
        #[serde(default = "default_lr")]
        lr: f64,
        #[serde(default)]
        momentum: f64,
    },
}

fn default_lr() -> f64 {
    AdamConfig::default().lr
}
fn default_beta1() -> f64 {
    AdamConfig::default().beta1
}
fn default_beta2() -> f64 {
    AdamConfig::default().beta2
}
fn default_eps() -> f64 {
    AdamConfig::default().eps
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let c = AdamConfig::default();
        OptimizerConfig::Adam {
            lr: c.lr,
            beta1: c.beta1,
            beta2: c.beta2,
            eps: c.eps,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, reason: &str| Err(Error::config(format!("optimizer.{key}"), reason));
        match *self {
            OptimizerConfig::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => {
                if !(lr > 0.0 && lr.is_finite()) {
                    return bad("lr", "must be positive");
                }
                if !(0.0..1.0).contains(&beta1) {
                    return bad("beta1", "must lie in [0, 1)");
                }
                if !(0.0..1.0).contains(&beta2) {
                    return bad("beta2", "must lie in [0, 1)");
                }
                if !(eps > 0.0) {
                    return bad("eps", "must be positive");
                }
            }
            OptimizerConfig::Sgd { lr, momentum } => {
                if !(lr > 0.0 && lr.is_finite()) {
                    return bad("lr", "must be positive");
                }
                if !(0.0..1.0).contains(&momentum) {
                    return bad("momentum", "must lie in [0, 1)");
                }
            }
        }
        Ok(())
    }

    pub fn build(&self, params: &ModelParams) -> Optimizer {
        match *self {
            OptimizerConfig::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => Optimizer::Adam(AdamState::new(
                AdamConfig {
                    lr,
                    beta1,
                    beta2,
                    eps,
                },
                params,
            )),
            OptimizerConfig::Sgd { lr, momentum } => {
                Optimizer::Sgd(SgdState::new(lr, momentum, params))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Optimizer {
    Adam(AdamState),
    Sgd(SgdState),
}

impl Optimizer {
    pub fn step(&mut self, params: &mut ModelParams, grads: &[Tensor]) -> Result<()> {
        match self {
            Optimizer::Adam(s) => s.step(params, grads),
            Optimizer::Sgd(s) => s.step(params, grads),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Layer, ModelSpec};

    /// A 1 -> 2 linear model whose first weight acts as a free scalar.
    fn scalar_model(w: f64) -> ModelParams {
        let spec = ModelSpec::new(1, vec![], 2).unwrap();
        ModelParams {
            spec,
            layers: vec![Layer {
                weight: Tensor::matrix(1, 2, vec![w, 0.0]).unwrap(),
                bias: Tensor::zeros(&[2]),
            }],
            init_seed: 0,
        }
    }

    fn grads_for(w_grad: f64) -> Vec<Tensor> {
        vec![
            Tensor::matrix(1, 2, vec![w_grad, 0.0]).unwrap(),
            Tensor::zeros(&[2]),
        ]
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = scalar_model(1.5);
        let before = p.clone();
        let mut s = AdamState::new(AdamConfig::default(), &p);
        s.step(&mut p, &grads_for(0.0)).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_has_magnitude_lr() {
        let mut p = scalar_model(0.0);
        let mut s = AdamState::new(AdamConfig::default(), &p);
        s.step(&mut p, &grads_for(1.0)).unwrap();
        // m_hat = 1, v_hat = 1: delta = -lr / (1 + eps)
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((p.layers[0].weight.data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn converges_on_shifted_quadratic() {
        // f(w) = (w - 3)^2 from w = 0; lr large enough to travel 3 units in 200 steps
        let mut p = scalar_model(0.0);
        let cfg = AdamConfig {
            lr: 0.05,
            ..AdamConfig::default()
        };
        let mut s = AdamState::new(cfg, &p);
        for _ in 0..200 {
            let w = p.layers[0].weight.data()[0];
            s.step(&mut p, &grads_for(2.0 * (w - 3.0))).unwrap();
        }
        let w = p.layers[0].weight.data()[0];
        assert!((w - 3.0).abs() < 0.05, "w = {w}");
    }

    #[test]
    fn single_step_reduces_convex_objective() {
        for &w0 in &[-2.0, 0.5, 10.0] {
            let mut p = scalar_model(w0);
            let mut s = AdamState::new(AdamConfig::default(), &p);
            s.step(&mut p, &grads_for(2.0 * (w0 - 3.0))).unwrap();
            let w1 = p.layers[0].weight.data()[0];
            assert!((w1 - 3.0f64).powi(2) < (w0 - 3.0f64).powi(2));
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = scalar_model(0.0);
        let mut s = AdamState::new(AdamConfig::default(), &p);
        let bad = vec![Tensor::zeros(&[2, 1]), Tensor::zeros(&[2])];
        assert!(matches!(s.step(&mut p, &bad), Err(Error::Dimension { .. })));
        assert!(s.step(&mut p, &bad[..1]).is_err());
    }

    #[test]
    fn sgd_moves_against_gradient() {
        let mut p = scalar_model(1.0);
        let mut s = SgdState::new(0.1, 0.0, &p);
        s.step(&mut p, &grads_for(2.0)).unwrap();
        assert!((p.layers[0].weight.data()[0] - 0.8).abs() < 1e-15);
    }
}
