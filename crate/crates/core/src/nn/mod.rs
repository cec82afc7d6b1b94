//! The classifier: a ReLU multilayer perceptron over flattened instances,
//! with He initialization and Adam/SGD optimizers.

mod checkpoint;
mod optim;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use optim::{AdamConfig, AdamState, Optimizer, OptimizerConfig, SgdState};

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::tensor::{softmax_rows, Tape, Tensor, Var};
use crate::{Error, Result};

/// Layer sizes of the classifier. Hidden layers use ReLU.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub classes: usize,
}

impl ModelSpec {
    pub fn new(input_dim: usize, hidden: Vec<usize>, classes: usize) -> Result<Self> {
        let spec = Self {
            input_dim,
            hidden,
            classes,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Parameter {
                name: "input_dim",
                reason: "must be at least 1".into(),
            });
        }
        if self.classes < 2 {
            return Err(Error::Parameter {
                name: "classes",
                reason: format!("need at least 2 classes, got {}", self.classes),
            });
        }
        if self.hidden.iter().any(|&w| w == 0) {
            return Err(Error::Parameter {
                name: "hidden",
                reason: "hidden widths must be at least 1".into(),
            });
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every affine layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut widths = Vec::with_capacity(self.hidden.len() + 2);
        widths.push(self.input_dim);
        widths.extend_from_slice(&self.hidden);
        widths.push(self.classes);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `[fan_in, fan_out]`
    pub weight: Tensor,
    /// `[fan_out]`
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub spec: ModelSpec,
    pub layers: Vec<Layer>,
    pub init_seed: u64,
}

/// Parameters placed on a tape, in `ModelParams::tensors` order.
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: Vec<(Var, Var)>,
}

impl BoundParams {
    pub fn vars(&self) -> impl Iterator<Item = Var> + '_ {
        self.vars.iter().flat_map(|&(w, b)| [w, b])
    }
}

/// He-initialized parameters: weights `N(0, 2/fan_in)`, zero biases.
pub fn init_model(spec: &ModelSpec, seed: u64) -> Result<ModelParams> {
    spec.validate()?;
    let mut rng = rng::stream(seed, rng::tag::INIT, 0);
    let layers = spec
        .layer_dims()
        .into_iter()
        .map(|(fan_in, fan_out)| {
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            let weight = (0..fan_in * fan_out).map(|_| normal.sample(&mut rng)).collect();
            Layer {
                weight: Tensor::matrix(fan_in, fan_out, weight).expect("shape"),
                bias: Tensor::zeros(&[fan_out]),
            }
        })
        .collect();
    Ok(ModelParams {
        spec: spec.clone(),
        layers,
        init_seed: seed,
    })
}

impl ModelParams {
    /// All-zero parameters; every logit is zero.
    pub fn zeros(spec: &ModelSpec) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .layer_dims()
            .into_iter()
            .map(|(i, o)| Layer {
                weight: Tensor::zeros(&[i, o]),
                bias: Tensor::zeros(&[o]),
            })
            .collect();
        Ok(Self {
            spec: spec.clone(),
            layers,
            init_seed: 0,
        })
    }

    /// Weight then bias of each layer, input to output.
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().map(Tensor::len).sum()
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundParams {
        let vars = self
            .layers
            .iter()
            .map(|l| {
                (
                    tape.leaf(l.weight.clone(), trainable),
                    tape.leaf(l.bias.clone(), trainable),
                )
            })
            .collect();
        BoundParams { vars }
    }

    /// Logits for a `[b, d]` input node.
    pub fn forward_on(&self, tape: &mut Tape, bound: &BoundParams, x: Var) -> Result<Var> {
        let cols = tape.value(x).cols();
        if tape.value(x).shape().len() != 2 || cols != self.spec.input_dim {
            return Err(Error::Dimension {
                op: "forward",
                left: tape.value(x).shape().to_vec(),
                right: vec![self.spec.input_dim],
            });
        }
        let last = bound.vars.len() - 1;
        let mut h = x;
        for (i, &(w, b)) in bound.vars.iter().enumerate() {
            let z = tape.matmul(h, w)?;
            h = tape.add_bias(z, b)?;
            if i < last {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }

    /// Logits for a `[b, d]` batch, without tracking gradients.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let out = self.forward_on(&mut tape, &bound, xv)?;
        Ok(tape.value(out).clone())
    }

    pub fn predict_proba(&self, x: &Tensor) -> Result<Tensor> {
        Ok(softmax_rows(&self.forward(x)?))
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        Ok(self.forward(x)?.argmax_rows())
    }

    /// Per-example cross-entropy losses without tracking gradients.
    pub fn losses(&self, x: &Tensor, labels: &[usize]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let logits = self.forward_on(&mut tape, &bound, xv)?;
        let l = tape.softmax_cross_entropy(logits, labels)?;
        Ok(tape.value(l).data().to_vec())
    }

    /// Collects parameter gradients from a tape after `backward`. Parameters
    /// that received no gradient get zeros.
    pub fn gradients(&self, tape: &Tape, bound: &BoundParams) -> Vec<Tensor> {
        self.tensors()
            .zip(bound.vars())
            .map(|(p, v)| {
                tape.grad(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(p.shape()))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> ModelSpec {
        ModelSpec::new(4, vec![8], 3).unwrap()
    }

    #[test]
    fn init_is_deterministic_and_shaped() {
        let a = init_model(&spec(), 7).unwrap();
        let b = init_model(&spec(), 7).unwrap();
        assert_eq!(a, b);
        let shapes: Vec<Vec<usize>> = a.tensors().map(|t| t.shape().to_vec()).collect();
        assert_eq!(shapes, vec![vec![4, 8], vec![8], vec![8, 3], vec![3]]);
        assert!(a.layers.iter().all(|l| l.bias.data().iter().all(|&b| b == 0.0)));
        assert_ne!(a, init_model(&spec(), 8).unwrap());
    }

    #[test]
    fn init_weight_scale() {
        // 4 x 2500 first layer = 10k draws
        let s = ModelSpec::new(4, vec![2500], 2).unwrap();
        let p = init_model(&s, 3).unwrap();
        let w = p.layers[0].weight.data();
        let n = w.len() as f64;
        let mean = w.iter().sum::<f64>() / n;
        let std = (w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let target = (2.0f64 / 4.0).sqrt();
        assert!((std - target).abs() / target < 0.2, "std {std}");
    }

    #[test]
    fn invalid_specs() {
        assert!(ModelSpec::new(0, vec![], 2).is_err());
        assert!(ModelSpec::new(3, vec![], 1).is_err());
        assert!(ModelSpec::new(3, vec![0], 2).is_err());
        assert!(ModelSpec::new(3, vec![], 2).is_ok());
    }

    #[test]
    fn zero_model_gives_zero_logits_and_uniform_proba() {
        let s = ModelSpec::new(3, vec![5], 4).unwrap();
        let p = ModelParams::zeros(&s).unwrap();
        let x = Tensor::matrix(2, 3, vec![0.1, 0.5, 0.9, 1.0, 0.0, 0.3]).unwrap();
        assert!(p.forward(&x).unwrap().data().iter().all(|&v| v == 0.0));
        let pr = p.predict_proba(&x).unwrap();
        assert!(pr.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn forward_checks_input_width() {
        let p = init_model(&spec(), 1).unwrap();
        let x = Tensor::matrix(1, 5, vec![0.0; 5]).unwrap();
        assert!(matches!(p.forward(&x), Err(Error::Dimension { .. })));
    }

    #[test]
    fn batch_rows_match_single_forward() {
        let p = init_model(&spec(), 2).unwrap();
        let rows = [
            [0.1, 0.2, 0.3, 0.4],
            [0.9, 0.1, 0.5, 0.0],
            [0.3, 0.3, 0.7, 1.0],
        ];
        let batch = Tensor::matrix(3, 4, rows.concat()).unwrap();
        let all = p.forward(&batch).unwrap();
        for (i, r) in rows.iter().enumerate() {
            let one = p.forward(&Tensor::matrix(1, 4, r.to_vec()).unwrap()).unwrap();
            assert_eq!(one.data(), all.row(i));
        }
    }
}
