//! Versioned binary checkpoints.
//!
//! Payload layout (all little-endian), inside the common container
//! (magic `INSCCKPT`, `u32` version, `u64` payload length, payload, SHA-256):
//!
//! ```text
//! u64 input_dim | u64 hidden_count | u64 hidden[..] | u64 classes
//! u64 init_seed | u64 experiment_seed | u64 epoch
//! u64 tensor_count, then per tensor: u64 ndim | u64 dims[..] | f64 data[..]
//! u8 optimizer kind (0 = Adam, 1 = SGD)
//!   Adam: f64 lr | f64 beta1 | f64 beta2 | f64 eps | u64 step | f64 first[..] | f64 second[..]
//!   SGD:  f64 lr | f64 momentum | f64 velocity[..]
//! ```
//! Optimizer buffers follow the parameter tensor order and sizes.

use std::path::Path;

use super::{AdamConfig, AdamState, Layer, ModelParams, ModelSpec, Optimizer, SgdState};
use crate::codec::{Reader, Writer};
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"INSCCKPT";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub optimizer: Optimizer,
    pub epoch: u64,
    pub experiment_seed: u64,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        let spec = &self.params.spec;
        w.u64(spec.input_dim as u64);
        w.u64(spec.hidden.len() as u64);
        spec.hidden.iter().for_each(|&h| w.u64(h as u64));
        w.u64(spec.classes as u64);
        w.u64(self.params.init_seed);
        w.u64(self.experiment_seed);
        w.u64(self.epoch);
        w.u64(self.params.tensors().count() as u64);
        for t in self.params.tensors() {
            w.u64(t.shape().len() as u64);
            t.shape().iter().for_each(|&d| w.u64(d as u64));
            w.f64s(t.data());
        }
        match &self.optimizer {
            Optimizer::Adam(s) => {
                w.u8(0);
                w.f64(s.config.lr);
                w.f64(s.config.beta1);
                w.f64(s.config.beta2);
                w.f64(s.config.eps);
                w.u64(s.step);
                s.first.iter().for_each(|b| w.f64s(b));
                s.second.iter().for_each(|b| w.f64s(b));
            }
            Optimizer::Sgd(s) => {
                w.u8(1);
                w.f64(s.lr);
                w.f64(s.momentum);
                s.velocity.iter().for_each(|b| w.f64s(b));
            }
        }
        w.finish(MAGIC, CHECKPOINT_VERSION)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (mut r, _version) = Reader::open(bytes, MAGIC, CHECKPOINT_VERSION, "checkpoint")?;
        let input_dim = r.usize()?;
        let hidden_count = r.usize()?;
        let hidden = (0..hidden_count).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
        let classes = r.usize()?;
        let spec = ModelSpec::new(input_dim, hidden, classes)?;
        let init_seed = r.u64()?;
        let experiment_seed = r.u64()?;
        let epoch = r.u64()?;

        let dims = spec.layer_dims();
        let count = r.usize()?;
        if count != dims.len() * 2 {
            return Err(Error::Format(format!(
                "checkpoint: {count} tensors for a {}-layer model",
                dims.len()
            )));
        }
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let ndim = r.usize()?;
            let shape = (0..ndim).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
            let len = shape.iter().product();
            tensors.push(Tensor::new(shape, r.f64s(len)?)?);
        }
        let mut it = tensors.into_iter();
        let mut layers = Vec::with_capacity(dims.len());
        for (fan_in, fan_out) in dims {
            let (weight, bias) = (it.next().expect("count"), it.next().expect("count"));
            if weight.shape() != [fan_in, fan_out] || bias.shape() != [fan_out] {
                return Err(Error::Format(format!(
                    "checkpoint: layer shapes {:?}/{:?} do not match spec",
                    weight.shape(),
                    bias.shape()
                )));
            }
            layers.push(Layer { weight, bias });
        }
        let params = ModelParams {
            spec,
            layers,
            init_seed,
        };
        let sizes: Vec<usize> = params.tensors().map(Tensor::len).collect();
        let buffers = |r: &mut Reader| -> Result<Vec<Vec<f64>>> {
            sizes.iter().map(|&n| r.f64s(n)).collect()
        };
        let optimizer = match r.u8()? {
            0 => {
                let config = AdamConfig {
                    lr: r.f64()?,
                    beta1: r.f64()?,
                    beta2: r.f64()?,
                    eps: r.f64()?,
                };
                let step = r.u64()?;
                let first = buffers(&mut r)?;
                let second = buffers(&mut r)?;
                Optimizer::Adam(AdamState {
                    config,
                    first,
                    second,
                    step,
                })
            }
            1 => {
                let lr = r.f64()?;
                let momentum = r.f64()?;
                Optimizer::Sgd(SgdState {
                    lr,
                    momentum,
                    velocity: buffers(&mut r)?,
                })
            }
            k => return Err(Error::Format(format!("checkpoint: unknown optimizer kind {k}"))),
        };
        r.finish()?;
        Ok(Self {
            params,
            optimizer,
            epoch,
            experiment_seed,
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
