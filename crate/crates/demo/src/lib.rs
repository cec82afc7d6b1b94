//! Browser demo: corruption preview, keep-rate curve, and instance
//! correction on a small model trained in the page.

use inscorr::attack::{correct_instance, AttackConfig};
use inscorr::data::{class_template, generate_ood_source, generate_synthetic};
use inscorr::nn::{init_model, ModelParams, ModelSpec, Optimizer, OptimizerConfig};
use inscorr::noise::{corruption_transform, Corruption};
use inscorr::select::{drop_rate, self_teach_epoch, SelectionSchedule};
use inscorr::data::Dataset;
use inscorr::tensor::Tensor;
use wasm_bindgen::prelude::*;

pub const SIDE: usize = 16;
pub const CLASSES: usize = 4;

fn js(e: inscorr::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Noise-free template of `class`, row-major 16 x 16.
#[wasm_bindgen]
pub fn template(class: usize) -> Vec<f64> {
    class_template(class % CLASSES, CLASSES, (SIDE, SIDE), 0.0, 0.0)
}

/// `kind` is one of gaussian, occlusion, resolution, fog, motion-blur;
/// `strength` in `[0, 1]` scales the kind's main parameter.
pub fn corruption_for(kind: &str, strength: f64) -> Result<Corruption, String> {
    let s = strength.clamp(0.0, 1.0);
    Ok(match kind {
        "gaussian" => Corruption::Gaussian { sigma: 0.5 * s },
        "occlusion" => Corruption::Occlusion { fraction: s },
        "resolution" => Corruption::Resolution { factor: 1 + (s * 7.0).round() as usize },
        "fog" => Corruption::Fog { intensity: s, decay: 1.0 },
        "motion-blur" => Corruption::MotionBlur {
            length: 1 + (s * 8.0).round() as usize,
            angle_deg: 0.0,
        },
        other => return Err(format!("unknown corruption `{other}`")),
    })
}

#[wasm_bindgen]
pub fn corrupt(grid: &[f64], kind: &str, strength: f64, seed: u64) -> Result<Vec<f64>, JsError> {
    let c = corruption_for(kind, strength).map_err(|e| JsError::new(&e))?;
    corruption_transform(grid, (SIDE, SIDE), &c, seed).map_err(js)
}

/// R(T) for `T = 0..t_max`.
pub fn keep_curve(tau: f64, t_k: usize, t_max: usize) -> Result<Vec<f64>, inscorr::Error> {
    let s = SelectionSchedule::new(tau, t_k)?;
    Ok((0..t_max).map(|t| drop_rate(&s, t)).collect())
}

#[wasm_bindgen]
pub fn schedule_curve(tau: f64, t_k: usize, t_max: usize) -> Result<Vec<f64>, JsError> {
    keep_curve(tau, t_k, t_max).map_err(js)
}

/// A small classifier trained on clean bars, plus a pool of
/// out-of-distribution instances to correct.
#[wasm_bindgen]
pub struct Lab {
    params: ModelParams,
    optimizer: Optimizer,
    train: Dataset,
    test: Dataset,
    ood: Dataset,
    epoch: usize,
}

#[wasm_bindgen]
impl Lab {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64) -> Result<Lab, JsError> {
        let spec = ModelSpec::new(SIDE * SIDE, vec![32], CLASSES).map_err(js)?;
        let params = init_model(&spec, seed).map_err(js)?;
        let optimizer = OptimizerConfig::Adam {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
        .build(&params);
        Ok(Lab {
            params,
            optimizer,
            train: generate_synthetic(CLASSES, 60, (SIDE, SIDE), seed).map_err(js)?,
            test: generate_synthetic(CLASSES, 25, (SIDE, SIDE), seed ^ 0x5eed).map_err(js)?,
            ood: generate_ood_source((SIDE, SIDE), 24, seed).map_err(js)?,
            epoch: 0,
        })
    }

    /// One plain training epoch; returns test accuracy.
    pub fn train_epoch(&mut self) -> Result<f64, JsError> {
        let plain = SelectionSchedule::new(0.0, 1).map_err(js)?;
        self_teach_epoch(
            &mut self.params,
            &mut self.optimizer,
            &self.train,
            &plain,
            self.epoch,
            32,
            self.epoch as u64,
        )
        .map_err(js)?;
        self.epoch += 1;
        inscorr::pipeline::evaluate(&self.params, &self.test).map_err(js)
    }

    pub fn epochs(&self) -> usize {
        self.epoch
    }

    pub fn ood_count(&self) -> usize {
        self.ood.len()
    }

    pub fn ood_instance(&self, index: usize) -> Vec<f64> {
        self.ood.example(index % self.ood.len()).instance.clone()
    }

    pub fn probabilities(&self, grid: &[f64]) -> Result<Vec<f64>, JsError> {
        let x = Tensor::matrix(1, grid.len(), grid.to_vec()).map_err(js)?;
        Ok(self.params.predict_proba(&x).map_err(js)?.into_data())
    }

    /// Targeted L-inf correction of `grid` towards `target`.
    pub fn correct(&self, grid: &[f64], target: usize, budget: f64, steps: usize) -> Result<Correction, JsError> {
        let cfg = AttackConfig::linf(budget, steps);
        let r = correct_instance(&self.params, grid, target, &cfg).map_err(js)?;
        Ok(Correction {
            after: self.probabilities(&r.corrected)?,
            corrected: r.corrected,
            success: r.success,
            loss: r.loss,
            initial_loss: r.initial_loss,
        })
    }
}

#[wasm_bindgen]
pub struct Correction {
    corrected: Vec<f64>,
    after: Vec<f64>,
    success: bool,
    loss: f64,
    initial_loss: f64,
}

#[wasm_bindgen]
impl Correction {
    #[wasm_bindgen(getter)]
    pub fn corrected(&self) -> Vec<f64> {
        self.corrected.clone()
    }

    /// Class probabilities at the corrected instance.
    #[wasm_bindgen(getter)]
    pub fn probabilities(&self) -> Vec<f64> {
        self.after.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn success(&self) -> bool {
        self.success
    }

    #[wasm_bindgen(getter)]
    pub fn loss(&self) -> f64 {
        self.loss
    }

    #[wasm_bindgen(getter)]
    pub fn initial_loss(&self) -> f64 {
        self.initial_loss
    }
}
