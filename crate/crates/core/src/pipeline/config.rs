use serde::{Deserialize, Serialize};

use crate::attack::AttackConfig;
use crate::data::SynthConfig;
use crate::nn::{ModelSpec, OptimizerConfig};
use crate::noise::{NoiseKind, NoiseParams, NoiseSpec};
use crate::select::SelectionSchedule;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Small-loss selection for every epoch; discarded data is never used.
    SelectionOnly,
    /// After warmup, train on the clean partition plus the uncorrected
    /// mislabeled examples.
    Mix,
    /// After warmup, train on the clean partition plus attack-corrected
    /// mislabeled examples.
    #[serde(rename = "inscorr")]
    InsCorr,
    /// After warmup, train on the clean partition alone.
    CleanPartition,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::SelectionOnly => "selection-only",
            Method::Mix => "mix",
            Method::InsCorr => "inscorr",
            Method::CleanPartition => "clean-partition",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Which term of the mixed objective `lambda` multiplies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LambdaRole {
    /// `L = lambda * clean + (1 - lambda) * corrected`
    CleanWeight,
    /// `L = (1 - lambda) * clean + lambda * corrected`
    DiscardedWeight,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionRule {
    /// Clean iff the predicted class equals the given label.
    Agreement,
    /// Clean iff among the `(1 - tau) * n` smallest losses over the whole set.
    SmallLossGlobal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { hidden: vec![64] }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    /// Assumed noise rate; defaults to `noise.rate`.
    pub tau: Option<f64>,
    pub t_k: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { tau: None, t_k: 10 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub classes: usize,
    pub per_class: usize,
    pub height: usize,
    pub width: usize,
    pub test_per_class: usize,
    pub validation_fraction: f64,
    pub synth: SynthConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            classes: 4,
            per_class: 500,
            height: 16,
            width: 16,
            test_per_class: 250,
            validation_fraction: 0.10,
            synth: SynthConfig::default(),
        }
    }
}

impl DataConfig {
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub kind: NoiseKind,
    pub rate: f64,
    pub params: NoiseParams,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            kind: NoiseKind::TypeI,
            rate: 0.4,
            params: NoiseParams::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    pub data: u64,
    pub noise: u64,
    pub init: u64,
    pub epochs: u64,
    pub attack: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            data: 0,
            noise: 1,
            init: 2,
            epochs: 3,
            attack: 4,
        }
    }
}

impl Seeds {
    /// Every seed offset by `k`; used for repeated trials.
    pub fn offset(&self, k: u64) -> Self {
        let f = |s: u64| s.wrapping_add(k.wrapping_mul(1000));
        Self {
            data: f(self.data),
            noise: f(self.noise),
            init: f(self.init),
            epochs: f(self.epochs),
            attack: f(self.attack),
        }
    }
}

/// Every knob of one experiment. Defaults follow the reference protocol:
/// Adam at 0.001, batch 128, 200 epochs, `T_k = 10`, L-inf budget 8/255.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub method: Method,
    pub lambda: f64,
    pub lambda_role: LambdaRole,
    pub t_c: usize,
    pub t_max: usize,
    pub batch_size: usize,
    pub partition_rule: PartitionRule,
    pub refresh_correction: bool,
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    pub schedule: ScheduleConfig,
    pub attack: AttackConfig,
    pub data: DataConfig,
    pub noise: NoiseConfig,
    pub seeds: Seeds,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            method: Method::InsCorr,
            lambda: 0.5,
            lambda_role: LambdaRole::CleanWeight,
            t_c: 100,
            t_max: 200,
            batch_size: 128,
            partition_rule: PartitionRule::Agreement,
            refresh_correction: false,
            model: ModelConfig::default(),
            optimizer: OptimizerConfig::default(),
            schedule: ScheduleConfig::default(),
            attack: AttackConfig::default(),
            data: DataConfig::default(),
            noise: NoiseConfig::default(),
            seeds: Seeds::default(),
        }
    }
}

impl ExperimentConfig {
    /// Fills derived defaults (`schedule.tau` from `noise.rate`, attack seed
    /// from `seeds.attack`) and validates.
    pub fn resolve(mut self) -> Result<Self> {
        if self.schedule.tau.is_none() {
            self.schedule.tau = Some(self.noise.rate);
        }
        self.attack.seed = self.seeds.attack;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::config("lambda", format!("{} is outside [0, 1]", self.lambda)));
        }
        if self.t_c > self.t_max {
            return Err(Error::config(
                "t_c",
                format!("{} exceeds t_max = {}", self.t_c, self.t_max),
            ));
        }
        if self.refresh_correction && self.method != Method::InsCorr {
            return Err(Error::config(
                "refresh_correction",
                format!("only applies to inscorr, method is {}", self.method),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.model.hidden.iter().any(|&w| w == 0) {
            return Err(Error::config("model.hidden", "widths must be at least 1"));
        }
        self.optimizer.validate()?;
        self.schedule()?;
        self.attack.validate()?;
        let d = &self.data;
        if d.classes < 2 {
            return Err(Error::config("data.classes", "need at least 2 classes"));
        }
        for (key, v) in [
            ("data.per_class", d.per_class),
            ("data.height", d.height),
            ("data.width", d.width),
            ("data.test_per_class", d.test_per_class),
        ] {
            if v == 0 {
                return Err(Error::config(key, "must be at least 1"));
            }
        }
        if !(0.0..1.0).contains(&d.validation_fraction) {
            return Err(Error::config("data.validation_fraction", "must lie in [0, 1)"));
        }
        d.synth.validate()?;
        self.noise_spec().validate().map_err(|e| match e {
            Error::Parameter { name, reason } => Error::config(format!("noise.params.{name}"), reason),
            other => other,
        })?;
        Ok(())
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        ModelSpec::new(
            self.data.height * self.data.width,
            self.model.hidden.clone(),
            self.data.classes,
        )
    }

    pub fn schedule(&self) -> Result<SelectionSchedule> {
        SelectionSchedule::new(self.schedule.tau.unwrap_or(self.noise.rate), self.schedule.t_k)
    }

    pub fn noise_spec(&self) -> NoiseSpec {
        NoiseSpec {
            kind: self.noise.kind,
            rate: self.noise.rate,
            seed: self.seeds.noise,
            params: self.noise.params,
        }
    }

    /// Weight of the clean term in the mixed objective.
    pub fn clean_weight(&self) -> f64 {
        match self.lambda_role {
            LambdaRole::CleanWeight => self.lambda,
            LambdaRole::DiscardedWeight => 1.0 - self.lambda,
        }
    }
}
