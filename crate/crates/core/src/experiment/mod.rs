//! Config files, run directories, metrics streams, campaigns and ablations.
//!
//! A run writes into `<root>/run-<hash>` where `<hash>` is the first 16 hex
//! digits of the SHA-256 of the resolved config's JSON form:
//!
//! - `config.toml`: the resolved config
//! - `metrics.jsonl`: one record per epoch, then a summary record
//! - `metrics.csv`: the epoch records
//! - `summary.json`: last-ten mean and std plus partition sizes
//! - `model.ckpt`: final parameters and optimizer state
//! - `manifest.json`: paths, checksums and wall-clock time
//!
//! Everything except `manifest.json` is a pure function of the config.

mod campaign;

pub use campaign::{
    emit_ablation, run_campaign, write_ablation_csv, write_campaign_csv, AblationRow,
    CampaignGrid, CampaignRow, DEFAULT_LAMBDAS,
};

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::data::save_dataset;
use crate::nn::Checkpoint;
use crate::pipeline::{self, EpochMetrics, ExperimentConfig, RunOutput};
use crate::{Error, Result};

/// Splits `key=value`.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::config(s, "override must look like key=value"))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(Error::config(s, "override key is empty"));
    }
    Ok((k.to_string(), v.trim().to_string()))
}

/// A TOML literal if it parses as one, otherwise a bare string.
fn override_value(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn set_path(table: &mut Table, key: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = table;
    for (depth, part) in parts[..parts.len() - 1].iter().enumerate() {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        cur = match entry {
            Value::Table(t) => t,
            _ => {
                return Err(Error::config(
                    parts[..=depth].join("."),
                    "is a value, not a section",
                ))
            }
        };
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Parses a TOML config (or the empty config) and applies dotted
/// `key=value` overrides on top; overrides win. Unknown keys are rejected
/// with their full path. The result is resolved and validated.
pub fn parse_config(text: Option<&str>, overrides: &[(String, String)]) -> Result<ExperimentConfig> {
    let mut table: Table = match text {
        Some(t) => toml::from_str(t).map_err(|e| Error::config("<file>", e.to_string()))?,
        None => Table::new(),
    };
    for (k, v) in overrides {
        set_path(&mut table, k, override_value(v))?;
    }
    if let Some(Value::Table(opt)) = table.get_mut("optimizer") {
        opt.entry("kind").or_insert_with(|| Value::String("adam".into()));
    }
    let cfg: ExperimentConfig =
        serde_path_to_error::deserialize(Value::Table(table)).map_err(|e| {
            let key = e.path().to_string();
            let reason = e.inner().to_string().trim().to_string();
            Error::config(if key == "." { "<root>".into() } else { key }, reason)
        })?;
    cfg.resolve()
}

pub fn load_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<ExperimentConfig> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            parse_config(Some(&text), overrides)
        }
        None => parse_config(None, overrides),
    }
}

pub fn to_toml(cfg: &ExperimentConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| Error::Format(format!("config: {e}")))
}

/// Hex SHA-256 of the config's JSON form.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let json = serde_json::to_vec(cfg).expect("config serializes");
    hex::encode(Sha256::digest(json))
}

pub fn run_dir(root: &Path, cfg: &ExperimentConfig) -> PathBuf {
    root.join(format!("run-{}", &config_hash(cfg)[..16]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub method: pipeline::Method,
    pub epochs: usize,
    pub last_ten_mean: Option<f64>,
    pub last_ten_std: Option<f64>,
    pub final_test_accuracy: Option<f64>,
    pub clean_partition: Option<usize>,
    pub mislabeled_partition: Option<usize>,
}

impl RunSummary {
    pub fn of(cfg: &ExperimentConfig, out: &RunOutput) -> Self {
        let ten = out.last_ten().ok();
        Self {
            config_hash: config_hash(cfg),
            method: cfg.method,
            epochs: out.metrics.len(),
            last_ten_mean: ten.map(|t| t.0),
            last_ten_std: ten.map(|t| t.1),
            final_test_accuracy: out.metrics.last().map(|m| m.test_accuracy),
            clean_partition: out.partition.as_ref().map(|p| p.clean.len()),
            mislabeled_partition: out.partition.as_ref().map(|p| p.mislabeled.len()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub dir: PathBuf,
    /// File name to hex SHA-256 of its contents.
    pub checksums: BTreeMap<String, String>,
    pub wall_clock_secs: f64,
    pub summary: RunSummary,
}

#[derive(Serialize)]
struct EpochRecord<'a> {
    record: &'static str,
    config_hash: &'a str,
    #[serde(flatten)]
    metrics: &'a EpochMetrics,
}

#[derive(Serialize)]
struct SummaryRecord<'a> {
    record: &'static str,
    #[serde(flatten)]
    summary: &'a RunSummary,
}

pub fn metrics_jsonl(hash: &str, metrics: &[EpochMetrics], summary: &RunSummary) -> String {
    let mut out = String::new();
    for m in metrics {
        let rec = EpochRecord {
            record: "epoch",
            config_hash: hash,
            metrics: m,
        };
        out.push_str(&serde_json::to_string(&rec).expect("metrics serialize"));
        out.push('\n');
    }
    let rec = SummaryRecord {
        record: "summary",
        summary,
    };
    out.push_str(&serde_json::to_string(&rec).expect("summary serializes"));
    out.push('\n');
    out
}

pub fn metrics_csv(hash: &str, metrics: &[EpochMetrics]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Format(format!("metrics csv: {e}"));
    w.write_record([
        "epoch",
        "phase",
        "train_loss",
        "val_accuracy",
        "test_accuracy",
        "selection_precision",
        "attack_success",
        "config_hash",
    ])
    .map_err(csv_err)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for m in metrics {
        let phase = match m.phase {
            pipeline::Phase::Warmup => "warmup",
            pipeline::Phase::Retrain => "retrain",
        };
        w.write_record([
            m.epoch.to_string(),
            phase.to_string(),
            m.train_loss.to_string(),
            opt(m.val_accuracy),
            m.test_accuracy.to_string(),
            opt(m.selection_precision),
            opt(m.attack_success),
            hash.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Format(format!("metrics csv: {e}")))
}

fn write(dir: &Path, name: &str, bytes: &[u8], sums: &mut BTreeMap<String, String>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    sums.insert(name.to_string(), hex::encode(Sha256::digest(bytes)));
    Ok(())
}

/// Runs `cfg` and writes its artifacts under `run_dir(root, cfg)`.
pub fn run_experiment(cfg: &ExperimentConfig, root: &Path) -> Result<RunManifest> {
    let cfg = cfg.clone().resolve()?;
    let start = Instant::now();
    let out = pipeline::run(&cfg)?;
    let hash = config_hash(&cfg);
    let dir = run_dir(root, &cfg);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let summary = RunSummary::of(&cfg, &out);
    let mut sums = BTreeMap::new();
    write(&dir, "config.toml", to_toml(&cfg)?.as_bytes(), &mut sums)?;
    write(&dir, "metrics.jsonl", metrics_jsonl(&hash, &out.metrics, &summary).as_bytes(), &mut sums)?;
    write(&dir, "metrics.csv", &metrics_csv(&hash, &out.metrics)?, &mut sums)?;
    let summary_json = serde_json::to_vec_pretty(&summary).expect("summary serializes");
    write(&dir, "summary.json", &summary_json, &mut sums)?;
    let ckpt = Checkpoint {
        params: out.params,
        optimizer: out.optimizer,
        epoch: cfg.t_max as u64,
        experiment_seed: cfg.seeds.init,
    };
    write(&dir, "model.ckpt", &ckpt.to_bytes(), &mut sums)?;
    let manifest = RunManifest {
        config_hash: hash,
        config: cfg,
        dir: dir.clone(),
        checksums: sums,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        summary,
    };
    let path = dir.join("manifest.json");
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Writes the prepared splits of `cfg` as dataset files (and CSV mirrors
/// when `csv` is set) into `dir`. Returns the written paths.
pub fn make_data(cfg: &ExperimentConfig, dir: &Path, csv: bool) -> Result<Vec<PathBuf>> {
    let cfg = cfg.clone().resolve()?;
    let data = pipeline::prepare_data(&cfg)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = vec![];
    for (name, ds) in [
        ("train", &data.train),
        ("validation", &data.validation),
        ("test", &data.test),
    ] {
        let bin = dir.join(format!("{name}.bin"));
        save_dataset(ds, &bin)?;
        written.push(bin);
        if csv {
            let path = dir.join(format!("{name}.csv"));
            crate::data::export_csv(ds, &path)?;
            written.push(path);
        }
    }
    Ok(written)
}
