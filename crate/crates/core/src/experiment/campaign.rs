use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::run_experiment;
use crate::noise::NoiseKind;
use crate::pipeline::{mean_std, ExperimentConfig, Method};
use crate::{Error, Result};

/// The λ values of the reference ablation.
pub const DEFAULT_LAMBDAS: [f64; 6] = [0.05, 0.10, 0.15, 0.20, 0.25, 0.30];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CampaignGrid {
    pub base: ExperimentConfig,
    pub kinds: Vec<NoiseKind>,
    pub rates: Vec<f64>,
    /// Trial indices; trial `k` offsets every seed of `base` by `k`.
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    #[serde(skip)]
    pub workers: usize,
}

impl CampaignGrid {
    /// First 16 hex digits of the SHA-256 of the grid (worker count excluded).
    pub fn tag(&self) -> String {
        let json = serde_json::to_vec(self).expect("grid serializes");
        hex::encode(Sha256::digest(json))[..16].to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignRow {
    pub noise: NoiseKind,
    pub rate: f64,
    pub method: Method,
    pub runs: usize,
    /// Mean and population std over trials of each run's last-ten mean.
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub failures: Vec<String>,
}

/// Maps `f` over `jobs` on up to `workers` threads; output is in job order.
fn par_map<J: Sync, R: Send>(jobs: &[J], workers: usize, f: impl Fn(&J) -> R + Sync) -> Vec<R> {
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel();
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, jobs.len().max(1)) {
            let tx = tx.clone();
            let (next, f) = (&next, &f);
            s.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= jobs.len() {
                    break;
                }
                tx.send((i, f(&jobs[i]))).expect("receiver alive");
            });
        }
    });
    drop(tx);
    let mut out: Vec<(usize, R)> = rx.into_iter().collect();
    out.sort_by_key(|(i, _)| *i);
    out.into_iter().map(|(_, r)| r).collect()
}

fn trial(base: &ExperimentConfig, k: u64) -> ExperimentConfig {
    let mut cfg = base.clone();
    cfg.seeds = base.seeds.offset(k);
    cfg
}

fn last_ten_of(cfg: &ExperimentConfig, root: &Path) -> Result<f64> {
    let m = run_experiment(cfg, root)?;
    m.summary.last_ten_mean.ok_or_else(|| {
        Error::contract(format!("run {} has fewer than 10 epochs", m.config_hash))
    })
}

/// Runs the Cartesian product of the grid. A failed run is recorded in its
/// cell and the campaign goes on.
pub fn run_campaign(grid: &CampaignGrid, root: &Path) -> Result<Vec<CampaignRow>> {
    if grid.kinds.is_empty() || grid.rates.is_empty() || grid.seeds.is_empty() || grid.methods.is_empty() {
        return Err(Error::config("campaign", "every grid axis needs at least one value"));
    }
    let mut cells = vec![];
    for &kind in &grid.kinds {
        for &rate in &grid.rates {
            for &method in &grid.methods {
                cells.push((kind, rate, method));
            }
        }
    }
    let jobs: Vec<(usize, ExperimentConfig)> = cells
        .iter()
        .enumerate()
        .flat_map(|(c, &(kind, rate, method))| {
            grid.seeds.iter().map(move |&k| {
                let mut cfg = trial(&grid.base, k);
                cfg.noise.kind = kind;
                cfg.noise.rate = rate;
                cfg.schedule.tau = None;
                cfg.method = method;
                (c, cfg)
            })
        })
        .collect();
    let results = par_map(&jobs, grid.workers, |(_, cfg)| last_ten_of(cfg, root));
    let mut rows: Vec<CampaignRow> = cells
        .iter()
        .map(|&(noise, rate, method)| CampaignRow {
            noise,
            rate,
            method,
            runs: 0,
            mean: None,
            std: None,
            failures: vec![],
        })
        .collect();
    let mut accs: Vec<Vec<f64>> = vec![vec![]; cells.len()];
    for ((c, _), r) in jobs.iter().zip(results) {
        rows[*c].runs += 1;
        match r {
            Ok(a) => accs[*c].push(a),
            Err(e) => rows[*c].failures.push(e.to_string()),
        }
    }
    for (row, a) in rows.iter_mut().zip(&accs) {
        if !a.is_empty() {
            let (m, s) = mean_std(a);
            row.mean = Some(m);
            row.std = Some(s);
        }
    }
    Ok(rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub lambda: f64,
    pub mean_acc: f64,
    pub std_acc: f64,
}

/// Sweeps `lambdas` over `base`, `seeds` trials each. Rows come back sorted
/// by λ.
pub fn emit_ablation(
    lambdas: &[f64],
    base: &ExperimentConfig,
    seeds: &[u64],
    workers: usize,
    root: &Path,
) -> Result<Vec<AblationRow>> {
    if lambdas.is_empty() || seeds.is_empty() {
        return Err(Error::config("lambda", "need at least one λ value and one seed"));
    }
    let mut sorted = lambdas.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut jobs = vec![];
    for &lambda in &sorted {
        for &k in seeds {
            let mut cfg = trial(base, k);
            cfg.lambda = lambda;
            jobs.push(cfg.resolve()?);
        }
    }
    let results = par_map(&jobs, workers, |cfg| last_ten_of(cfg, root));
    let mut results = results.into_iter();
    let mut rows = vec![];
    for lambda in &sorted {
        let accs = results.by_ref().take(seeds.len()).collect::<Result<Vec<f64>>>()?;
        let (mean_acc, std_acc) = mean_std(&accs);
        rows.push(AblationRow {
            lambda: *lambda,
            mean_acc,
            std_acc,
        });
    }
    Ok(rows)
}

pub fn write_ablation_csv(rows: &[AblationRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_campaign_csv(rows: &[CampaignRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    w.write_record(["noise", "rate", "method", "runs", "mean", "std", "failures"])
        .map_err(|e| Error::Format(e.to_string()))?;
    for r in rows {
        w.write_record([
            r.noise.to_string(),
            r.rate.to_string(),
            r.method.to_string(),
            r.runs.to_string(),
            fmt(r.mean),
            fmt(r.std),
            r.failures.len().to_string(),
        ])
        .map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
