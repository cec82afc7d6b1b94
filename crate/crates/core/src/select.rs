//! Small-loss sample selection and the self-teach training loop.
//!
//! Each mini-batch keeps the `ceil(R(T) * b)` examples with the smallest
//! loss under the current classifier and updates only on those, where
//! `R(T) = 1 - min(T / T_k * tau, tau)` shrinks linearly from 1 to
//! `1 - tau` over the first `T_k` epochs.

use serde::{Deserialize, Serialize};

use crate::data::{minibatches, Dataset, Provenance};
use crate::nn::{ModelParams, Optimizer};
use crate::rng::{self, tag};
use crate::tensor::Tape;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionSchedule {
    /// Assumed noise rate, in `[0, 1)`.
    pub tau: f64,
    /// Epochs over which the drop rate ramps up to `tau`.
    pub t_k: usize,
}

impl Default for SelectionSchedule {
    fn default() -> Self {
        Self { tau: 0.0, t_k: 10 }
    }
}

impl SelectionSchedule {
    pub fn new(tau: f64, t_k: usize) -> Result<Self> {
        let s = Self { tau, t_k };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.tau) {
            return Err(Error::config("schedule.tau", format!("{} is outside [0, 1)", self.tau)));
        }
        if self.t_k == 0 {
            return Err(Error::config("schedule.t_k", "must be at least 1"));
        }
        Ok(())
    }

    pub fn keep_fraction(&self, epoch: usize) -> f64 {
        drop_rate(self, epoch)
    }
}

/// The keep fraction `R(T) = 1 - min(T / T_k * tau, tau)` for epoch `T`.
pub fn drop_rate(schedule: &SelectionSchedule, epoch: usize) -> f64 {
    let ramp = epoch as f64 / schedule.t_k as f64 * schedule.tau;
    1.0 - ramp.min(schedule.tau)
}

/// `ceil(keep_fraction * batch)`, at least 1. Products within 1e-9 of an
/// integer snap to it so that `1 - 0.3` keeps exactly 7 of 10.
pub fn kept_count(keep_fraction: f64, batch: usize) -> usize {
    let x = keep_fraction * batch as f64;
    let nearest = x.round();
    let k = if (x - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest
    } else {
        x.ceil()
    };
    (k as usize).clamp(1, batch.max(1))
}

/// Indices of a batch split by loss rank. Both lists are ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Selection {
    pub kept: Vec<usize>,
    pub discarded: Vec<usize>,
}

/// Keeps the `kept_count(keep_fraction, n)` smallest losses; ties go to the
/// lower index.
pub fn select_small_loss(losses: &[f64], keep_fraction: f64) -> Result<Selection> {
    if losses.is_empty() {
        return Err(Error::contract("cannot select from an empty batch"));
    }
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::Parameter {
            name: "keep_fraction",
            reason: format!("{keep_fraction} is outside (0, 1]"),
        });
    }
    if let Some(index) = losses.iter().position(|l| !l.is_finite()) {
        return Err(Error::Data {
            index,
            reason: format!("loss {} is not finite", losses[index]),
        });
    }
    let k = kept_count(keep_fraction, losses.len());
    let mut order: Vec<usize> = (0..losses.len()).collect();
    order.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]).then(a.cmp(&b)));
    let mut is_kept = vec![false; losses.len()];
    order[..k].iter().for_each(|&i| is_kept[i] = true);
    let (kept, discarded) = (0..losses.len()).partition(|&i| is_kept[i]);
    Ok(Selection { kept, discarded })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub size: usize,
    pub kept: usize,
    /// Kept examples whose provenance is `Clean` (diagnostic only).
    pub kept_clean: usize,
    /// Mean loss over the kept examples.
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub keep_fraction: f64,
    pub batches: Vec<BatchStats>,
}

impl EpochStats {
    /// Mean over batches of the kept-loss mean.
    pub fn train_loss(&self) -> f64 {
        mean(self.batches.iter().map(|b| b.loss))
    }

    /// Mean over batches of the fraction of kept examples that are clean.
    pub fn selection_precision(&self) -> f64 {
        mean(self.batches.iter().map(|b| b.kept_clean as f64 / b.kept as f64))
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Seed of the shuffle used in epoch `epoch`.
pub fn epoch_seed(base: u64, epoch: usize) -> u64 {
    rng::derive(base, tag::EPOCH, epoch as u64)
}

/// One update on the examples `indices` of `train`: forward, keep the
/// small-loss fraction, step on the mean kept loss.
pub fn selective_step(
    params: &mut ModelParams,
    optimizer: &mut Optimizer,
    train: &Dataset,
    indices: &[usize],
    keep_fraction: f64,
) -> Result<BatchStats> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, true);
    let x = tape.constant(train.batch(indices)?);
    let labels = train.given_labels(indices);
    let logits = params.forward_on(&mut tape, &bound, x)?;
    let losses = tape.softmax_cross_entropy(logits, &labels)?;
    let values = tape.value(losses).data().to_vec();

    let selection = select_small_loss(&values, keep_fraction)?;
    let k = selection.kept.len();
    let mut weights = vec![0.0; indices.len()];
    selection.kept.iter().for_each(|&i| weights[i] = 1.0 / k as f64);
    let loss = tape.weighted_sum(losses, weights)?;
    tape.backward(loss)?;
    let grads = params.gradients(&tape, &bound);
    optimizer.step(params, &grads)?;

    let kept_clean = selection
        .kept
        .iter()
        .filter(|&&i| train.example(indices[i]).provenance == Provenance::Clean)
        .count();
    Ok(BatchStats {
        size: indices.len(),
        kept: k,
        kept_clean,
        loss: tape.value(loss).data()[0],
    })
}

/// Steps 3-8 of the self-teach loop for one epoch.
pub fn self_teach_epoch(
    params: &mut ModelParams,
    optimizer: &mut Optimizer,
    train: &Dataset,
    schedule: &SelectionSchedule,
    epoch: usize,
    batch_size: usize,
    seed: u64,
) -> Result<EpochStats> {
    if train.is_empty() {
        return Err(Error::contract("training set is empty"));
    }
    let keep_fraction = schedule.keep_fraction(epoch);
    let batches = minibatches(train.len(), batch_size, seed)?
        .iter()
        .map(|b| selective_step(params, optimizer, train, b, keep_fraction))
        .collect::<Result<Vec<_>>>()?;
    Ok(EpochStats {
        epoch,
        keep_fraction,
        batches,
    })
}

/// Runs `t_max` self-teach epochs. `on_epoch` sees the stats and the
/// parameters after each epoch; epoch `T` shuffles with
/// `epoch_seed(epoch_seed_base, T)`.
#[allow(clippy::too_many_arguments)]
pub fn run_algorithm1(
    params: &mut ModelParams,
    optimizer: &mut Optimizer,
    train: &Dataset,
    schedule: &SelectionSchedule,
    t_max: usize,
    batch_size: usize,
    epoch_seed_base: u64,
    mut on_epoch: impl FnMut(&EpochStats, &ModelParams) -> Result<()>,
) -> Result<Vec<EpochStats>> {
    schedule.validate()?;
    let mut trail = Vec::with_capacity(t_max);
    for epoch in 0..t_max {
        let stats = self_teach_epoch(
            params,
            optimizer,
            train,
            schedule,
            epoch,
            batch_size,
            epoch_seed(epoch_seed_base, epoch),
        )?;
        on_epoch(&stats, params)?;
        trail.push(stats);
    }
    Ok(trail)
}
