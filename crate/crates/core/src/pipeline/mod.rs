//! Warmup by sample selection, clean/mislabeled partition, instance
//! correction and mixed-objective retraining, plus the baselines.
//!
//! After warmup, each epoch covers the clean partition and the corrected set
//! exactly once. The number of steps is `ceil((|C| + |P|) / batch)` and step
//! `s` takes `floor((s+1)|C|/steps) - floor(s|C|/steps)` clean examples (the
//! same for `P`), so every step mixes both parts in proportion.

mod config;

pub use config::{
    DataConfig, ExperimentConfig, LambdaRole, Method, ModelConfig, NoiseConfig, PartitionRule,
    ScheduleConfig, Seeds,
};

use serde::{Deserialize, Serialize};

use crate::attack::correct_set;
use crate::data::{
    generate_ood_source, generate_synthetic_with, permutation, split_validation, Dataset,
    Provenance, SplitSpec,
};
use crate::nn::{init_model, ModelParams, Optimizer};
use crate::noise::inject;
use crate::rng::{self, tag};
use crate::select::{epoch_seed, select_small_loss, self_teach_epoch};
use crate::tensor::{Tape, Tensor, Var};
use crate::{Error, Result};

/// Noisy training and validation splits plus a clean test set.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentData {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

/// Builds the data for `cfg`: synthetic draw, noise injection, then the
/// validation split (so validation labels are noisy). The test set is a
/// separate clean draw.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<ExperimentData> {
    let d = &cfg.data;
    let seeds = &cfg.seeds;
    let clean = generate_synthetic_with(&d.synth, d.classes, d.per_class, d.shape(), seeds.data)?;
    let spec = cfg.noise_spec();
    let ood = if spec.kind.is_type_i() {
        let count = spec.affected_count(clean.len()).max(1);
        Some(generate_ood_source(
            d.shape(),
            count,
            rng::derive(seeds.noise, tag::OOD, 0),
        )?)
    } else {
        None
    };
    let noisy = inject(&clean, ood.as_ref(), &spec)?;
    let split = SplitSpec::new(d.validation_fraction, rng::derive(seeds.data, tag::SPLIT, 0));
    let (train, validation) = split_validation(&noisy, &split)?;
    let test = generate_synthetic_with(
        &d.synth,
        d.classes,
        d.test_per_class,
        d.shape(),
        rng::derive(seeds.data, tag::TEST_SET, 0),
    )?;
    Ok(ExperimentData {
        train,
        validation,
        test,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Warmup,
    Retrain,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub phase: Phase,
    pub train_loss: f64,
    /// Accuracy against the noisy validation labels; `None` without a validation split.
    pub val_accuracy: Option<f64>,
    pub test_accuracy: f64,
    /// Warmup: fraction of kept examples that are clean. Retrain: precision
    /// of the clean partition. `None` when nothing was kept.
    pub selection_precision: Option<f64>,
    /// Fraction of the corrected set that reached its target.
    pub attack_success: Option<f64>,
}

/// Clean/mislabeled split of the training set, indices ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    pub clean: Vec<usize>,
    pub mislabeled: Vec<usize>,
}

impl Partition {
    /// Fraction of the clean part whose provenance is clean.
    pub fn precision(&self, train: &Dataset) -> Option<f64> {
        precision(train, &self.clean)
    }
}

fn precision(ds: &Dataset, indices: &[usize]) -> Option<f64> {
    if indices.is_empty() {
        return None;
    }
    let clean = indices
        .iter()
        .filter(|&&i| ds.example(i).provenance == Provenance::Clean)
        .count();
    Some(clean as f64 / indices.len() as f64)
}

const EVAL_CHUNK: usize = 1024;

fn predictions(params: &ModelParams, ds: &Dataset) -> Result<Vec<usize>> {
    let all = ds.all_indices();
    let mut out = Vec::with_capacity(ds.len());
    for chunk in all.chunks(EVAL_CHUNK) {
        out.extend(params.predict(&ds.batch(chunk)?)?);
    }
    Ok(out)
}

fn all_losses(params: &ModelParams, ds: &Dataset) -> Result<Vec<f64>> {
    let all = ds.all_indices();
    let mut out = Vec::with_capacity(ds.len());
    for chunk in all.chunks(EVAL_CHUNK) {
        out.extend(params.losses(&ds.batch(chunk)?, &ds.given_labels(chunk))?);
    }
    Ok(out)
}

pub fn partition_clean_mislabeled(
    params: &ModelParams,
    train: &Dataset,
    rule: PartitionRule,
    tau: f64,
) -> Result<Partition> {
    if train.is_empty() {
        return Ok(Partition {
            clean: vec![],
            mislabeled: vec![],
        });
    }
    let is_clean: Vec<bool> = match rule {
        PartitionRule::Agreement => predictions(params, train)?
            .iter()
            .zip(train.examples())
            .map(|(&p, e)| p == e.given_label)
            .collect(),
        PartitionRule::SmallLossGlobal => {
            let selection = select_small_loss(&all_losses(params, train)?, 1.0 - tau)?;
            let mut flags = vec![false; train.len()];
            selection.kept.iter().for_each(|&i| flags[i] = true);
            flags
        }
    };
    let (clean, mislabeled) = (0..train.len()).partition(|&i| is_clean[i]);
    Ok(Partition { clean, mislabeled })
}

/// Accuracy against true labels.
pub fn evaluate(params: &ModelParams, test: &Dataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::contract("test set is empty"));
    }
    let truth = test
        .examples()
        .iter()
        .enumerate()
        .map(|(i, e)| {
            e.true_label
                .ok_or_else(|| Error::contract(format!("test example {i} has no true label")))
        })
        .collect::<Result<Vec<_>>>()?;
    let hits = predictions(params, test)?
        .iter()
        .zip(&truth)
        .filter(|(p, t)| p == t)
        .count();
    Ok(hits as f64 / test.len() as f64)
}

/// Accuracy against the given (possibly noisy) labels; `None` if empty.
pub fn noisy_accuracy(params: &ModelParams, ds: &Dataset) -> Result<Option<f64>> {
    if ds.is_empty() {
        return Ok(None);
    }
    let hits = predictions(params, ds)?
        .iter()
        .zip(ds.examples())
        .filter(|(&p, e)| p == e.given_label)
        .count();
    Ok(Some(hits as f64 / ds.len() as f64))
}

/// Mean and population standard deviation of test accuracy over the final
/// ten epochs.
pub fn last_ten_summary(trail: &[EpochMetrics]) -> Result<(f64, f64)> {
    if trail.len() < 10 {
        return Err(Error::contract(format!(
            "last-ten summary needs at least 10 epochs, got {}",
            trail.len()
        )));
    }
    let acc: Vec<f64> = trail[trail.len() - 10..].iter().map(|m| m.test_accuracy).collect();
    Ok(mean_std(&acc))
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let rough = values.iter().sum::<f64>() / n;
    // one correction pass removes the rounding of the first sum
    let mean = rough + values.iter().map(|v| v - rough).sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// A batch of rows with labels; `None` stands for an empty batch.
pub type LabeledBatch = Option<(Tensor, Vec<usize>)>;

fn mixed_objective(
    tape: &mut Tape,
    params: &ModelParams,
    bound: &crate::nn::BoundParams,
    clean: &LabeledBatch,
    corrected: &LabeledBatch,
    clean_weight: f64,
) -> Result<Var> {
    let (wc, wp) = match (clean, corrected) {
        (None, None) => return Err(Error::contract("mixed loss needs a non-empty batch")),
        (Some(_), None) => (1.0, 0.0),
        (None, Some(_)) => (0.0, 1.0),
        (Some(_), Some(_)) => (clean_weight, 1.0 - clean_weight),
    };
    let term = |tape: &mut Tape, batch: &(Tensor, Vec<usize>), w: f64| -> Result<Var> {
        let x = tape.constant(batch.0.clone());
        let logits = params.forward_on(tape, bound, x)?;
        let losses = tape.softmax_cross_entropy(logits, &batch.1)?;
        let k = batch.1.len() as f64;
        tape.weighted_sum(losses, vec![w / k; batch.1.len()])
    };
    match (clean, corrected) {
        (Some(c), Some(p)) => {
            let lc = term(tape, c, wc)?;
            let lp = term(tape, p, wp)?;
            tape.add(lc, lp)
        }
        (Some(c), None) => term(tape, c, wc),
        (None, Some(p)) => term(tape, p, wp),
        (None, None) => unreachable!(),
    }
}

/// `clean_weight * mean(clean) + (1 - clean_weight) * mean(corrected)`. An
/// empty batch drops out and the other one takes full weight.
pub fn mixed_loss(
    params: &ModelParams,
    clean: &LabeledBatch,
    corrected: &LabeledBatch,
    clean_weight: f64,
) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let l = mixed_objective(&mut tape, params, &bound, clean, corrected, clean_weight)?;
    Ok(tape.value(l).data()[0])
}

fn mixed_step(
    params: &mut ModelParams,
    optimizer: &mut Optimizer,
    clean: &LabeledBatch,
    corrected: &LabeledBatch,
    clean_weight: f64,
) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, true);
    let l = mixed_objective(&mut tape, params, &bound, clean, corrected, clean_weight)?;
    tape.backward(l)?;
    let grads = params.gradients(&tape, &bound);
    optimizer.step(params, &grads)?;
    Ok(tape.value(l).data()[0])
}

/// The discarded part as used in retraining: instances and their given labels.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscardedSet {
    pub instances: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    /// Attack success per instance; `None` when not corrected.
    pub success: Option<Vec<bool>>,
}

impl DiscardedSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn success_rate(&self) -> Option<f64> {
        let s = self.success.as_ref()?;
        (!s.is_empty()).then(|| s.iter().filter(|&&b| b).count() as f64 / s.len() as f64)
    }

    fn batch(&self, idx: &[usize]) -> Result<LabeledBatch> {
        if idx.is_empty() {
            return Ok(None);
        }
        let d = self.instances[0].len();
        let mut data = Vec::with_capacity(idx.len() * d);
        idx.iter().for_each(|&i| data.extend_from_slice(&self.instances[i]));
        let labels = idx.iter().map(|&i| self.labels[i]).collect();
        Ok(Some((Tensor::matrix(idx.len(), d, data)?, labels)))
    }
}

/// Builds the retraining counterpart of the mislabeled examples for `method`.
pub fn build_discarded(
    params: &ModelParams,
    train: &Dataset,
    mislabeled: &[usize],
    cfg: &ExperimentConfig,
) -> Result<DiscardedSet> {
    let labels = train.given_labels(mislabeled);
    let originals: Vec<Vec<f64>> = mislabeled
        .iter()
        .map(|&i| train.example(i).instance.clone())
        .collect();
    match cfg.method {
        Method::InsCorr => {
            let items: Vec<(Vec<f64>, usize)> =
                originals.into_iter().zip(labels.iter().copied()).collect();
            let results = correct_set(params, &items, &cfg.attack)?;
            let success = results.iter().map(|r| r.success).collect();
            Ok(DiscardedSet {
                instances: results.into_iter().map(|r| r.corrected).collect(),
                labels,
                success: Some(success),
            })
        }
        Method::Mix => Ok(DiscardedSet {
            instances: originals,
            labels,
            success: None,
        }),
        Method::CleanPartition | Method::SelectionOnly => Ok(DiscardedSet {
            instances: vec![],
            labels: vec![],
            success: None,
        }),
    }
}

fn split_points(total: usize, steps: usize) -> impl Fn(usize) -> usize {
    move |s| s * total / steps
}

/// One retraining epoch over the clean partition and the discarded set.
/// Under `CleanPartition` the discarded set only shapes the step layout.
#[allow(clippy::too_many_arguments)]
fn retrain_epoch(
    params: &mut ModelParams,
    optimizer: &mut Optimizer,
    train: &Dataset,
    clean: &[usize],
    discarded: &DiscardedSet,
    discarded_count: usize,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<f64> {
    let (nc, np) = (clean.len(), discarded_count);
    if nc + np == 0 {
        return Err(Error::contract("nothing to train on after warmup"));
    }
    let steps = (nc + np).div_ceil(cfg.batch_size);
    let perm_c = permutation(nc, rng::derive(seed, 0, 0));
    let perm_p = permutation(np, rng::derive(seed, 1, 0));
    let (at_c, at_p) = (split_points(nc, steps), split_points(np, steps));
    let use_p = !discarded.is_empty();
    let mut total = 0.0;
    let mut taken = 0;
    for s in 0..steps {
        let ci: Vec<usize> = perm_c[at_c(s)..at_c(s + 1)].iter().map(|&k| clean[k]).collect();
        let cb = if ci.is_empty() {
            None
        } else {
            Some((train.batch(&ci)?, train.given_labels(&ci)))
        };
        let pb = if use_p {
            discarded.batch(&perm_p[at_p(s)..at_p(s + 1)])?
        } else {
            None
        };
        if cb.is_none() && pb.is_none() {
            continue;
        }
        total += mixed_step(params, optimizer, &cb, &pb, cfg.clean_weight())?;
        taken += 1;
    }
    Ok(if taken == 0 { 0.0 } else { total / taken as f64 })
}

/// Result of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub params: ModelParams,
    pub optimizer: Optimizer,
    pub metrics: Vec<EpochMetrics>,
    /// Set when a retraining phase happened.
    pub partition: Option<Partition>,
}

impl RunOutput {
    pub fn last_ten(&self) -> Result<(f64, f64)> {
        last_ten_summary(&self.metrics)
    }
}

/// Runs `cfg.method` on freshly prepared data.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let data = prepare_data(cfg)?;
    run_on(cfg, &data, |_, _| Ok(()))
}

pub fn run_inscorr(cfg: &ExperimentConfig) -> Result<RunOutput> {
    expect_method(cfg, Method::InsCorr)?;
    run(cfg)
}

pub fn run_mix(cfg: &ExperimentConfig) -> Result<RunOutput> {
    expect_method(cfg, Method::Mix)?;
    run(cfg)
}

pub fn run_selection_only(cfg: &ExperimentConfig) -> Result<RunOutput> {
    expect_method(cfg, Method::SelectionOnly)?;
    run(cfg)
}

fn expect_method(cfg: &ExperimentConfig, m: Method) -> Result<()> {
    if cfg.method != m {
        return Err(Error::config(
            "method",
            format!("expected {m}, config says {}", cfg.method),
        ));
    }
    Ok(())
}

/// Runs `cfg.method` on `data`. `on_epoch` sees each epoch's metrics and
/// the parameters after that epoch.
pub fn run_on(
    cfg: &ExperimentConfig,
    data: &ExperimentData,
    mut on_epoch: impl FnMut(&EpochMetrics, &ModelParams) -> Result<()>,
) -> Result<RunOutput> {
    cfg.validate()?;
    let schedule = cfg.schedule()?;
    let mut params = init_model(&cfg.model_spec()?, cfg.seeds.init)?;
    let mut optimizer = cfg.optimizer.build(&params);
    let warmup_end = match cfg.method {
        Method::SelectionOnly => cfg.t_max,
        _ => cfg.t_c,
    };
    let mut metrics = Vec::with_capacity(cfg.t_max);
    let mut record = |m: EpochMetrics, p: &ModelParams| -> Result<()> {
        on_epoch(&m, p)?;
        metrics.push(m);
        Ok(())
    };

    for epoch in 0..warmup_end {
        let stats = self_teach_epoch(
            &mut params,
            &mut optimizer,
            &data.train,
            &schedule,
            epoch,
            cfg.batch_size,
            epoch_seed(cfg.seeds.epochs, epoch),
        )?;
        let kept: usize = stats.batches.iter().map(|b| b.kept).sum();
        let m = EpochMetrics {
            epoch,
            phase: Phase::Warmup,
            train_loss: stats.train_loss(),
            val_accuracy: noisy_accuracy(&params, &data.validation)?,
            test_accuracy: evaluate(&params, &data.test)?,
            selection_precision: (kept > 0).then(|| stats.selection_precision()),
            attack_success: None,
        };
        record(m, &params)?;
    }
    if warmup_end == cfg.t_max {
        return Ok(RunOutput {
            params,
            optimizer,
            metrics,
            partition: None,
        });
    }

    let tau = schedule.tau;
    let partition = partition_clean_mislabeled(&params, &data.train, cfg.partition_rule, tau)?;
    let part_precision = partition.precision(&data.train);
    let mut discarded = build_discarded(&params, &data.train, &partition.mislabeled, cfg)?;
    for epoch in cfg.t_c..cfg.t_max {
        if cfg.refresh_correction && cfg.method == Method::InsCorr && epoch > cfg.t_c {
            discarded = build_discarded(&params, &data.train, &partition.mislabeled, cfg)?;
        }
        let loss = retrain_epoch(
            &mut params,
            &mut optimizer,
            &data.train,
            &partition.clean,
            &discarded,
            partition.mislabeled.len(),
            cfg,
            rng::derive(cfg.seeds.epochs, tag::POST_EPOCH, epoch as u64),
        )?;
        let m = EpochMetrics {
            epoch,
            phase: Phase::Retrain,
            train_loss: loss,
            val_accuracy: noisy_accuracy(&params, &data.validation)?,
            test_accuracy: evaluate(&params, &data.test)?,
            selection_precision: part_precision,
            attack_success: discarded.success_rate(),
        };
        record(m, &params)?;
    }
    Ok(RunOutput {
        params,
        optimizer,
        metrics,
        partition: Some(partition),
    })
}

/// Picks the warmup length with the best noisy-validation accuracy among
/// `candidates`; ties go to the smaller value. Candidate 0 scores the
/// initial model.
pub fn select_t_c(cfg: &ExperimentConfig, candidates: &[usize]) -> Result<usize> {
    let data = prepare_data(cfg)?;
    select_t_c_on(cfg, &data, candidates)
}

pub fn select_t_c_on(
    cfg: &ExperimentConfig,
    data: &ExperimentData,
    candidates: &[usize],
) -> Result<usize> {
    let &max = candidates
        .iter()
        .max()
        .ok_or_else(|| Error::contract("no T_c candidates"))?;
    let schedule = cfg.schedule()?;
    let mut params = init_model(&cfg.model_spec()?, cfg.seeds.init)?;
    let mut optimizer = cfg.optimizer.build(&params);
    let mut scores = vec![noisy_accuracy(&params, &data.validation)?.unwrap_or(0.0)];
    for epoch in 0..max {
        self_teach_epoch(
            &mut params,
            &mut optimizer,
            &data.train,
            &schedule,
            epoch,
            cfg.batch_size,
            epoch_seed(cfg.seeds.epochs, epoch),
        )?;
        scores.push(noisy_accuracy(&params, &data.validation)?.unwrap_or(0.0));
    }
    Ok(pick_t_c(candidates, &scores))
}

/// `scores[t]` is the validation accuracy after `t` epochs.
pub fn pick_t_c(candidates: &[usize], scores: &[f64]) -> usize {
    let mut sorted = candidates.to_vec();
    sorted.sort_unstable();
    let mut best = sorted[0];
    for &c in &sorted[1..] {
        if scores[c] > scores[best] {
            best = c;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Example;
    use crate::noise::NoiseKind;

    fn tiny(method: Method) -> ExperimentConfig {
        let mut cfg = ExperimentConfig {
            method,
            t_c: 3,
            t_max: 6,
            batch_size: 16,
            ..Default::default()
        };
        cfg.model.hidden = vec![8];
        cfg.data.classes = 3;
        cfg.data.per_class = 20;
        cfg.data.height = 6;
        cfg.data.width = 6;
        cfg.data.test_per_class = 10;
        cfg.optimizer = crate::nn::OptimizerConfig::Adam {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        };
        cfg.resolve().unwrap()
    }

    fn trajectory(cfg: &ExperimentConfig, data: &ExperimentData) -> Vec<ModelParams> {
        let mut snaps = vec![];
        run_on(cfg, data, |_, p| {
            snaps.push(p.clone());
            Ok(())
        })
        .unwrap();
        snaps
    }

    #[test]
    fn prepared_data_shapes() {
        let cfg = tiny(Method::InsCorr);
        let d = prepare_data(&cfg).unwrap();
        assert_eq!(d.train.len() + d.validation.len(), 60);
        assert_eq!(d.validation.len(), 6);
        assert_eq!(d.test.len(), 30);
        assert!(d.test.examples().iter().all(|e| e.provenance == Provenance::Clean));
        let noisy = d.train.count_provenance(Provenance::OpenSetReplaced)
            + d.validation.count_provenance(Provenance::OpenSetReplaced);
        assert_eq!(noisy, 24);
    }

    #[test]
    fn mixed_loss_arithmetic_and_affinity() {
        let cfg = tiny(Method::InsCorr);
        let d = prepare_data(&cfg).unwrap();
        let params = init_model(&cfg.model_spec().unwrap(), 5).unwrap();
        let b = |idx: &[usize]| Some((d.train.batch(idx).unwrap(), d.train.given_labels(idx)));
        let (c, p) = (b(&[0, 1, 2, 3]), b(&[10, 11, 12]));
        let lc = mixed_loss(&params, &c, &None, 0.3).unwrap();
        let lp = mixed_loss(&params, &None, &p, 0.3).unwrap();
        assert_eq!(mixed_loss(&params, &c, &p, 1.0).unwrap(), lc);
        assert_eq!(mixed_loss(&params, &c, &p, 0.0).unwrap(), lp);
        for lambda in [0.05, 0.5, 0.9] {
            let l = mixed_loss(&params, &c, &p, lambda).unwrap();
            assert!((l - (lambda * (lc - lp) + lp)).abs() < 1e-12);
        }
        assert!(matches!(
            mixed_loss(&params, &None, &None, 0.5),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn agreement_with_constant_model() {
        let cfg = tiny(Method::InsCorr);
        let d = prepare_data(&cfg).unwrap();
        let mut params = ModelParams::zeros(&cfg.model_spec().unwrap()).unwrap();
        let last = params.layers.len() - 1;
        params.layers[last].bias.data_mut()[0] = 1.0;
        let part = partition_clean_mislabeled(&params, &d.train, PartitionRule::Agreement, 0.4).unwrap();
        let expect: Vec<usize> = (0..d.train.len())
            .filter(|&i| d.train.example(i).given_label == 0)
            .collect();
        assert_eq!(part.clean, expect);
        assert_eq!(part.clean.len() + part.mislabeled.len(), d.train.len());
    }

    #[test]
    fn small_loss_global_matches_sort() {
        let cfg = tiny(Method::InsCorr);
        let d = prepare_data(&cfg).unwrap();
        let train = d.train.subset(&(0..10).collect::<Vec<_>>());
        let params = init_model(&cfg.model_spec().unwrap(), 9).unwrap();
        let part =
            partition_clean_mislabeled(&params, &train, PartitionRule::SmallLossGlobal, 0.4).unwrap();
        let losses = all_losses(&params, &train).unwrap();
        let mut order: Vec<usize> = (0..10).collect();
        order.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]).then(a.cmp(&b)));
        let mut expect = order[..6].to_vec();
        expect.sort_unstable();
        assert_eq!(part.clean, expect);
    }

    #[test]
    fn evaluate_constant_and_missing_truth() {
        let cfg = tiny(Method::InsCorr);
        let d = prepare_data(&cfg).unwrap();
        let mut params = ModelParams::zeros(&cfg.model_spec().unwrap()).unwrap();
        let last = params.layers.len() - 1;
        params.layers[last].bias.data_mut()[0] = 1.0;
        assert!((evaluate(&params, &d.test).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        let mut ex = d.test.examples().to_vec();
        ex[4] = Example {
            true_label: None,
            provenance: Provenance::OpenSetReplaced,
            ..ex[4].clone()
        };
        let broken = d.test.with_examples(ex).unwrap();
        assert!(matches!(evaluate(&params, &broken), Err(Error::Contract(_))));
    }

    #[test]
    fn last_ten() {
        let m = |a: f64| EpochMetrics {
            epoch: 0,
            phase: Phase::Warmup,
            train_loss: 0.0,
            val_accuracy: None,
            test_accuracy: a,
            selection_precision: None,
            attack_success: None,
        };
        let mut trail: Vec<EpochMetrics> = (0..5).map(|_| m(0.1)).collect();
        trail.extend((0..5).map(|_| m(0.7)));
        trail.extend((0..5).map(|_| m(0.9)));
        let (mean, std) = last_ten_summary(&trail).unwrap();
        assert!((mean - 0.8).abs() < 1e-12 && (std - 0.1).abs() < 1e-12);
        let flat: Vec<EpochMetrics> = (0..10).map(|_| m(0.8)).collect();
        assert_eq!(last_ten_summary(&flat).unwrap(), (0.8, 0.0));
        assert!(last_ten_summary(&trail[..9]).is_err());
    }

    #[test]
    fn t_c_picking() {
        assert_eq!(pick_t_c(&[4], &[0.0; 5]), 4);
        assert_eq!(pick_t_c(&[3, 1], &[0.0, 0.5, 0.4, 0.5]), 1);
        assert_eq!(pick_t_c(&[1, 2, 3], &[0.1, 0.2, 0.3, 0.4]), 3);
    }

    #[test]
    fn full_warmup_is_algorithm1() {
        let mut cfg = tiny(Method::InsCorr);
        cfg.t_c = cfg.t_max;
        let d = prepare_data(&cfg).unwrap();
        let ours = trajectory(&cfg, &d);
        let mut params = init_model(&cfg.model_spec().unwrap(), cfg.seeds.init).unwrap();
        let mut opt = cfg.optimizer.build(&params);
        let mut theirs = vec![];
        crate::select::run_algorithm1(
            &mut params,
            &mut opt,
            &d.train,
            &cfg.schedule().unwrap(),
            cfg.t_max,
            cfg.batch_size,
            cfg.seeds.epochs,
            |_, p| {
                theirs.push(p.clone());
                Ok(())
            },
        )
        .unwrap();
        assert_eq!(ours, theirs);
    }

    #[test]
    fn lambda_one_is_clean_partition_training() {
        for kind in [NoiseKind::TypeI, NoiseKind::Fog] {
            let mut base = tiny(Method::CleanPartition);
            base.noise.kind = kind;
            base.lambda = 1.0;
            let d = prepare_data(&base).unwrap();
            let reference = trajectory(&base, &d);
            for m in [Method::InsCorr, Method::Mix] {
                let cfg = ExperimentConfig { method: m, ..base.clone() };
                assert_eq!(trajectory(&cfg, &d), reference, "{m} under {kind}");
            }
        }
    }

    #[test]
    fn runs_are_reproducible() {
        for m in [Method::SelectionOnly, Method::Mix, Method::InsCorr] {
            let cfg = tiny(m);
            let a = run(&cfg).unwrap();
            let b = run(&cfg).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.metrics.len(), cfg.t_max);
            for e in &a.metrics {
                assert!((0.0..=1.0).contains(&e.test_accuracy));
            }
        }
    }

    #[test]
    fn method_guard() {
        let cfg = tiny(Method::Mix);
        assert!(matches!(run_inscorr(&cfg), Err(Error::Config { .. })));
    }
}
