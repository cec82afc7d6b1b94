//! Instance correction by targeted projected gradient descent.
//!
//! For a discarded example `(x, y)` the attack searches a perturbation `d`
//! inside a norm ball of radius `budget` that makes the classifier assign
//! `y` to `x + d`, by minimizing a targeted loss. Every iterate is projected
//! onto the ball and clamped to `[0, 1]`; the lowest-loss iterate (including
//! `d = 0`) is returned.
//!
//! The target loss is either cross-entropy towards `y` or the negated
//! softmax probability of `y`. Instances are processed as one batch: rows
//! do not interact, so per-instance results are identical to running them
//! one at a time.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::nn::ModelParams;
use crate::rng::{self, tag};
use crate::tensor::{Tape, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Norm {
    Linf,
    L2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackObjective {
    /// `-log p(y | x + d)`
    CrossEntropy,
    /// `-p(y | x + d)`
    NegProbability,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    pub norm: Norm,
    pub budget: f64,
    pub steps: usize,
    /// Defaults to `2.5 * budget / steps` when unset.
    pub step_size: Option<f64>,
    pub random_start: bool,
    /// Seed of the random start; unused otherwise.
    pub seed: u64,
    pub objective: AttackObjective,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            norm: Norm::Linf,
            budget: 8.0 / 255.0,
            steps: 40,
            step_size: None,
            random_start: false,
            seed: 0,
            objective: AttackObjective::CrossEntropy,
        }
    }
}

impl AttackConfig {
    pub fn linf(budget: f64, steps: usize) -> Self {
        Self {
            budget,
            steps,
            ..Self::default()
        }
    }

    pub fn l2(budget: f64, steps: usize) -> Self {
        Self {
            norm: Norm::L2,
            budget,
            steps,
            ..Self::default()
        }
    }

    pub fn step_size(&self) -> f64 {
        self.step_size
            .unwrap_or(2.5 * self.budget / self.steps.max(1) as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.budget > 0.0 && self.budget.is_finite()) {
            return Err(Error::config("attack.budget", "must be positive"));
        }
        if let Some(a) = self.step_size {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::config("attack.step_size", "must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrectionResult {
    /// `x + d`, inside the budget and `[0, 1]`.
    pub corrected: Vec<f64>,
    /// Target loss at `corrected`.
    pub loss: f64,
    /// Target loss at the unperturbed instance.
    pub initial_loss: f64,
    /// Whether the classifier predicts the target at `corrected`.
    pub success: bool,
    pub iterations: usize,
    /// Set when this instance could not be attacked; `corrected` is then the input.
    pub error: Option<String>,
}

impl CorrectionResult {
    fn failed(x: &[f64], error: String) -> Self {
        Self {
            corrected: x.to_vec(),
            loss: f64::NAN,
            initial_loss: f64::NAN,
            success: false,
            iterations: 0,
            error: Some(error),
        }
    }

    pub fn perturbation(&self, x: &[f64]) -> Vec<f64> {
        self.corrected.iter().zip(x).map(|(a, b)| a - b).collect()
    }
}

/// Perturbation norm used by the budget.
pub fn norm_of(norm: Norm, delta: &[f64]) -> f64 {
    match norm {
        Norm::Linf => delta.iter().fold(0.0, |m, v| m.max(v.abs())),
        Norm::L2 => delta.iter().map(|v| v * v).sum::<f64>().sqrt(),
    }
}

pub fn correct_instance(
    params: &ModelParams,
    x: &[f64],
    target: usize,
    cfg: &AttackConfig,
) -> Result<CorrectionResult> {
    cfg.validate()?;
    check_item(params, x, target, 0)?;
    let mut out = correct_rows(params, &[(x, target)], cfg, &[0])?;
    let r = out.pop().expect("one row");
    match &r.error {
        Some(e) => Err(Error::Numeric(e.clone())),
        None => Ok(r),
    }
}

/// Corrects every `(instance, target)` pair in order. Parameters are only
/// read. A failing instance yields `success = false` with its error recorded
/// instead of aborting the set.
pub fn correct_set(
    params: &ModelParams,
    items: &[(Vec<f64>, usize)],
    cfg: &AttackConfig,
) -> Result<Vec<CorrectionResult>> {
    cfg.validate()?;
    const CHUNK: usize = 256;
    let mut results: Vec<Option<CorrectionResult>> = vec![None; items.len()];
    let mut valid = Vec::with_capacity(items.len());
    for (i, (x, y)) in items.iter().enumerate() {
        match check_item(params, x, *y, i) {
            Ok(()) => valid.push(i),
            Err(e) => results[i] = Some(CorrectionResult::failed(x, e.to_string())),
        }
    }
    for chunk in valid.chunks(CHUNK) {
        let rows: Vec<(&[f64], usize)> = chunk
            .iter()
            .map(|&i| (items[i].0.as_slice(), items[i].1))
            .collect();
        let out = correct_rows(params, &rows, cfg, chunk)?;
        for (&i, r) in chunk.iter().zip(out) {
            results[i] = Some(r);
        }
    }
    Ok(results.into_iter().map(|r| r.expect("every slot filled")).collect())
}

fn check_item(params: &ModelParams, x: &[f64], target: usize, index: usize) -> Result<()> {
    let (d, classes) = (params.spec.input_dim, params.spec.classes);
    if target >= classes {
        return Err(Error::Label {
            index,
            label: target,
            classes,
        });
    }
    if x.len() != d {
        return Err(Error::Dimension {
            op: "correct_instance",
            left: vec![x.len()],
            right: vec![d],
        });
    }
    if let Some(v) = x.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Data {
            index,
            reason: format!("instance value {v} outside [0, 1]"),
        });
    }
    Ok(())
}

struct Eval {
    losses: Vec<f64>,
    grads: Tensor,
    predictions: Vec<usize>,
}

fn evaluate(params: &ModelParams, batch: Tensor, targets: &[usize], objective: AttackObjective) -> Result<Eval> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let x = tape.param(batch);
    let logits = params.forward_on(&mut tape, &bound, x)?;
    let per_row = match objective {
        AttackObjective::CrossEntropy => tape.softmax_cross_entropy(logits, targets)?,
        AttackObjective::NegProbability => {
            let p = tape.target_probability(logits, targets)?;
            tape.scale(p, -1.0)
        }
    };
    let total = tape.sum(per_row);
    tape.backward(total)?;
    Ok(Eval {
        losses: tape.value(per_row).data().to_vec(),
        predictions: tape.value(logits).argmax_rows(),
        grads: tape.take_grad(x).expect("input requires grad"),
    })
}

fn correct_rows(
    params: &ModelParams,
    rows: &[(&[f64], usize)],
    cfg: &AttackConfig,
    ids: &[usize],
) -> Result<Vec<CorrectionResult>> {
    if rows.is_empty() {
        return Ok(Vec::new());
    }
    let d = params.spec.input_dim;
    let targets: Vec<usize> = rows.iter().map(|r| r.1).collect();
    let origin: Vec<f64> = rows.iter().flat_map(|r| r.0.iter().copied()).collect();
    let n = rows.len();
    let (rho, alpha) = (cfg.budget, cfg.step_size());

    let mut current = origin.clone();
    if cfg.random_start {
        for i in 0..n {
            let mut rng = rng::stream(cfg.seed, tag::ATTACK_START, ids[i] as u64);
            let delta = random_in_ball(cfg.norm, rho, d, &mut rng);
            let row = i * d..(i + 1) * d;
            for ((c, &o), dv) in current[row.clone()].iter_mut().zip(&origin[row]).zip(delta) {
                *c = (o + dv).clamp(0.0, 1.0);
            }
        }
    }

    // The unperturbed point always competes for best iterate.
    let base = evaluate(params, Tensor::matrix(n, d, origin.clone())?, &targets, cfg.objective)?;
    let initial_loss = base.losses.clone();
    let mut best_x = origin.clone();
    let mut best_loss = base.losses.clone();
    let mut best_pred = base.predictions.clone();
    let mut failed: Vec<Option<String>> = base
        .losses
        .iter()
        .map(|l| (!l.is_finite()).then(|| format!("non-finite initial loss {l}")))
        .collect();

    let mut eval = if cfg.random_start {
        evaluate(params, Tensor::matrix(n, d, current.clone())?, &targets, cfg.objective)?
    } else {
        base
    };
    for step in 0..=cfg.steps {
        for i in 0..n {
            if failed[i].is_some() {
                continue;
            }
            let l = eval.losses[i];
            if !l.is_finite() {
                failed[i] = Some(format!("non-finite loss {l} at step {step}"));
                continue;
            }
            if l < best_loss[i] {
                best_loss[i] = l;
                best_pred[i] = eval.predictions[i];
                best_x[i * d..(i + 1) * d].copy_from_slice(&current[i * d..(i + 1) * d]);
            }
        }
        if step == cfg.steps {
            break;
        }
        for i in 0..n {
            if failed[i].is_some() {
                continue;
            }
            let row = i * d..(i + 1) * d;
            let g = eval.grads.row(i);
            if g.iter().any(|v| !v.is_finite()) {
                failed[i] = Some(format!("non-finite gradient at step {step}"));
                continue;
            }
            let mut delta: Vec<f64> = current[row.clone()]
                .iter()
                .zip(&origin[row.clone()])
                .map(|(c, o)| c - o)
                .collect();
            match cfg.norm {
                Norm::Linf => {
                    for (dv, &gv) in delta.iter_mut().zip(g) {
                        *dv = (*dv - alpha * sign(gv)).clamp(-rho, rho);
                    }
                }
                Norm::L2 => {
                    let gn = norm_of(Norm::L2, g);
                    if gn > 0.0 {
                        delta.iter_mut().zip(g).for_each(|(dv, &gv)| *dv -= alpha * gv / gn);
                    }
                    project_l2(&mut delta, rho);
                }
            }
            for ((c, &o), dv) in current[row.clone()].iter_mut().zip(&origin[row]).zip(delta) {
                *c = (o + dv).clamp(0.0, 1.0);
            }
        }
        eval = evaluate(params, Tensor::matrix(n, d, current.clone())?, &targets, cfg.objective)?;
    }

    Ok((0..n)
        .map(|i| {
            let row = i * d..(i + 1) * d;
            match failed[i].take() {
                Some(error) => CorrectionResult {
                    corrected: origin[row].to_vec(),
                    loss: f64::NAN,
                    initial_loss: initial_loss[i],
                    success: false,
                    iterations: 0,
                    error: Some(error),
                },
                None => CorrectionResult {
                    corrected: best_x[row].to_vec(),
                    loss: best_loss[i],
                    initial_loss: initial_loss[i],
                    success: best_pred[i] == targets[i],
                    iterations: cfg.steps,
                    error: None,
                },
            }
        })
        .collect())
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn project_l2(delta: &mut [f64], rho: f64) {
    let n = norm_of(Norm::L2, delta);
    if n > rho {
        let s = rho / n;
        delta.iter_mut().for_each(|v| *v *= s);
    }
}

fn random_in_ball(norm: Norm, rho: f64, d: usize, rng: &mut rng::Rng) -> Vec<f64> {
    match norm {
        Norm::Linf => (0..d).map(|_| rng.random_range(-rho..=rho)).collect(),
        Norm::L2 => {
            let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
            let n = norm_of(Norm::L2, &v).max(f64::MIN_POSITIVE);
            let radius = rho * rng.random::<f64>().powf(1.0 / d as f64);
            v.iter_mut().for_each(|x| *x *= radius / n);
            project_l2(&mut v, rho);
            v
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_model, Layer, ModelSpec};

    /// Two-class linear model with logit_1 - logit_0 = w . x.
    fn logistic(w: &[f64]) -> ModelParams {
        let d = w.len();
        let mut weight = vec![0.0; d * 2];
        for (i, &wi) in w.iter().enumerate() {
            weight[i * 2 + 1] = wi;
        }
        ModelParams {
            spec: ModelSpec::new(d, vec![], 2).unwrap(),
            layers: vec![Layer {
                weight: Tensor::matrix(d, 2, weight).unwrap(),
                bias: Tensor::zeros(&[2]),
            }],
            init_seed: 0,
        }
    }

    fn model() -> ModelParams {
        init_model(&ModelSpec::new(9, vec![6], 3).unwrap(), 4).unwrap()
    }

    fn point(seed: u64) -> Vec<f64> {
        (0..9).map(|i| ((i as f64 + seed as f64) * 0.61).sin() * 0.45 + 0.5).collect()
    }

    #[test]
    fn zero_steps_is_identity() {
        let p = model();
        let x = point(1);
        let r = correct_instance(&p, &x, 2, &AttackConfig::linf(0.1, 0)).unwrap();
        assert_eq!(r.corrected, x);
        assert_eq!(r.loss, r.initial_loss);
        assert_eq!(r.iterations, 0);
    }

    #[test]
    fn one_linf_step_follows_logistic_gradient() {
        // CE towards class 1: dl/dx = -(1 - p1) w, so x moves by +alpha * sign(w).
        let w = [0.5, -2.0, 1.0, 0.0];
        let p = logistic(&w);
        let x = vec![0.5; 4];
        let cfg = AttackConfig {
            step_size: Some(0.05),
            ..AttackConfig::linf(0.1, 1)
        };
        let r = correct_instance(&p, &x, 1, &cfg).unwrap();
        let expected: Vec<f64> = w.iter().map(|&wi| 0.5 + 0.05 * sign(wi)).collect();
        assert_eq!(r.corrected, expected);
        assert!(r.loss < r.initial_loss);
    }

    #[test]
    fn budget_and_range_hold() {
        let p = model();
        for norm in [Norm::Linf, Norm::L2] {
            for random_start in [false, true] {
                let cfg = AttackConfig {
                    norm,
                    random_start,
                    seed: 3,
                    ..AttackConfig::linf(0.2, 15)
                };
                for s in 0..5 {
                    let x = point(s);
                    let r = correct_instance(&p, &x, (s % 3) as usize, &cfg).unwrap();
                    let delta = r.perturbation(&x);
                    assert!(norm_of(norm, &delta) <= 0.2 + 1e-9);
                    assert!(r.corrected.iter().all(|v| (0.0..=1.0).contains(v)));
                    assert!(r.loss <= r.initial_loss);
                }
            }
        }
    }

    #[test]
    fn clamping_at_the_box_edge() {
        let p = logistic(&[1.0, 1.0]);
        let x = vec![1.0, 0.98];
        let r = correct_instance(&p, &x, 1, &AttackConfig::linf(0.1, 5)).unwrap();
        assert_eq!(r.corrected[0], 1.0);
        assert_eq!(r.corrected[1], 1.0);
    }

    #[test]
    fn set_matches_single_and_keeps_order() {
        let p = model();
        let items: Vec<(Vec<f64>, usize)> = (0..7).map(|s| (point(s), (s % 3) as usize)).collect();
        let cfg = AttackConfig::l2(0.3, 10);
        let set = correct_set(&p, &items, &cfg).unwrap();
        assert_eq!(set.len(), 7);
        for ((x, y), r) in items.iter().zip(&set) {
            assert_eq!(&correct_instance(&p, x, *y, &cfg).unwrap(), r);
        }
        assert!(correct_set(&p, &[], &cfg).unwrap().is_empty());
    }

    #[test]
    fn bad_items_fail_individually() {
        let p = model();
        let items = vec![(point(0), 0), (point(1), 7), (point(2), 1)];
        let out = correct_set(&p, &items, &AttackConfig::linf(0.1, 3)).unwrap();
        assert!(out[1].error.is_some() && !out[1].success);
        assert!(out[0].error.is_none() && out[2].error.is_none());
        assert!(matches!(
            correct_instance(&p, &point(0), 3, &AttackConfig::default()),
            Err(Error::Label { .. })
        ));
    }

    #[test]
    fn larger_budget_never_worse() {
        let p = model();
        for s in 0..4 {
            let x = point(s);
            let small = correct_instance(&p, &x, 1, &AttackConfig::linf(0.05, 20)).unwrap();
            let large = correct_instance(&p, &x, 1, &AttackConfig::linf(0.1, 20)).unwrap();
            assert!(large.loss <= small.loss, "{} > {}", large.loss, small.loss);
        }
    }

    #[test]
    fn negative_probability_objective() {
        let p = model();
        let x = point(2);
        let cfg = AttackConfig {
            objective: AttackObjective::NegProbability,
            ..AttackConfig::linf(0.3, 20)
        };
        let r = correct_instance(&p, &x, 0, &cfg).unwrap();
        assert!(r.loss <= r.initial_loss);
        assert!((-1.0..=0.0).contains(&r.loss));
        let proba = p
            .predict_proba(&Tensor::matrix(1, 9, r.corrected.clone()).unwrap())
            .unwrap();
        assert!((proba.data()[0] + r.loss).abs() < 1e-12);
    }
}
