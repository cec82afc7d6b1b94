//! Labelled datasets with hidden provenance, synthetic generators, splits
//! and the on-disk container.
//!
//! Provenance and true labels are diagnostic metadata. Training-path code
//! (selection, attack, losses) only ever reads instances and given labels.

use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::codec::{Reader, Writer};
use crate::rng::{self, tag};
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const DATASET_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"INSCDATA";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Clean,
    OpenSetReplaced,
    Corrupted,
}

impl Provenance {
    fn code(self) -> u8 {
        match self {
            Provenance::Clean => 0,
            Provenance::OpenSetReplaced => 1,
            Provenance::Corrupted => 2,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Provenance::Clean),
            1 => Some(Provenance::OpenSetReplaced),
            2 => Some(Provenance::Corrupted),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub instance: Vec<f64>,
    pub given_label: usize,
    pub provenance: Provenance,
    /// Absent for open-set instances, whose class lies outside the label space.
    pub true_label: Option<usize>,
}

impl Example {
    pub fn clean(instance: Vec<f64>, label: usize) -> Self {
        Self {
            instance,
            given_label: label,
            provenance: Provenance::Clean,
            true_label: Some(label),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    examples: Vec<Example>,
    dim: usize,
    classes: usize,
    image_shape: Option<(usize, usize)>,
}

impl Dataset {
    /// Validates every example. An empty example list is accepted so that
    /// split remainders (e.g. a zero-size validation set) stay representable.
    pub fn new(
        examples: Vec<Example>,
        dim: usize,
        classes: usize,
        image_shape: Option<(usize, usize)>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::contract("dataset dimension must be at least 1"));
        }
        if let Some((h, w)) = image_shape {
            if h * w != dim {
                return Err(Error::Dimension {
                    op: "dataset image shape",
                    left: vec![h, w],
                    right: vec![dim],
                });
            }
        }
        for (index, ex) in examples.iter().enumerate() {
            validate_example(index, ex, dim, classes)?;
        }
        Ok(Self {
            examples,
            dim,
            classes,
            image_shape,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn image_shape(&self) -> Option<(usize, usize)> {
        self.image_shape
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn example(&self, i: usize) -> &Example {
        &self.examples[i]
    }

    pub fn into_examples(self) -> Vec<Example> {
        self.examples
    }

    /// Same metadata, different examples.
    pub fn with_examples(&self, examples: Vec<Example>) -> Result<Self> {
        Self::new(examples, self.dim, self.classes, self.image_shape)
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            examples: indices.iter().map(|&i| self.examples[i].clone()).collect(),
            ..self.empty_like()
        }
    }

    fn empty_like(&self) -> Dataset {
        Dataset {
            examples: Vec::new(),
            dim: self.dim,
            classes: self.classes,
            image_shape: self.image_shape,
        }
    }

    /// `[indices.len(), d]` batch of instances.
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(&self.examples[i].instance);
        }
        Tensor::matrix(indices.len(), self.dim, data)
    }

    pub fn given_labels(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.examples[i].given_label).collect()
    }

    pub fn all_indices(&self) -> Vec<usize> {
        (0..self.len()).collect()
    }

    /// Count of examples per given label.
    pub fn label_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.classes];
        for ex in &self.examples {
            h[ex.given_label] += 1;
        }
        h
    }

    pub fn count_provenance(&self, p: Provenance) -> usize {
        self.examples.iter().filter(|e| e.provenance == p).count()
    }
}

fn validate_example(index: usize, ex: &Example, dim: usize, classes: usize) -> Result<()> {
    let fail = |reason: String| Err(Error::Data { index, reason });
    if ex.instance.len() != dim {
        return fail(format!("instance has {} values, expected {dim}", ex.instance.len()));
    }
    if let Some(v) = ex.instance.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return fail(format!("instance value {v} outside [0, 1]"));
    }
    if ex.given_label >= classes {
        return Err(Error::Label {
            index,
            label: ex.given_label,
            classes,
        });
    }
    match (ex.provenance, ex.true_label) {
        (Provenance::OpenSetReplaced, Some(_)) => {
            fail("open-set instance cannot carry a true label".into())
        }
        (Provenance::Clean, t) if t != Some(ex.given_label) => {
            fail("clean example must have true label equal to given label".into())
        }
        (_, Some(t)) if t >= classes => fail(format!("true label {t} out of range")),
        _ => Ok(()),
    }
}

/// Appearance parameters of the synthetic generator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// Maximum per-example translation of the template, in pixels.
    pub max_shift: usize,
    /// Standard deviation of additive per-pixel Gaussian jitter.
    pub pixel_noise: f64,
    /// Template amplitude is drawn uniformly from `[min_amplitude, 1]`.
    pub min_amplitude: f64,
    /// Background level is drawn uniformly from `[0, max_background]`.
    pub max_background: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            max_shift: 1,
            pixel_noise: 0.08,
            min_amplitude: 0.6,
            max_background: 0.1,
        }
    }
}

impl SynthConfig {
    /// Heavier jitter and fainter strokes. Clean-data accuracy of the default
    /// MLP sits near 0.9 instead of 1.0, which leaves room for methods to differ.
    pub fn hard() -> Self {
        Self {
            max_shift: 3,
            pixel_noise: 0.3,
            min_amplitude: 0.3,
            max_background: 0.3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pixel_noise >= 0.0 && self.pixel_noise.is_finite()) {
            return Err(Error::config("data.synth.pixel_noise", "must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.min_amplitude) {
            return Err(Error::config("data.synth.min_amplitude", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.max_background) {
            return Err(Error::config("data.synth.max_background", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Noise-free template of `class` on an `h x w` grid, centred at
/// `(cy + dy, cx + dx)`. Class `k` of `c` is a bar through the centre at
/// angle `k * pi / c`; the bar half-length alternates between full and short
/// for every other class so that neighbouring angles stay distinguishable
/// when `c` is large.
pub fn class_template(class: usize, classes: usize, shape: (usize, usize), dy: f64, dx: f64) -> Vec<f64> {
    let (h, w) = shape;
    let theta = std::f64::consts::PI * class as f64 / classes as f64;
    let (dir_y, dir_x) = (theta.sin(), theta.cos());
    let scale = h.min(w) as f64;
    let half_len = if class % 2 == 0 { 0.45 } else { 0.3 } * scale;
    let width = 0.08 * scale;
    let (cy, cx) = ((h as f64 - 1.0) / 2.0 + dy, (w as f64 - 1.0) / 2.0 + dx);
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let (py, px) = (r as f64 - cy, c as f64 - cx);
            let along = py * dir_y + px * dir_x;
            let across = -py * dir_x + px * dir_y;
            let overshoot = (along.abs() - half_len).max(0.0);
            let dist2 = across * across + overshoot * overshoot;
            out.push((-dist2 / (2.0 * width * width)).exp());
        }
    }
    out
}

/// `per_class` jittered instances of each of `classes` bar templates.
/// Examples are grouped by class; all are `Clean`.
pub fn generate_synthetic(
    classes: usize,
    per_class: usize,
    shape: (usize, usize),
    seed: u64,
) -> Result<Dataset> {
    generate_synthetic_with(&SynthConfig::default(), classes, per_class, shape, seed)
}

pub fn generate_synthetic_with(
    cfg: &SynthConfig,
    classes: usize,
    per_class: usize,
    shape: (usize, usize),
    seed: u64,
) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::Parameter {
            name: "classes",
            reason: "need at least 2 classes".into(),
        });
    }
    if per_class == 0 || shape.0 == 0 || shape.1 == 0 {
        return Err(Error::Parameter {
            name: "per_class",
            reason: "need at least one example on a non-empty grid".into(),
        });
    }
    cfg.validate()?;
    let mut rng = rng::stream(seed, tag::SYNTH_JITTER, 0);
    let noise = Normal::new(0.0, cfg.pixel_noise).map_err(|e| Error::Parameter {
        name: "pixel_noise",
        reason: e.to_string(),
    })?;
    let shift = cfg.max_shift as i64;
    let mut examples = Vec::with_capacity(classes * per_class);
    for class in 0..classes {
        for _ in 0..per_class {
            let dy = rng.random_range(-shift..=shift) as f64;
            let dx = rng.random_range(-shift..=shift) as f64;
            let amplitude = rng.random_range(cfg.min_amplitude..=1.0);
            let background = rng.random_range(0.0..=cfg.max_background);
            let instance = class_template(class, classes, shape, dy, dx)
                .into_iter()
                .map(|t| (background + amplitude * t + noise.sample(&mut rng)).clamp(0.0, 1.0))
                .collect();
            examples.push(Example::clean(instance, class));
        }
    }
    Dataset::new(examples, shape.0 * shape.1, classes, Some(shape))
}

/// Out-of-distribution instances: checkerboards, concentric rings and dense
/// stripe gratings. None resembles a single bar. Given labels are placeholder
/// zeros and provenance is `OpenSetReplaced`; only the instances are meant to
/// be consumed (by Type I injection).
pub fn generate_ood_source(shape: (usize, usize), count: usize, seed: u64) -> Result<Dataset> {
    if count == 0 {
        return Err(Error::Parameter {
            name: "count",
            reason: "need at least one instance".into(),
        });
    }
    let (h, w) = shape;
    let mut rng = rng::stream(seed, tag::OOD, 0);
    let noise = Normal::new(0.0, 0.05).expect("valid std");
    let mut examples = Vec::with_capacity(count);
    for i in 0..count {
        let amplitude = rng.random_range(0.6..=1.0);
        let background = rng.random_range(0.0..=0.2);
        let pattern: Vec<f64> = match i % 3 {
            0 => {
                let cell = rng.random_range(2..=4usize);
                let (oy, ox) = (rng.random_range(0..cell), rng.random_range(0..cell));
                grid(h, w, |r, c| (((r + oy) / cell + (c + ox) / cell) % 2) as f64)
            }
            1 => {
                let period = rng.random_range(3.0..5.0);
                let (cy, cx) = (
                    (h as f64 - 1.0) / 2.0 + rng.random_range(-2.0..2.0),
                    (w as f64 - 1.0) / 2.0 + rng.random_range(-2.0..2.0),
                );
                grid(h, w, |r, c| {
                    let d = ((r as f64 - cy).powi(2) + (c as f64 - cx).powi(2)).sqrt();
                    0.5 + 0.5 * (2.0 * std::f64::consts::PI * d / period).cos()
                })
            }
            _ => {
                let period = rng.random_range(2.5..4.0);
                let theta = rng.random_range(0.0..std::f64::consts::PI);
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                grid(h, w, |r, c| {
                    let u = r as f64 * theta.sin() + c as f64 * theta.cos();
                    0.5 + 0.5 * (2.0 * std::f64::consts::PI * u / period + phase).cos()
                })
            }
        };
        let instance = pattern
            .into_iter()
            .map(|p| (background + amplitude * p * (1.0 - background) + noise.sample(&mut rng)).clamp(0.0, 1.0))
            .collect();
        examples.push(Example {
            instance,
            given_label: 0,
            provenance: Provenance::OpenSetReplaced,
            true_label: None,
        });
    }
    // The placeholder label needs a two-class label space to validate.
    Dataset::new(examples, h * w, 2, Some(shape))
}

fn grid(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> Vec<f64> {
    (0..h).flat_map(|r| (0..w).map(move |c| (r, c))).map(|(r, c)| f(r, c)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub validation_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(validation_fraction: f64, seed: u64) -> Self {
        Self {
            validation_fraction,
            seed,
        }
    }
}

/// Splits off `round(fraction * n)` examples, chosen by a seeded shuffle,
/// as a validation set. Both parts keep the original relative order and
/// their (noisy) given labels.
pub fn split_validation(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    let f = spec.validation_fraction;
    if !(0.0..1.0).contains(&f) {
        return Err(Error::Parameter {
            name: "validation_fraction",
            reason: format!("{f} is outside [0, 1)"),
        });
    }
    let n = ds.len();
    let n_val = (f * n as f64).round() as usize;
    if n_val >= n {
        return Err(Error::contract(format!(
            "validation fraction {f} leaves no training examples out of {n}"
        )));
    }
    let mut order = ds.all_indices();
    order.shuffle(&mut rng::stream(spec.seed, tag::SPLIT, 0));
    let mut is_val = vec![false; n];
    order[..n_val].iter().for_each(|&i| is_val[i] = true);
    let (val, train): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| is_val[i]);
    Ok((ds.subset(&train), ds.subset(&val)))
}

/// A seeded permutation of `0..n` chunked into batches of `batch_size`
/// (the last one may be short).
pub fn minibatches(n: usize, batch_size: usize, epoch_seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Parameter {
            name: "batch_size",
            reason: "must be at least 1".into(),
        });
    }
    Ok(permutation(n, epoch_seed)
        .chunks(batch_size)
        .map(<[usize]>::to_vec)
        .collect())
}

pub(crate) fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::from_seed(seed));
    order
}

/// Encodes a dataset into the binary container.
///
/// Payload layout (little-endian):
///
/// ```text
/// u64 n | u64 d | u64 classes | u64 height | u64 width   (0, 0 when not a grid)
/// f64 instances[n * d]                                    (row-major)
/// per example: u64 given_label | u8 provenance | u64 true_label (u64::MAX = absent)
/// ```
pub fn encode_dataset(ds: &Dataset) -> Vec<u8> {
    let mut w = Writer::new();
    let (h, wd) = ds.image_shape.unwrap_or((0, 0));
    for v in [ds.len(), ds.dim, ds.classes, h, wd] {
        w.u64(v as u64);
    }
    for ex in &ds.examples {
        w.f64s(&ex.instance);
    }
    for ex in &ds.examples {
        w.u64(ex.given_label as u64);
        w.u8(ex.provenance.code());
        w.u64(ex.true_label.map_or(u64::MAX, |t| t as u64));
    }
    w.finish(MAGIC, DATASET_VERSION)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let (mut r, _version) = Reader::open(bytes, MAGIC, DATASET_VERSION, "dataset")?;
    let n = r.usize()?;
    let dim = r.usize()?;
    let classes = r.usize()?;
    let (h, w) = (r.usize()?, r.usize()?);
    let image_shape = (h != 0 || w != 0).then_some((h, w));
    let values = r.f64s(n.checked_mul(dim).ok_or_else(|| {
        Error::Format(format!("dataset: {n} x {dim} overflows"))
    })?)?;
    let mut examples = Vec::with_capacity(n);
    for (i, chunk) in values.chunks(dim.max(1)).enumerate().take(n) {
        let given_label = r.usize()?;
        let provenance = Provenance::from_code(r.u8()?).ok_or_else(|| {
            Error::Format(format!("dataset: bad provenance code at example {i}"))
        })?;
        let true_label = match r.u64()? {
            u64::MAX => None,
            t => Some(t as usize),
        };
        examples.push(Example {
            instance: chunk.to_vec(),
            given_label,
            provenance,
            true_label,
        });
    }
    r.finish()?;
    Dataset::new(examples, dim, classes, image_shape)
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, encode_dataset(ds)).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_dataset(&bytes)
}

/// CSV export: one row per example, `x0..x{d-1}` then `given_label`.
pub fn write_csv<W: std::io::Write>(ds: &Dataset, out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    let to_err = |e: csv::Error| Error::Format(format!("csv: {e}"));
    let mut header: Vec<String> = (0..ds.dim).map(|i| format!("x{i}")).collect();
    header.push("given_label".into());
    wtr.write_record(&header).map_err(to_err)?;
    for ex in &ds.examples {
        let mut row: Vec<String> = ex.instance.iter().map(f64::to_string).collect();
        row.push(ex.given_label.to_string());
        wtr.write_record(&row).map_err(to_err)?;
    }
    wtr.flush().map_err(|e| Error::Format(format!("csv: {e}")))
}

pub fn export_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut buf = std::io::BufWriter::new(file);
    write_csv(ds, &mut buf)?;
    buf.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn centroid(rows: &[&Vec<f64>]) -> Vec<f64> {
        let d = rows[0].len();
        let mut c = vec![0.0; d];
        for r in rows {
            c.iter_mut().zip(r.iter()).for_each(|(a, b)| *a += b);
        }
        c.iter_mut().for_each(|v| *v /= rows.len() as f64);
        c
    }

    fn dist(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    }

    fn class_stats(ds: &Dataset) -> (Vec<Vec<f64>>, f64) {
        let mut centroids = Vec::new();
        let mut spread: f64 = 0.0;
        for k in 0..ds.classes() {
            let rows: Vec<&Vec<f64>> = ds
                .examples()
                .iter()
                .filter(|e| e.given_label == k)
                .map(|e| &e.instance)
                .collect();
            let c = centroid(&rows);
            let mean_radius = rows.iter().map(|r| dist(r, &c)).sum::<f64>() / rows.len() as f64;
            spread = spread.max(mean_radius);
            centroids.push(c);
        }
        (centroids, spread)
    }

    #[test]
    fn synthetic_counts_and_determinism() {
        let a = generate_synthetic(2, 5, (16, 16), 3).unwrap();
        assert_eq!(a.len(), 10);
        assert_eq!(a.label_histogram(), vec![5, 5]);
        assert_eq!(a, generate_synthetic(2, 5, (16, 16), 3).unwrap());
        assert_ne!(a, generate_synthetic(2, 5, (16, 16), 4).unwrap());
        assert!(a.examples().iter().all(|e| e.provenance == Provenance::Clean));
    }

    #[test]
    fn synthetic_centroids_are_separated() {
        let ds = generate_synthetic(4, 200, (16, 16), 9).unwrap();
        let (centroids, spread) = class_stats(&ds);
        for i in 0..centroids.len() {
            for j in i + 1..centroids.len() {
                let d = dist(&centroids[i], &centroids[j]);
                assert!(d > spread, "classes {i},{j}: {d} <= {spread}");
            }
        }
    }

    #[test]
    fn ood_source_is_far_from_class_centroids() {
        let ds = generate_synthetic(4, 200, (16, 16), 9).unwrap();
        let (centroids, spread) = class_stats(&ds);
        let ood = generate_ood_source((16, 16), 20, 5).unwrap();
        assert_eq!(ood.len(), 20);
        assert!(ood.examples().iter().all(|e| e.true_label.is_none()));
        for e in ood.examples() {
            let nearest = centroids
                .iter()
                .map(|c| dist(&e.instance, c))
                .fold(f64::INFINITY, f64::min);
            assert!(nearest > spread, "{nearest} <= {spread}");
        }
        assert_eq!(ood, generate_ood_source((16, 16), 20, 5).unwrap());
    }

    #[test]
    fn split_sizes_and_partition() {
        let ds = generate_synthetic(4, 25, (8, 8), 1).unwrap();
        let (train, val) = split_validation(&ds, &SplitSpec::new(0.10, 2)).unwrap();
        assert_eq!((train.len(), val.len()), (90, 10));
        let mut all: Vec<Vec<u64>> = train
            .examples()
            .iter()
            .chain(val.examples())
            .map(|e| e.instance.iter().map(|v| v.to_bits()).collect())
            .collect();
        let mut orig: Vec<Vec<u64>> = ds
            .examples()
            .iter()
            .map(|e| e.instance.iter().map(|v| v.to_bits()).collect())
            .collect();
        all.sort();
        orig.sort();
        assert_eq!(all, orig);

        let (t0, v0) = split_validation(&ds, &SplitSpec::new(0.0, 2)).unwrap();
        assert_eq!(t0, ds);
        assert!(v0.is_empty());
    }

    #[test]
    fn split_rejects_empty_train() {
        let ds = generate_synthetic(2, 1, (4, 4), 1).unwrap();
        assert!(matches!(
            split_validation(&ds, &SplitSpec::new(0.9, 0)),
            Err(Error::Contract(_))
        ));
        assert!(split_validation(&ds, &SplitSpec::new(1.0, 0)).is_err());
    }

    #[test]
    fn minibatch_cover_and_seeding() {
        let b = minibatches(10, 4, 1).unwrap();
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        let mut all: Vec<usize> = b.concat();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(b, minibatches(10, 4, 1).unwrap());
        assert_ne!(b, minibatches(10, 4, 2).unwrap());
        assert!(minibatches(10, 0, 1).is_err());
    }

    #[test]
    fn file_round_trip_and_errors() {
        let mut ex = generate_synthetic(3, 4, (4, 4), 1).unwrap().into_examples();
        ex[0].provenance = Provenance::OpenSetReplaced;
        ex[0].true_label = None;
        ex[1].provenance = Provenance::Corrupted;
        let ds = Dataset::new(ex, 16, 3, Some((4, 4))).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        save_dataset(&ds, &path).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), ds);

        let bytes = encode_dataset(&ds);
        let mut m = bytes.clone();
        m[1] = b'X';
        assert!(matches!(decode_dataset(&m), Err(Error::Format(_))));
        let mut v = bytes.clone();
        v[8..12].copy_from_slice(&(DATASET_VERSION + 1).to_le_bytes());
        assert!(matches!(decode_dataset(&v), Err(Error::Version { .. })));
        assert!(matches!(
            decode_dataset(&bytes[..bytes.len() / 2]),
            Err(Error::Truncated(_))
        ));
        let mut c = bytes.clone();
        c[100] ^= 0x40;
        assert!(matches!(decode_dataset(&c), Err(Error::Checksum(_))));
    }

    #[test]
    fn csv_export_shape() {
        let ds = generate_synthetic(2, 2, (2, 2), 1).unwrap();
        let mut out = Vec::new();
        write_csv(&ds, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "x0,x1,x2,x3,given_label");
        assert_eq!(lines.len(), 5);
        assert!(lines[4].ends_with(",1"));
    }

    #[test]
    fn dataset_invariants_enforced() {
        let bad_range = Example::clean(vec![1.5], 0);
        assert!(Dataset::new(vec![bad_range], 1, 2, None).is_err());
        let open_with_label = Example {
            instance: vec![0.5],
            given_label: 0,
            provenance: Provenance::OpenSetReplaced,
            true_label: Some(1),
        };
        assert!(Dataset::new(vec![open_with_label], 1, 2, None).is_err());
        let clean_mismatch = Example {
            true_label: Some(1),
            ..Example::clean(vec![0.5], 0)
        };
        assert!(Dataset::new(vec![clean_mismatch], 1, 2, None).is_err());
        assert!(matches!(
            Dataset::new(vec![Example::clean(vec![0.5], 2)], 1, 2, None),
            Err(Error::Label { .. })
        ));
    }
}
