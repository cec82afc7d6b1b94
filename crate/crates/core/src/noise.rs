//! Open-set noise injection.
//!
//! Type I noise replaces instances with out-of-distribution ones while
//! keeping their given labels. Type II noise degrades in-distribution
//! instances with one of five image corruptions. In both cases exactly
//! `round(rate * n)` examples change and the label multiset is untouched.
//!
//! Which examples are picked depends only on `(seed, n)` for Type II, so the
//! affected set is the same across corruption kinds; the corruption itself
//! draws from a separate stream.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Example, Provenance};
use crate::rng::{self, tag};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    TypeI,
    Gaussian,
    Occlusion,
    Resolution,
    Fog,
    MotionBlur,
}

impl NoiseKind {
    pub const TYPE_II: [NoiseKind; 5] = [
        NoiseKind::Gaussian,
        NoiseKind::Occlusion,
        NoiseKind::Resolution,
        NoiseKind::Fog,
        NoiseKind::MotionBlur,
    ];

    pub fn is_type_i(self) -> bool {
        self == NoiseKind::TypeI
    }

    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::TypeI => "type-i",
            NoiseKind::Gaussian => "gaussian",
            NoiseKind::Occlusion => "occlusion",
            NoiseKind::Resolution => "resolution",
            NoiseKind::Fog => "fog",
            NoiseKind::MotionBlur => "motion-blur",
        }
    }
}

impl std::fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Kind-specific corruption strengths. Only the field matching the noise
/// kind is read.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseParams {
    pub gaussian_sigma: f64,
    pub occlusion_fraction: f64,
    pub resolution_factor: usize,
    pub fog_intensity: f64,
    pub fog_decay: f64,
    pub blur_length: usize,
    pub blur_angle_deg: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            gaussian_sigma: 0.25,
            occlusion_fraction: 0.25,
            resolution_factor: 4,
            fog_intensity: 0.8,
            fog_decay: 1.0,
            blur_length: 5,
            blur_angle_deg: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    /// Noise rate: fraction of examples affected, in `[0, 1)`.
    pub rate: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub params: NoiseParams,
}

impl NoiseSpec {
    pub fn new(kind: NoiseKind, rate: f64, seed: u64) -> Self {
        Self {
            kind,
            rate,
            seed,
            params: NoiseParams::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.rate) {
            return Err(Error::config("noise.rate", format!("{} is outside [0, 1)", self.rate)));
        }
        if !self.kind.is_type_i() {
            self.corruption()?.validate()?;
        }
        Ok(())
    }

    /// The transform for a Type II kind.
    pub fn corruption(&self) -> Result<Corruption> {
        let p = &self.params;
        Ok(match self.kind {
            NoiseKind::TypeI => {
                return Err(Error::contract("Type I noise has no image corruption"))
            }
            NoiseKind::Gaussian => Corruption::Gaussian {
                sigma: p.gaussian_sigma,
            },
            NoiseKind::Occlusion => Corruption::Occlusion {
                fraction: p.occlusion_fraction,
            },
            NoiseKind::Resolution => Corruption::Resolution {
                factor: p.resolution_factor,
            },
            NoiseKind::Fog => Corruption::Fog {
                intensity: p.fog_intensity,
                decay: p.fog_decay,
            },
            NoiseKind::MotionBlur => Corruption::MotionBlur {
                length: p.blur_length,
                angle_deg: p.blur_angle_deg,
            },
        })
    }

    pub fn affected_count(&self, n: usize) -> usize {
        (self.rate * n as f64).round() as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Corruption {
    /// Additive i.i.d. `N(0, sigma^2)` per pixel.
    Gaussian { sigma: f64 },
    /// A random axis-aligned rectangle covering `fraction` of the area set to 0.5.
    Occlusion { fraction: f64 },
    /// Block-average downsample by `factor`, nearest-neighbour upsample.
    Resolution { factor: usize },
    /// Blend towards white haze, strongest at the top row.
    Fog { intensity: f64, decay: f64 },
    /// Normalized line kernel of `length` taps at `angle_deg`, reflect padding.
    MotionBlur { length: usize, angle_deg: f64 },
}

impl Corruption {
    pub fn validate(&self) -> Result<()> {
        let bad = |name: &'static str, reason: &str| {
            Err(Error::Parameter {
                name,
                reason: reason.into(),
            })
        };
        match *self {
            Corruption::Gaussian { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => {
                bad("gaussian_sigma", "must be finite and non-negative")
            }
            Corruption::Occlusion { fraction } if !(0.0..=1.0).contains(&fraction) => {
                bad("occlusion_fraction", "must lie in [0, 1]")
            }
            Corruption::Resolution { factor: 0 } => bad("resolution_factor", "must be at least 1"),
            Corruption::Fog { intensity, .. } if !(0.0..=1.0).contains(&intensity) => {
                bad("fog_intensity", "must lie in [0, 1]")
            }
            Corruption::Fog { decay, .. } if !(decay >= 0.0 && decay.is_finite()) => {
                bad("fog_decay", "must be finite and non-negative")
            }
            Corruption::MotionBlur { length: 0, .. } => bad("blur_length", "must be at least 1"),
            Corruption::MotionBlur { angle_deg, .. } if !angle_deg.is_finite() => {
                bad("blur_angle_deg", "must be finite")
            }
            _ => Ok(()),
        }
    }
}

/// Applies `corruption` to a row-major `h x w` grid; output is clamped to `[0, 1]`.
pub fn corruption_transform(
    grid: &[f64],
    shape: (usize, usize),
    corruption: &Corruption,
    seed: u64,
) -> Result<Vec<f64>> {
    corruption.validate()?;
    let (h, w) = shape;
    if h * w != grid.len() || grid.is_empty() {
        return Err(Error::Dimension {
            op: "corruption_transform",
            left: vec![h, w],
            right: vec![grid.len()],
        });
    }
    let mut rng = rng::from_seed(seed);
    let out: Vec<f64> = match *corruption {
        Corruption::Gaussian { sigma } => {
            let normal = Normal::new(0.0, sigma).expect("validated sigma");
            grid.iter().map(|&v| v + normal.sample(&mut rng)).collect()
        }
        Corruption::Occlusion { fraction } => {
            let side = fraction.sqrt();
            let ph = ((h as f64 * side).round() as usize).min(h);
            let pw = ((w as f64 * side).round() as usize).min(w);
            let mut out = grid.to_vec();
            if ph > 0 && pw > 0 {
                let top = rng.random_range(0..=h - ph);
                let left = rng.random_range(0..=w - pw);
                for r in top..top + ph {
                    out[r * w + left..r * w + left + pw].fill(0.5);
                }
            }
            out
        }
        Corruption::Resolution { factor } => {
            let (bh, bw) = (h.div_ceil(factor), w.div_ceil(factor));
            let mut block = vec![0.0; bh * bw];
            let mut count = vec![0usize; bh * bw];
            for r in 0..h {
                for c in 0..w {
                    let b = (r / factor) * bw + c / factor;
                    block[b] += grid[r * w + c];
                    count[b] += 1;
                }
            }
            block.iter_mut().zip(&count).for_each(|(s, &n)| *s /= n as f64);
            (0..h * w)
                .map(|i| block[(i / w / factor) * bw + (i % w) / factor])
                .collect()
        }
        Corruption::Fog { intensity, decay } => grid
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let t = intensity * (-decay * (i / w) as f64 / h as f64).exp();
                (1.0 - t) * v + t * 1.0
            })
            .collect(),
        Corruption::MotionBlur { length, angle_deg } => {
            let taps = blur_taps(length, angle_deg);
            let weight = 1.0 / length as f64;
            let mut out = vec![0.0; h * w];
            for r in 0..h {
                for c in 0..w {
                    out[r * w + c] = taps
                        .iter()
                        .map(|&(dy, dx)| {
                            let rr = reflect(r as isize + dy, h);
                            let cc = reflect(c as isize + dx, w);
                            weight * grid[rr * w + cc]
                        })
                        .sum();
                }
            }
            out
        }
    };
    Ok(out.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
}

/// Integer offsets of a centred line kernel. Angle 0 is horizontal.
pub fn blur_taps(length: usize, angle_deg: f64) -> Vec<(isize, isize)> {
    let (s, c) = angle_deg.to_radians().sin_cos();
    (0..length)
        .map(|i| {
            let t = i as f64 - (length as f64 - 1.0) / 2.0;
            ((t * s).round() as isize, (t * c).round() as isize)
        })
        .collect()
}

/// Mirror index into `0..n` without repeating the edge sample.
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

/// Replaces `round(rate * n)` instances with distinct out-of-distribution
/// instances, spread over the given-label classes as evenly as possible.
pub fn inject_type1(ds: &Dataset, ood: &Dataset, spec: &NoiseSpec) -> Result<Dataset> {
    if !spec.kind.is_type_i() {
        return Err(Error::contract(format!(
            "inject_type1 called with {} noise",
            spec.kind
        )));
    }
    spec.validate()?;
    let k = spec.affected_count(ds.len());
    if ood.len() < k {
        return Err(Error::Capacity {
            needed: k,
            available: ood.len(),
        });
    }
    if k > 0 && ood.dim() != ds.dim() {
        return Err(Error::Dimension {
            op: "inject_type1",
            left: vec![ds.dim()],
            right: vec![ood.dim()],
        });
    }

    let mut rng = rng::stream(spec.seed, tag::NOISE_PICK, 0);
    let classes = ds.classes();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, ex) in ds.examples().iter().enumerate() {
        members[ex.given_label].push(i);
    }
    let quotas = balanced_quotas(k, &members.iter().map(Vec::len).collect::<Vec<_>>(), &mut rng);
    let mut chosen = Vec::with_capacity(k);
    for (m, q) in members.iter_mut().zip(quotas) {
        m.shuffle(&mut rng);
        chosen.extend_from_slice(&m[..q]);
    }
    chosen.sort_unstable();

    let mut pool = ood.all_indices();
    pool.shuffle(&mut rng);
    let mut examples = ds.examples().to_vec();
    for (&target, &source) in chosen.iter().zip(&pool) {
        let ex = &mut examples[target];
        ex.instance = ood.example(source).instance.clone();
        ex.provenance = Provenance::OpenSetReplaced;
        ex.true_label = None;
    }
    ds.with_examples(examples)
}

/// Splits `k` over classes as evenly as divisibility and class sizes allow.
/// Remainder slots go to a seeded random order of classes.
fn balanced_quotas(k: usize, sizes: &[usize], rng: &mut rng::Rng) -> Vec<usize> {
    let mut quotas = vec![0; sizes.len()];
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.shuffle(rng);
    let mut left = k;
    while left > 0 {
        let open: Vec<usize> = order.iter().copied().filter(|&c| quotas[c] < sizes[c]).collect();
        if open.is_empty() {
            break;
        }
        let share = left / open.len();
        if share == 0 {
            for &c in open.iter().take(left) {
                quotas[c] += 1;
            }
            break;
        }
        for &c in &open {
            let add = share.min(sizes[c] - quotas[c]);
            quotas[c] += add;
            left -= add;
        }
    }
    quotas
}

/// Corrupts `round(rate * n)` uniformly chosen examples.
pub fn inject_type2(ds: &Dataset, spec: &NoiseSpec) -> Result<Dataset> {
    if spec.kind.is_type_i() {
        return Err(Error::contract("inject_type2 called with Type I noise"));
    }
    spec.validate()?;
    let shape = ds
        .image_shape()
        .ok_or_else(|| Error::contract("Type II noise needs instances with an image shape"))?;
    let corruption = spec.corruption()?;
    let chosen = pick_uniform(ds.len(), spec.affected_count(ds.len()), spec.seed);
    let mut examples: Vec<Example> = ds.examples().to_vec();
    for &i in &chosen {
        let ex = &mut examples[i];
        let seed = rng::derive(spec.seed, tag::NOISE_TRANSFORM, i as u64);
        ex.instance = corruption_transform(&ex.instance, shape, &corruption, seed)?;
        ex.provenance = Provenance::Corrupted;
    }
    ds.with_examples(examples)
}

fn pick_uniform(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, tag::NOISE_PICK, 1));
    let mut chosen = idx[..k].to_vec();
    chosen.sort_unstable();
    chosen
}

/// Dispatches on the noise kind; `ood` is required for Type I only.
pub fn inject(ds: &Dataset, ood: Option<&Dataset>, spec: &NoiseSpec) -> Result<Dataset> {
    if spec.kind.is_type_i() {
        let ood = ood.ok_or_else(|| Error::contract("Type I noise needs an OOD source"))?;
        inject_type1(ds, ood, spec)
    } else {
        inject_type2(ds, spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_ood_source, generate_synthetic};

    fn base() -> Dataset {
        generate_synthetic(4, 25, (16, 16), 1).unwrap()
    }

    #[test]
    fn type1_counts_and_labels() {
        let ds = base();
        let ood = generate_ood_source((16, 16), 40, 2).unwrap();
        let out = inject_type1(&ds, &ood, &NoiseSpec::new(NoiseKind::TypeI, 0.2, 3)).unwrap();
        assert_eq!(out.count_provenance(Provenance::OpenSetReplaced), 20);
        assert_eq!(out.count_provenance(Provenance::Clean), 80);
        assert_eq!(out.label_histogram(), ds.label_histogram());
        // 20 over 4 equal classes: exactly 5 each
        for k in 0..4 {
            let n = out
                .examples()
                .iter()
                .filter(|e| e.given_label == k && e.provenance == Provenance::OpenSetReplaced)
                .count();
            assert_eq!(n, 5);
        }
        let zero = inject_type1(&ds, &ood, &NoiseSpec::new(NoiseKind::TypeI, 0.0, 3)).unwrap();
        assert_eq!(zero, ds);
    }

    #[test]
    fn type1_uses_distinct_ood_instances() {
        let ds = base();
        let ood = generate_ood_source((16, 16), 40, 2).unwrap();
        let out = inject_type1(&ds, &ood, &NoiseSpec::new(NoiseKind::TypeI, 0.4, 3)).unwrap();
        let mut used: Vec<Vec<u64>> = out
            .examples()
            .iter()
            .filter(|e| e.provenance == Provenance::OpenSetReplaced)
            .map(|e| e.instance.iter().map(|v| v.to_bits()).collect())
            .collect();
        let total = used.len();
        used.sort();
        used.dedup();
        assert_eq!(used.len(), total);
    }

    #[test]
    fn type1_capacity_error() {
        let ds = base();
        let ood = generate_ood_source((16, 16), 10, 2).unwrap();
        assert!(matches!(
            inject_type1(&ds, &ood, &NoiseSpec::new(NoiseKind::TypeI, 0.2, 3)),
            Err(Error::Capacity { needed: 20, available: 10 })
        ));
    }

    #[test]
    fn quotas_respect_class_sizes() {
        let mut rng = rng::from_seed(0);
        let q = balanced_quotas(10, &[1, 10, 10], &mut rng);
        assert_eq!(q.iter().sum::<usize>(), 10);
        assert!(q[0] <= 1);
        assert!(q[1].abs_diff(q[2]) <= 1);
    }

    #[test]
    fn type2_picks_same_examples_for_every_kind() {
        let ds = base();
        let picks: Vec<Vec<usize>> = NoiseKind::TYPE_II
            .iter()
            .map(|&k| {
                let out = inject_type2(&ds, &NoiseSpec::new(k, 0.4, 9)).unwrap();
                assert_eq!(out.count_provenance(Provenance::Corrupted), 40);
                assert_eq!(out.label_histogram(), ds.label_histogram());
                assert!(out
                    .examples()
                    .iter()
                    .all(|e| e.true_label == Some(e.given_label)));
                out.examples()
                    .iter()
                    .enumerate()
                    .filter(|(_, e)| e.provenance == Provenance::Corrupted)
                    .map(|(i, _)| i)
                    .collect()
            })
            .collect();
        assert!(picks.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn type2_requires_image_shape() {
        let ds = base();
        let flat = Dataset::new(ds.examples().to_vec(), 256, 4, None).unwrap();
        assert!(matches!(
            inject_type2(&flat, &NoiseSpec::new(NoiseKind::Fog, 0.2, 1)),
            Err(Error::Contract(_))
        ));
        assert!(inject_type2(&ds, &NoiseSpec::new(NoiseKind::TypeI, 0.2, 1)).is_err());
    }

    fn ramp(h: usize, w: usize) -> Vec<f64> {
        (0..h * w).map(|i| (i as f64 * 0.37).sin() * 0.5 + 0.5).collect()
    }

    #[test]
    fn degenerate_parameters_are_identities() {
        let g = ramp(16, 16);
        for c in [
            Corruption::Gaussian { sigma: 0.0 },
            Corruption::Fog { intensity: 0.0, decay: 1.0 },
            Corruption::MotionBlur { length: 1, angle_deg: 30.0 },
            Corruption::Resolution { factor: 1 },
            Corruption::Occlusion { fraction: 0.0 },
        ] {
            assert_eq!(corruption_transform(&g, (16, 16), &c, 5).unwrap(), g, "{c:?}");
        }
    }

    #[test]
    fn full_occlusion_is_grey() {
        let g = ramp(8, 8);
        let out =
            corruption_transform(&g, (8, 8), &Corruption::Occlusion { fraction: 1.0 }, 1).unwrap();
        assert!(out.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn occlusion_area_matches_fraction() {
        let g = vec![0.0; 256];
        let out =
            corruption_transform(&g, (16, 16), &Corruption::Occlusion { fraction: 0.25 }, 3).unwrap();
        assert_eq!(out.iter().filter(|&&v| v == 0.5).count(), 64);
    }

    #[test]
    fn resolution_matches_pixel_loop() {
        let (h, w, k) = (16, 16, 2);
        let g = ramp(h, w);
        let out = corruption_transform(&g, (h, w), &Corruption::Resolution { factor: k }, 0).unwrap();
        for r in 0..h {
            for c in 0..w {
                let (br, bc) = (r / k * k, c / k * k);
                let mut s = 0.0;
                for rr in br..br + k {
                    for cc in bc..bc + k {
                        s += g[rr * w + cc];
                    }
                }
                let expected = s / (k * k) as f64;
                assert!((out[r * w + c] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fog_profile() {
        let g = vec![0.0; 16];
        let out = corruption_transform(
            &g,
            (4, 4),
            &Corruption::Fog { intensity: 0.8, decay: 1.0 },
            0,
        )
        .unwrap();
        for r in 0..4 {
            let t = 0.8 * (-(r as f64) / 4.0).exp();
            assert!((out[r * 4] - t).abs() < 1e-15);
        }
    }

    #[test]
    fn blur_spreads_impulse_along_line() {
        let (h, w) = (15, 15);
        let mut g = vec![0.0; h * w];
        g[7 * w + 7] = 1.0;
        for (length, angle) in [(5, 0.0), (5, 90.0), (3, 45.0)] {
            let out = corruption_transform(
                &g,
                (h, w),
                &Corruption::MotionBlur { length, angle_deg: angle },
                0,
            )
            .unwrap();
            let total: f64 = out.iter().sum();
            assert!((total - 1.0).abs() < 1e-9);
            let lit: Vec<(usize, usize)> = (0..h * w)
                .filter(|&i| out[i] > 0.0)
                .map(|i| (i / w, i % w))
                .collect();
            assert_eq!(lit.len(), length);
            for (r, c) in lit {
                assert!((out[r * w + c] - 1.0 / length as f64).abs() < 1e-12);
                if angle == 0.0 {
                    assert_eq!(r, 7);
                } else if angle == 90.0 {
                    assert_eq!(c, 7);
                } else {
                    assert_eq!(r as isize - 7, c as isize - 7);
                }
            }
        }
    }

    #[test]
    fn parameter_errors() {
        let g = ramp(4, 4);
        for c in [
            Corruption::Gaussian { sigma: -0.1 },
            Corruption::Resolution { factor: 0 },
            Corruption::MotionBlur { length: 0, angle_deg: 0.0 },
            Corruption::Occlusion { fraction: 1.5 },
        ] {
            assert!(matches!(
                corruption_transform(&g, (4, 4), &c, 0),
                Err(Error::Parameter { .. })
            ));
        }
    }

    #[test]
    fn reflect_indexing() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(-2, 5), 2);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(6, 5), 2);
        assert_eq!(reflect(3, 5), 3);
        assert_eq!(reflect(-4, 1), 0);
    }
}
