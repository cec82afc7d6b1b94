//! Independent oracles: central differences, pairwise selection checks and
//! per-pixel loops written without reference to the library internals.

use inscorr::attack::{correct_instance, AttackConfig};
use inscorr::nn::{init_model, ModelSpec};
use inscorr::noise::{corruption_transform, Corruption};
use inscorr::select::{kept_count, select_small_loss};
use inscorr::tensor::{Elementwise, Operand, Tape, Tensor};
use proptest::prelude::*;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// `sum(w * ce(relu(x A + b) * m - 0.5 x A, y)) + p_target` as a scalar.
fn composite(tape: &mut Tape, x: &Tensor, a: &Tensor, b: &Tensor, m: &Tensor, labels: &[usize]) -> (inscorr::tensor::Var, [inscorr::tensor::Var; 4]) {
    let xv = tape.param(x.clone());
    let av = tape.param(a.clone());
    let bv = tape.param(b.clone());
    let mv = tape.param(m.clone());
    let z = tape.matmul(xv, av).unwrap();
    let zb = tape.add_bias(z, bv).unwrap();
    let r = tape.relu(zb);
    let g = tape.mul(r, mv).unwrap();
    let half = tape.scale(z, 0.5);
    let logits = tape.sub(g, half).unwrap();
    let shifted = tape.elementwise(Elementwise::Add, logits, Operand::Scalar(0.25)).unwrap();
    let ce = tape.softmax_cross_entropy(shifted, labels).unwrap();
    let weights: Vec<f64> = (0..labels.len()).map(|i| 0.5 + i as f64).collect();
    let l1 = tape.weighted_sum(ce, weights).unwrap();
    let p = tape.target_probability(shifted, labels).unwrap();
    let l2 = tape.sum(p);
    let total = tape.add(l1, l2).unwrap();
    (total, [xv, av, bv, mv])
}

fn matrix(rows: usize, cols: usize, vals: &[f64]) -> Tensor {
    Tensor::matrix(rows, cols, vals[..rows * cols].to_vec()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn tape_gradients_match_central_differences(
        vals in prop::collection::vec(-1.0f64..1.0, 64),
        b in 1usize..4, d in 1usize..5, c in 2usize..4,
        label_seed in 0usize..1000,
    ) {
        let x = matrix(b, d, &vals);
        let a = matrix(d, c, &vals[16..]);
        let bias = Tensor::vector(vals[40..40 + c].to_vec()).unwrap();
        let m = matrix(b, c, &vals[48..]);
        let labels: Vec<usize> = (0..b).map(|i| (label_seed + i * 7) % c).collect();
        let inputs = [x, a, bias, m];

        let mut tape = Tape::new();
        let (loss, vars) = composite(&mut tape, &inputs[0], &inputs[1], &inputs[2], &inputs[3], &labels);
        tape.backward(loss).unwrap();

        let value = |ins: &[Tensor; 4]| {
            let mut t = Tape::new();
            let (l, _) = composite(&mut t, &ins[0], &ins[1], &ins[2], &ins[3], &labels);
            t.value(l).data()[0]
        };
        const H: f64 = 1e-6;
        for (k, var) in vars.iter().enumerate() {
            let g = tape.grad(*var).unwrap().clone();
            for i in 0..g.len() {
                let mut plus = inputs.clone();
                plus[k].data_mut()[i] += H;
                let mut minus = inputs.clone();
                minus[k].data_mut()[i] -= H;
                let fd = (value(&plus) - value(&minus)) / (2.0 * H);
                prop_assert!(rel(g.data()[i], fd) < 1e-4 || (g.data()[i] - fd).abs() < 1e-6,
                    "input {k} entry {i}: analytic {} vs numeric {fd}", g.data()[i]);
            }
        }
    }

    #[test]
    fn selection_is_a_sorted_prefix(
        losses in prop::collection::vec(prop_oneof![(0u8..4).prop_map(|v| v as f64 * 0.5), 0.0f64..2.0], 1..12),
        p in 1usize..=10, q in 1usize..=10,
    ) {
        prop_assume!(p <= q);
        let n = losses.len();
        let sel = select_small_loss(&losses, p as f64 / q as f64).unwrap();
        prop_assert_eq!(sel.kept.len(), (p * n).div_ceil(q).max(1));
        prop_assert_eq!(sel.kept.len() + sel.discarded.len(), n);
        // every kept pair beats every discarded pair under (loss, index) order
        for &i in &sel.kept {
            for &j in &sel.discarded {
                prop_assert!((losses[i], i) < (losses[j], j));
            }
        }
    }

    #[test]
    fn kept_count_is_exact_ceiling(p in 0usize..=50, q in 1usize..=50, b in 1usize..=300) {
        prop_assume!(p > 0 && p <= q);
        prop_assert_eq!(kept_count(p as f64 / q as f64, b), (p * b).div_ceil(q));
    }

    #[test]
    fn resolution_is_block_mean(grid in prop::collection::vec(0.0f64..=1.0, 7 * 9), factor in 1usize..5) {
        let (h, w) = (7, 9);
        let out = corruption_transform(&grid, (h, w), &Corruption::Resolution { factor }, 0).unwrap();
        for r in 0..h {
            for c in 0..w {
                let (r0, c0) = (r / factor * factor, c / factor * factor);
                let mut sum = 0.0;
                let mut n = 0.0;
                for rr in r0..(r0 + factor).min(h) {
                    for cc in c0..(c0 + factor).min(w) {
                        sum += grid[rr * w + cc];
                        n += 1.0;
                    }
                }
                prop_assert!((out[r * w + c] - sum / n).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fog_is_row_blend(grid in prop::collection::vec(0.0f64..=1.0, 6 * 5), intensity in 0.0f64..=1.0, decay in 0.0f64..3.0) {
        let out = corruption_transform(&grid, (6, 5), &Corruption::Fog { intensity, decay }, 0).unwrap();
        for r in 0..6 {
            let t = intensity * (-decay * r as f64 / 6.0).exp();
            for c in 0..5 {
                let v = grid[r * 5 + c];
                prop_assert!((out[r * 5 + c] - (v + t * (1.0 - v))).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn horizontal_blur_is_mirrored_mean(grid in prop::collection::vec(0.0f64..=1.0, 4 * 6)) {
        let (h, w) = (4, 6);
        let out = corruption_transform(&grid, (h, w), &Corruption::MotionBlur { length: 3, angle_deg: 0.0 }, 0).unwrap();
        let at = |r: usize, c: isize| {
            let c = if c < 0 { -c } else if c >= w as isize { 2 * (w as isize - 1) - c } else { c };
            grid[r * w + c as usize]
        };
        for r in 0..h {
            for c in 0..w as isize {
                let want = (at(r, c - 1) + at(r, c) + at(r, c + 1)) / 3.0;
                prop_assert!((out[r * w + c as usize] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn occlusion_is_one_grey_rectangle(grid in prop::collection::vec(0.0f64..0.4, 10 * 10), seed in 0u64..1000) {
        let out = corruption_transform(&grid, (10, 10), &Corruption::Occlusion { fraction: 0.25 }, seed).unwrap();
        let changed: Vec<(usize, usize)> = (0..100).filter(|&i| out[i] != grid[i]).map(|i| (i / 10, i % 10)).collect();
        prop_assert_eq!(changed.len(), 25);
        let (r0, c0) = changed[0];
        for &(r, c) in &changed {
            prop_assert!(r >= r0 && r < r0 + 5 && c >= c0 && c < c0 + 5);
            prop_assert_eq!(out[r * 10 + c], 0.5);
        }
    }
}

#[test]
fn attack_direction_matches_numeric_gradient() {
    let params = init_model(&ModelSpec::new(12, vec![8], 3).unwrap(), 4).unwrap();
    let x: Vec<f64> = (0..12).map(|i| 0.3 + 0.03 * i as f64).collect();
    let target = 2;
    let loss = |v: &[f64]| params.losses(&Tensor::matrix(1, 12, v.to_vec()).unwrap(), &[target]).unwrap()[0];
    const H: f64 = 1e-6;
    let grad: Vec<f64> = (0..12)
        .map(|i| {
            let (mut p, mut m) = (x.clone(), x.clone());
            p[i] += H;
            m[i] -= H;
            (loss(&p) - loss(&m)) / (2.0 * H)
        })
        .collect();
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();

    let cfg = AttackConfig {
        step_size: Some(1e-3),
        ..AttackConfig::l2(1.0, 1)
    };
    let res = correct_instance(&params, &x, target, &cfg).unwrap();
    let step: Vec<f64> = res.corrected.iter().zip(&x).map(|(a, b)| (b - a) / 1e-3).collect();
    for (s, g) in step.iter().zip(&grad) {
        assert!(rel(*s, g / norm) < 1e-3, "{s} vs {}", g / norm);
    }
    assert!(res.loss < res.initial_loss);
}
