//! Oracles shared by the per-module suites and the acceptance run.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rramtopo::device::{reset_pair, DeviceSpec, DifferentialPairBank};
use rramtopo::metrics::{confusion, roc_pr_curves};
use rramtopo::nn::ops::*;
use rramtopo::nn::{backward, build_cnn, build_crnn, default_scalings, forward, ExactBackend, InputScaling, NetworkSpec};
use rramtopo::vmm::{matmul_exact, quantize_input, vmm_bit_sliced, QuantizationSpec, ReadSnapshot};
use rramtopo::Tensor;

// ---- finite differences ----

pub const GRAD_REL_TOL: f64 = 1e-4;
const H: f64 = 1e-5;

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Values bounded away from zero, for kinked ops.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    rand_tensor(rng, shape).map(|v| if v >= 0.0 { v + 0.05 } else { v - 0.05 })
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Norm-wise relative error, guarded against an all-zero gradient.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let scale = norm(analytic).max(norm(numeric));
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Central-difference gradient of the scalar `f` with respect to `x`.
fn numeric(x: &Tensor, f: impl Fn(&Tensor) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut p = x.clone();
            p.data_mut()[i] += H;
            let mut m = x.clone();
            m.data_mut()[i] -= H;
            (f(&p) - f(&m)) / (2.0 * H)
        })
        .collect()
}

fn err(analytic: &Tensor, numeric: &[f64]) -> f64 {
    rel_err(analytic.data(), numeric)
}

/// Worst relative error over `n` random conv instances (both gradients).
pub fn grad_conv(n: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..n {
        let (b, c, o) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..4));
        let (kh, kw) = (rng.random_range(1..4), rng.random_range(1..4));
        let (h, w) = (kh + rng.random_range(0..4), kw + rng.random_range(0..4));
        let x = rand_tensor(&mut rng, &[b, c, h, w]);
        let k = rand_tensor(&mut rng, &[o, c, kh, kw]);
        let y = conv2d_forward(&x, &k).unwrap();
        let r = rand_tensor(&mut rng, y.shape());
        let (dx, dk) = conv2d_backward(&x, &k, &r).unwrap();
        worst = worst.max(err(&dx, &numeric(&x, |x| dot(&conv2d_forward(x, &k).unwrap(), &r))));
        worst = worst.max(err(&dk, &numeric(&k, |k| dot(&conv2d_forward(&x, k).unwrap(), &r))));
    }
    worst
}

pub fn grad_maxpool(n: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..n {
        let (c, h, w) = (rng.random_range(1..3), 2 * rng.random_range(1..4), 2 * rng.random_range(1..4));
        // Distinct, well-separated values so no perturbation flips an argmax.
        let len = c * h * w;
        let mut vals: Vec<f64> = (0..len).map(|i| i as f64 * 0.01).collect();
        for i in (1..len).rev() {
            vals.swap(i, rng.random_range(0..=i));
        }
        let x = Tensor::from_vec(&[1, c, h, w], vals).unwrap();
        let (y, arg) = maxpool2x2_forward(&x).unwrap();
        let r = rand_tensor(&mut rng, y.shape());
        let dx = maxpool2x2_backward(&r, &arg, x.shape()).unwrap();
        worst = worst.max(err(&dx, &numeric(&x, |x| dot(&maxpool2x2_forward(x).unwrap().0, &r))));
    }
    worst
}

pub fn grad_relu(n: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..n {
        let len = rng.random_range(1..20);
        let x = away_from_zero(&mut rng, &[len]);
        let r = rand_tensor(&mut rng, &[len]);
        let dx = relu_backward(&x, &r).unwrap();
        worst = worst.max(err(&dx, &numeric(&x, |x| dot(&relu_forward(x), &r))));
    }
    worst
}

pub fn grad_tanh(n: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..n {
        let len = rng.random_range(1..20);
        let x = rand_tensor(&mut rng, &[len]).map(|v| 2.0 * v);
        let r = rand_tensor(&mut rng, &[len]);
        let dx = tanh_backward(&tanh_forward(&x), &r).unwrap();
        worst = worst.max(err(&dx, &numeric(&x, |x| dot(&tanh_forward(x), &r))));
    }
    worst
}

pub fn grad_fc(n: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..n {
        let (b, i, o) = (rng.random_range(1..4), rng.random_range(1..8), rng.random_range(1..8));
        let x = rand_tensor(&mut rng, &[b, i]);
        let w = rand_tensor(&mut rng, &[o, i]);
        let r = rand_tensor(&mut rng, &[b, o]);
        let (dx, dw) = fc_backward(&x, &w, &r).unwrap();
        worst = worst.max(err(&dx, &numeric(&x, |x| dot(&fc_forward(x, &w).unwrap(), &r))));
        worst = worst.max(err(&dw, &numeric(&w, |w| dot(&fc_forward(&x, w).unwrap(), &r))));
    }
    worst
}

pub fn grad_rnn_step(n: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for _ in 0..n {
        let (hid, inp) = (rng.random_range(1..6), rng.random_range(1..6));
        let x = rand_tensor(&mut rng, &[inp]);
        let hp = rand_tensor(&mut rng, &[hid]);
        let wih = rand_tensor(&mut rng, &[hid, inp]);
        let whh = rand_tensor(&mut rng, &[hid, hid]);
        let r = rand_tensor(&mut rng, &[hid]);
        let h = rnn_step(&x, &hp, &wih, &whh).unwrap();
        let (dx, dhp, dwih, dwhh) = rnn_step_backward(&x, &hp, &h, &wih, &whh, &r).unwrap();
        let f = |x: &Tensor, hp: &Tensor, a: &Tensor, b: &Tensor| dot(&rnn_step(x, hp, a, b).unwrap(), &r);
        worst = worst.max(err(&dx, &numeric(&x, |x| f(x, &hp, &wih, &whh))));
        worst = worst.max(err(&dhp, &numeric(&hp, |hp| f(&x, hp, &wih, &whh))));
        worst = worst.max(err(&dwih, &numeric(&wih, |w| f(&x, &hp, w, &whh))));
        worst = worst.max(err(&dwhh, &numeric(&whh, |w| f(&x, &hp, &wih, w))));
    }
    worst
}

/// The step average is linear, so each step's gradient is `r / T`.
pub fn grad_rnn_average(n: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..n {
        let hid = rng.random_range(1..6);
        let steps: Vec<Tensor> = (0..rng.random_range(1..5)).map(|_| rand_tensor(&mut rng, &[hid])).collect();
        let r = rand_tensor(&mut rng, &[hid]);
        let t = steps.len() as f64;
        for (s, base) in steps.iter().enumerate() {
            let f = |v: &Tensor| {
                let mut hs = steps.clone();
                hs[s] = v.clone();
                dot(&rnn_average(&hs).unwrap(), &r)
            };
            worst = worst.max(err(&r.map(|g| g / t), &numeric(base, f)));
        }
    }
    worst
}

pub fn grad_softmax_xent(n: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    for _ in 0..n {
        let k = rng.random_range(2..12);
        let z = rand_tensor(&mut rng, &[k]).map(|v| 4.0 * v);
        let label = rng.random_range(0..k);
        let (_, g) = softmax_xent(z.data(), label).unwrap();
        let g = Tensor::from_vec(&[k], g).unwrap();
        worst = worst.max(err(&g, &numeric(&z, |z| softmax_xent(z.data(), label).unwrap().0)));
    }
    worst
}

fn model_worst(spec: &NetworkSpec, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<Tensor> = spec
        .weight_slots()
        .iter()
        .map(|s| rand_tensor(&mut rng, &[s.rows, s.cols]).map(|v| v * (3.0 / s.rows as f64).sqrt()))
        .collect();
    let x = rand_tensor(&mut rng, &spec.input_shape).map(|v| v.abs());
    let scalings = default_scalings(spec, InputScaling::Dynamic);
    let label = rng.random_range(0..spec.classes().unwrap());
    let loss_of = |ws: &[Tensor]| {
        let t = forward(spec, &mut ExactBackend { weights: ws }, &scalings, &x).unwrap();
        softmax_xent(&t.logits, label).unwrap().0
    };
    let trace = forward(spec, &mut ExactBackend { weights: &weights }, &scalings, &x).unwrap();
    let (_, grads) = backward(&trace, &weights, label).unwrap();
    let mut worst = 0.0f64;
    for (slot, g) in grads.iter().enumerate() {
        let num = numeric(&weights[slot], |w| {
            let mut ws = weights.clone();
            ws[slot] = w.clone();
            loss_of(&ws)
        });
        worst = worst.max(err(g, &num));
    }
    worst
}

/// Whole-network backward (CNN and CRNN) against finite differences of the loss.
pub fn grad_networks(n: u64) -> f64 {
    let cnn = build_cnn(1.0 / 16.0).unwrap();
    let crnn = build_crnn(1.0 / 16.0).unwrap();
    (0..n).map(|s| model_worst(&cnn, 100 + s).max(model_worst(&crnn, 200 + s))).fold(0.0, f64::max)
}

/// `(name, worst relative error)` for every backward op.
pub fn gradient_suite(n: u64) -> Vec<(&'static str, f64)> {
    vec![
        ("conv2d", grad_conv(n)),
        ("maxpool2x2", grad_maxpool(n)),
        ("relu", grad_relu(n)),
        ("tanh", grad_tanh(n)),
        ("fully_connected", grad_fc(n)),
        ("rnn_step", grad_rnn_step(n)),
        ("rnn_average", grad_rnn_average(n)),
        ("softmax_xent", grad_softmax_xent(n)),
        ("networks", grad_networks(n)),
    ]
}

// ---- analogue VMM ----

pub const VMM_REL_TOL: f64 = 1e-9;

pub fn quiet_device() -> DeviceSpec {
    DeviceSpec { read_noise_cv: 0.0, ..Default::default() }
}

/// Formed bank with a random fraction of pairs pruned.
pub fn random_bank(rng: &mut ChaCha8Rng, rows: usize, cols: usize, seed: u64) -> DifferentialPairBank {
    let beta = rng.random_range(0.001..0.1);
    let mut b = DifferentialPairBank::new(rows, cols, quiet_device(), seed, 0, beta).unwrap();
    b.form().unwrap();
    let prune = rng.random_range(0.0..0.7);
    for r in 0..rows {
        for c in 0..cols {
            if rng.random_bool(prune) {
                reset_pair(&mut b, r, c).unwrap();
            }
        }
    }
    b
}

/// Worst relative deviation of the bit-sliced VMM from the exact product on
/// dequantized inputs over `banks` random banks up to 64×64.
pub fn vmm_oracle(banks: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for k in 0..banks {
        let (rows, cols) = (rng.random_range(1..=64), rng.random_range(1..=64));
        let mut bank = random_bank(&mut rng, rows, cols, k);
        let m = [3, 4, 6][k as usize % 3];
        let (lo, hi) = if k % 2 == 0 { (0.0, 1.0) } else { (-1.0, 1.0) };
        let q = QuantizationSpec::new(m, lo, hi).unwrap();
        let x: Vec<f64> = (0..rows).map(|_| rng.random_range(lo..hi)).collect();
        let xq = quantize_input(&x, &q).unwrap().dequantize();
        let want = matmul_exact(&ReadSnapshot::stored(&bank).weights(), &xq).unwrap();
        let got = vmm_bit_sliced(&mut bank, &x, &q).unwrap();
        let scale = want.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
        for (g, e) in got.iter().zip(&want) {
            worst = worst.max((g - e).abs() / scale);
        }
    }
    worst
}

/// Outputs exceeding `‖W[:,j]‖₁·lsb` against the exact product on the raw input.
pub fn quantization_bound_violations(m: u32, trials: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(500 + m as u64);
    let mut bad = 0;
    for k in 0..trials {
        let (rows, cols) = (rng.random_range(1..=32), rng.random_range(1..=16));
        let mut bank = random_bank(&mut rng, rows, cols, k);
        let (lo, hi) = if k % 2 == 0 { (0.0, 1.0) } else { (-1.0, 1.0) };
        let q = QuantizationSpec::new(m, lo, hi).unwrap();
        let x: Vec<f64> = (0..rows).map(|_| rng.random_range(lo..hi)).collect();
        let w = ReadSnapshot::stored(&bank).weights();
        let exact = matmul_exact(&w, &x).unwrap();
        let got = vmm_bit_sliced(&mut bank, &x, &q).unwrap();
        for (j, (g, t)) in got.iter().zip(&exact).enumerate() {
            let col_l1: f64 = (0..rows).map(|i| w.at2(i, j).abs()).sum();
            if (g - t).abs() > col_l1 * q.lsb() + 1e-12 {
                bad += 1;
            }
        }
    }
    bad
}

// ---- metrics ----

pub fn tally(pred: &[bool], truth: &[bool]) -> [u64; 4] {
    let mut t = [0u64; 4];
    for (p, l) in pred.iter().zip(truth) {
        let k = match (p, l) {
            (true, true) => 0,
            (true, false) => 1,
            (false, false) => 2,
            (false, true) => 3,
        };
        t[k] += 1;
    }
    t
}

pub fn frac(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Random cases on which any of the five formulas disagrees with a tally.
pub fn metric_mismatches(cases: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut bad = 0;
    for _ in 0..cases {
        let n = rng.random_range(1..=1000);
        let bias = rng.random_range(0.0..1.0);
        let truth: Vec<bool> = (0..n).map(|_| rng.random_bool(bias)).collect();
        let pred: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        let [tp, fp, tn, fn_] = tally(&pred, &truth);
        let c = confusion(&pred, &truth).unwrap();
        let (p, r) = (frac(tp, tp + fp), frac(tp, tp + fn_));
        let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        let ok = (c.tp, c.fp, c.tn, c.fn_) == (tp, fp, tn, fn_)
            && c.tpr_recall().value == r
            && c.fpr().value == frac(fp, fp + tn)
            && c.precision().value == p
            && c.f1().value == f1
            && c.accuracy().value == frac(tp + tn, n as u64);
        bad += !ok as usize;
    }
    bad
}

/// Threshold sweep over every cut `score ≥ t`, then trapezoid areas.
pub fn brute_auc(scores: &[f64], truth: &[bool]) -> (f64, f64) {
    let mut cuts: Vec<f64> = scores.to_vec();
    cuts.sort_by(|a, b| b.total_cmp(a));
    cuts.dedup();
    let pos = truth.iter().filter(|t| **t).count() as u64;
    let neg = truth.len() as u64 - pos;
    let mut roc = vec![(0.0, 0.0)];
    let mut pr = vec![(0.0, 1.0)];
    for t in cuts {
        let pred: Vec<bool> = scores.iter().map(|s| *s >= t).collect();
        let [tp, fp, _, _] = tally(&pred, truth);
        roc.push((frac(fp, neg), frac(tp, pos)));
        pr.push((frac(tp, pos), frac(tp, tp + fp)));
    }
    let area = |pts: &[(f64, f64)]| pts.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum::<f64>();
    (area(&roc), area(&pr))
}

/// Probability that a positive outranks a negative, ties counting half.
pub fn mann_whitney(scores: &[f64], truth: &[bool]) -> Option<f64> {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if truth[i] && !truth[j] {
                pairs += 1.0;
                wins += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    (pairs > 0.0).then(|| wins / pairs)
}

/// Every labelling of random tied score vectors for `n ≤ 8`.
/// Returns (cases, mismatches).
pub fn auc_enumeration() -> (usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (mut cases, mut bad) = (0, 0);
    for n in 1..=8usize {
        for _ in 0..6 {
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..5) as f64 / 4.0).collect();
            for mask in 0u32..(1 << n) {
                let truth: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
                let c = roc_pr_curves(&scores, &truth).unwrap();
                let (roc, pr) = brute_auc(&scores, &truth);
                let mw_ok = mann_whitney(&scores, &truth).is_none_or(|u| (c.auc_roc - u).abs() < 1e-12);
                if (c.auc_roc - roc).abs() >= 1e-12 || (c.auc_pr - pr).abs() >= 1e-12 || !mw_ok {
                    bad += 1;
                }
                cases += 1;
            }
        }
    }
    (cases, bad)
}
