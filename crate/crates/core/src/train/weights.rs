//! Weight-optimization baseline: SGD on the logical weights, with every
//! surviving update pushed to hardware by closed-loop writes.
//!
//! A pair holds `w` as a differential: the cell on the sign side of `w` is
//! programmed to `G_other + |w|/beta` and the other cell is kept at or
//! below the idle conductance.

use super::ledger::{LayerCounters, ProgrammingLedger};
use super::report::{EpochRow, TrainReport};
use super::threshold::gate_weight_update;
use super::{batch_gradients, epoch_order, evaluate, Splits};
use crate::config::{RunConfig, WoMode};
use crate::device::DifferentialPairBank;
use crate::energy::programming_energy;
use crate::error::{Error, Result};
use crate::hw::HardwareNet;
use crate::rng::tag;
use crate::tensor::Tensor;

pub struct WeightsOutcome {
    pub report: TrainReport,
    /// Digital copy of the weights the controller is aiming for.
    pub shadow: Vec<Tensor>,
}

/// Program pair `(r, c)` of `bank` to represent `w`.
pub fn write_weight(bank: &mut DifferentialPairBank, r: usize, c: usize, w: f64, idle_us: f64, counters: &mut LayerCounters) -> Result<()> {
    let tol = bank.g_plus.spec().write_tolerance;
    let (active, other) = if w >= 0.0 {
        (&mut bank.g_plus, &mut bank.g_minus)
    } else {
        (&mut bank.g_minus, &mut bank.g_plus)
    };
    if other.conductance(r, c) > idle_us * (1.0 + tol) {
        let o = other.closed_loop_write(r, c, idle_us)?;
        counters.write_ops += 1;
        counters.write_pulses += o.pulses as u64;
        counters.unconverged += !o.converged as u64;
    }
    let target = other.conductance(r, c) + w.abs() / bank.beta;
    let o = active.closed_loop_write(r, c, target)?;
    counters.write_ops += 1;
    counters.write_pulses += o.pulses as u64;
    counters.unconverged += !o.converged as u64;
    Ok(())
}

/// Update threshold that lets roughly `per_epoch` of the `magnitudes`
/// (one epoch's worth of non-zero |Δw|) through.
pub fn threshold_for_budget(magnitudes: &mut [f64], per_epoch: f64) -> f64 {
    if magnitudes.is_empty() || per_epoch >= magnitudes.len() as f64 {
        return 0.0;
    }
    if per_epoch < 1.0 {
        return f64::INFINITY;
    }
    magnitudes.sort_by(f64::total_cmp);
    magnitudes[magnitudes.len() - per_epoch as usize]
}

const CALIBRATION_ROUNDS: usize = 8;

/// Pick `T_w` so that one epoch spends about `per_epoch` operations.
///
/// A free probe epoch gives the |Δw| distribution and a first guess; gated
/// training moves less, so its gradients differ, and the guess is refined by
/// geometric bisection on replays of the first epoch with the candidate
/// threshold.
fn calibrate_threshold(step: &Step, net: &HardwareNet, shadow: &[Tensor], per_epoch: f64) -> Result<f64> {
    let probe = |t_w: f64, mags: Option<&mut Vec<f64>>| -> Result<f64> {
        let mut n = net.clone();
        let mut sh = shadow.to_vec();
        let mut scratch = ProgrammingLedger::new(net.banks.len());
        step.epoch(&mut n, &mut sh, t_w, 1, tag::TRAIN, &mut scratch, mags)?;
        Ok(scratch.total().operations() as f64)
    };
    let mut mags = Vec::new();
    let free_ops = probe(0.0, Some(&mut mags))?;
    if per_epoch >= free_ops {
        return Ok(0.0);
    }
    if per_epoch < 1.0 || mags.is_empty() {
        return Ok(f64::INFINITY);
    }
    let per_update = free_ops / mags.len() as f64;
    let guess = threshold_for_budget(&mut mags, per_epoch / per_update.max(1.0));
    let (mut lo, mut hi) = (guess / 100.0, guess * 10.0);
    let mut best = (f64::INFINITY, guess);
    let mut t = guess.clamp(lo, hi);
    for _ in 0..CALIBRATION_ROUNDS {
        let ops = probe(t, None)?;
        let miss = (ops.max(1.0) / per_epoch).ln().abs();
        if miss < best.0 {
            best = (miss, t);
        }
        if ops > per_epoch {
            lo = t;
        } else {
            hi = t;
        }
        t = (lo * hi).sqrt();
    }
    Ok(best.1)
}

struct Step<'a> {
    cfg: &'a RunConfig,
    splits: &'a Splits,
    pool: &'a rayon::ThreadPool,
}

impl Step<'_> {
    /// One epoch of SGD. Returns (correct, loss sum) and, if `collect` is
    /// set, every non-zero |Δw| before gating.
    fn epoch(
        &self,
        net: &mut HardwareNet,
        shadow: &mut [Tensor],
        t_w: f64,
        epoch: u64,
        purpose: u64,
        ledger: &mut ProgrammingLedger,
        mut collect: Option<&mut Vec<f64>>,
    ) -> Result<(usize, f64)> {
        let cfg = self.cfg;
        let train = &self.splits.train;
        let (mut correct, mut loss) = (0usize, 0.0);
        for batch in epoch_order(train.len(), cfg.seed, epoch).chunks(cfg.batch_size) {
            let weights = net.stored_weights();
            let out = batch_gradients(net, &weights, train, batch, &cfg.energy, [cfg.seed, purpose, epoch], self.pool)?;
            correct += out.correct;
            loss += out.loss;
            for (slot, g) in out.grads.iter().enumerate() {
                let delta: Vec<f64> = g.data().iter().map(|v| -cfg.weights.eta * v).collect();
                if let Some(c) = collect.as_deref_mut() {
                    c.extend(delta.iter().filter(|d| **d != 0.0).map(|d| d.abs()));
                }
                let gated = gate_weight_update(&delta, t_w);
                let bank = &mut net.banks[slot];
                let cols = bank.cols();
                let sh = shadow[slot].data_mut();
                for (i, d) in gated.iter().enumerate() {
                    if *d == 0.0 {
                        continue;
                    }
                    sh[i] += d;
                    if !sh[i].is_finite() {
                        return Err(Error::Numeric(format!("non-finite weight in slot {slot} (epoch {epoch})")));
                    }
                    write_weight(bank, i / cols, i % cols, sh[i], cfg.weights.idle_conductance_us, &mut ledger.layers[slot])?;
                }
            }
        }
        Ok((correct, loss))
    }
}

/// Train `net` (formed, dense) by weight optimization.
///
/// In free mode `T_w = 0`. In budget-matched mode `T_w` is chosen from one
/// probe epoch on a copy of the network so that the run spends about
/// `cfg.weights.budget_ops` programming operations.
pub fn train_weights(net: &mut HardwareNet, splits: &Splits, cfg: &RunConfig, pool: &rayon::ThreadPool) -> Result<WeightsOutcome> {
    let wc = &cfg.weights;
    let step = Step { cfg, splits, pool };
    let mut shadow = net.stored_weights();
    let t_w = match (wc.t_w, wc.mode) {
        (Some(t), _) => t,
        (None, WoMode::Free) => 0.0,
        (None, WoMode::BudgetMatched) => {
            let per_epoch = wc.budget_ops.unwrap_or(0) as f64 / cfg.epochs.max(1) as f64;
            calibrate_threshold(&step, net, &shadow, per_epoch)?
        }
    };

    let mut ledger = ProgrammingLedger::new(net.banks.len());
    ledger.record_epoch();
    let mut report = TrainReport {
        method: "weights".into(),
        mode: Some(wc.mode.as_str().into()),
        seed: cfg.seed,
        t_w: Some(t_w),
        budget_ops: wc.budget_ops.filter(|_| wc.mode == WoMode::BudgetMatched),
        rows: Vec::new(),
        test_acc: 0.0,
        test_energy_uj_per_sample: 0.0,
        ledger: ProgrammingLedger::default(),
        programming_energy: programming_energy(&ledger, &cfg.energy),
        pruned_counts: Vec::new(),
        expected_pruned: Vec::new(),
        coherent: Vec::new(),
        final_thresholds: vec![t_w; net.banks.len()],
    };
    let val0 = evaluate(net, &splits.val, &cfg.energy, [cfg.seed, tag::EVAL, 0], pool)?;
    let tr0 = evaluate(net, &splits.train, &cfg.energy, [cfg.seed, tag::PROBE, 0], pool)?;
    report.rows.push(EpochRow::new(0, tr0.accuracy, val0.accuracy, None, ledger.total(), val0.energy_per_sample_uj()));

    for epoch in 1..=cfg.epochs {
        let (correct, loss) = step.epoch(net, &mut shadow, t_w, epoch as u64, tag::TRAIN, &mut ledger, None)?;
        ledger.record_epoch();
        let val = evaluate(net, &splits.val, &cfg.energy, [cfg.seed, tag::EVAL, epoch as u64], pool)?;
        let n = splits.train.len().max(1) as f64;
        report.rows.push(EpochRow::new(epoch, correct as f64 / n, val.accuracy, Some(loss / n), ledger.total(), val.energy_per_sample_uj()));
    }

    let test = evaluate(net, &splits.test, &cfg.energy, [cfg.seed, tag::EVAL, u64::MAX], pool)?;
    report.test_acc = test.accuracy;
    report.test_energy_uj_per_sample = test.energy_per_sample_uj();
    report.programming_energy = programming_energy(&ledger, &cfg.energy);
    report.ledger = ledger;
    Ok(WeightsOutcome { report, shadow })
}
