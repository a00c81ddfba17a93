//! Edge-pruning topology optimization.
//!
//! The formed conductance is never tuned. Each edge carries a score; the
//! lowest-scoring `sparsity` fraction of every bank is pruned by resetting
//! its pair, and pairs whose score climbs back are set again.

use super::ledger::ProgrammingLedger;
use super::report::{EpochRow, TrainReport};
use super::scored::{mask_matches_hardware, score_delta, ScoredLayer};
use super::threshold::ThresholdState;
use super::{batch_gradients, epoch_order, evaluate, Splits};
use crate::config::{Reselect, RunConfig};
use crate::energy::programming_energy;
use crate::error::Result;
use crate::hw::HardwareNet;
use crate::rng::tag;

pub struct TopologyOutcome {
    pub report: TrainReport,
    pub layers: Vec<ScoredLayer>,
}

fn std_dev(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Scored layers for every bank with thresholds from `cfg`, before any pruning.
pub fn init_layers(net: &HardwareNet, cfg: &RunConfig) -> Result<Vec<ScoredLayer>> {
    let th = &cfg.topology.threshold;
    net.banks
        .iter()
        .enumerate()
        .map(|(slot, bank)| {
            let scores = super::scored::init_scores(bank)?;
            let t_init = th.t_init.unwrap_or(th.t_init_factor * std_dev(&scores));
            let state = ThresholdState::new(t_init, t_init * th.t_end_ratio, th.alpha)?;
            ScoredLayer::new(slot, bank, cfg.topology.sparsity, state)
        })
        .collect()
}

fn check(net: &HardwareNet, layers: &[ScoredLayer], report: &mut TrainReport) {
    report.pruned_counts.push(layers.iter().map(ScoredLayer::pruned).collect());
    report.coherent.push(layers.iter().all(|l| mask_matches_hardware(&net.banks[l.slot], &l.mask)));
}

/// Train the sub-network of `net` (already formed) for `cfg.epochs` epochs.
pub fn train_topology(net: &mut HardwareNet, splits: &Splits, cfg: &RunConfig, pool: &rayon::ThreadPool) -> Result<TopologyOutcome> {
    let tc = &cfg.topology;
    let mut layers = init_layers(net, cfg)?;
    let mut ledger = ProgrammingLedger::new(net.banks.len());
    for l in layers.iter_mut() {
        l.reselect(&mut net.banks[l.slot], &mut ledger.layers[l.slot])?;
    }
    ledger.record_epoch();

    let mut report = TrainReport {
        method: "topology".into(),
        mode: Some(match tc.reselect {
            Reselect::PerStep => "per-step".into(),
            Reselect::PerEpoch => "per-epoch".into(),
        }),
        seed: cfg.seed,
        t_w: None,
        budget_ops: None,
        rows: Vec::new(),
        test_acc: 0.0,
        test_energy_uj_per_sample: 0.0,
        ledger: ProgrammingLedger::default(),
        programming_energy: programming_energy(&ledger, &cfg.energy),
        pruned_counts: Vec::new(),
        expected_pruned: layers.iter().map(|l| super::scored::pruned_count(l.scores.len(), l.sparsity)).collect(),
        coherent: Vec::new(),
        final_thresholds: Vec::new(),
    };
    check(net, &layers, &mut report);

    let train = &splits.train;
    let val0 = evaluate(net, &splits.val, &cfg.energy, [cfg.seed, tag::EVAL, 0], pool)?;
    let tr0 = evaluate(net, train, &cfg.energy, [cfg.seed, tag::PROBE, 0], pool)?;
    report.rows.push(EpochRow::new(0, tr0.accuracy, val0.accuracy, None, ledger.total(), val0.energy_per_sample_uj()));
    let mut best = val0.accuracy;

    for epoch in 1..=cfg.epochs {
        let order = epoch_order(train.len(), cfg.seed, epoch as u64);
        let (mut correct, mut loss) = (0usize, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            let weights = net.stored_weights();
            let out = batch_gradients(net, &weights, train, batch, &cfg.energy, [cfg.seed, tag::TRAIN, epoch as u64], pool)?;
            correct += out.correct;
            loss += out.loss;
            for l in layers.iter_mut() {
                let delta = score_delta(out.grads[l.slot].data(), &l.weight_memory, tc.eta)?;
                l.apply_delta(&delta)?;
                if tc.reselect == Reselect::PerStep {
                    l.reselect(&mut net.banks[l.slot], &mut ledger.layers[l.slot])?;
                }
            }
        }
        if tc.reselect == Reselect::PerEpoch {
            for l in layers.iter_mut() {
                l.reselect(&mut net.banks[l.slot], &mut ledger.layers[l.slot])?;
            }
        }
        check(net, &layers, &mut report);
        ledger.record_epoch();

        let val = evaluate(net, &splits.val, &cfg.energy, [cfg.seed, tag::EVAL, epoch as u64], pool)?;
        let new_best = val.accuracy > best;
        if new_best {
            best = val.accuracy;
        }
        for l in layers.iter_mut() {
            l.threshold.decay(new_best);
        }
        let n = train.len().max(1) as f64;
        report.rows.push(EpochRow::new(epoch, correct as f64 / n, val.accuracy, Some(loss / n), ledger.total(), val.energy_per_sample_uj()));
    }

    let test = evaluate(net, &splits.test, &cfg.energy, [cfg.seed, tag::EVAL, u64::MAX], pool)?;
    report.test_acc = test.accuracy;
    report.test_energy_uj_per_sample = test.energy_per_sample_uj();
    report.programming_energy = programming_energy(&ledger, &cfg.energy);
    report.final_thresholds = layers.iter().map(|l| l.threshold.current).collect();
    report.ledger = ledger;
    Ok(TopologyOutcome { report, layers })
}
