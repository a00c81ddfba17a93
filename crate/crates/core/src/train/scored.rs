//! Per-edge scores, bottom-k selection, and mask-to-hardware sync.

use serde::{Deserialize, Serialize};

use super::ledger::LayerCounters;
use super::threshold::ThresholdState;
use crate::device::{reset_pair, set_pair, CellState, DifferentialPairBank};
use crate::error::{Error, Result};
use crate::vmm::ReadSnapshot;

/// Scores and sub-network membership of one bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredLayer {
    pub slot: usize,
    pub scores: Vec<f64>,
    /// `true` = edge kept.
    pub mask: Vec<bool>,
    pub sparsity: f64,
    /// Last weight each edge had while conducting. Pruned pairs read as
    /// almost zero, but their score update still needs the value they would
    /// carry if reinstated.
    pub weight_memory: Vec<f64>,
    pub threshold: ThresholdState,
}

/// Number of edges pruned out of `n` at `sparsity`.
pub fn pruned_count(n: usize, sparsity: f64) -> usize {
    ((sparsity * n as f64).round() as usize).min(n)
}

/// `|beta·(G+ − G−)|` from stored conductance.
pub fn init_scores(bank: &DifferentialPairBank) -> Result<Vec<f64>> {
    if !bank.g_plus.is_electroformed() || !bank.g_minus.is_electroformed() {
        return Err(Error::State("scores need a formed bank".into()));
    }
    Ok(ReadSnapshot::stored(bank).weights().data().iter().map(|w| w.abs()).collect())
}

/// Mask out the `round(sparsity·n)` lowest scores; ties go to the lowest index.
pub fn select_subnetwork(scores: &[f64], sparsity: f64) -> Vec<bool> {
    let k = pruned_count(scores.len(), sparsity);
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let mut mask = vec![true; scores.len()];
    for &i in &order[..k] {
        mask[i] = false;
    }
    mask
}

/// One edge of the straight-through rule: `s − η·(∂L/∂I_j)·(w_ij·Z_i)`.
pub fn score_step(s: f64, eta: f64, node_grad: f64, weighted_out: f64) -> f64 {
    s - eta * node_grad * weighted_out
}

/// Batch score change `−η·Σ_samples (∂L/∂I_j·Z_i)·w_ij` for every edge, given
/// the batch-summed gradient with respect to the effective weights.
pub fn score_delta(weight_grad: &[f64], weights: &[f64], eta: f64) -> Result<Vec<f64>> {
    if weight_grad.len() != weights.len() {
        return Err(Error::dim(format!("{} gradients for {} weights", weight_grad.len(), weights.len())));
    }
    Ok(weight_grad.iter().zip(weights).map(|(g, w)| -eta * g * w).collect())
}

/// Reset newly pruned pairs and set newly reinstated ones.
pub fn sync_mask_to_hardware(
    bank: &mut DifferentialPairBank,
    old_mask: &[bool],
    new_mask: &[bool],
    counters: &mut LayerCounters,
) -> Result<()> {
    if old_mask.len() != bank.len() || new_mask.len() != bank.len() {
        return Err(Error::dim("mask does not match bank"));
    }
    let cols = bank.cols();
    for (i, (&old, &new)) in old_mask.iter().zip(new_mask).enumerate() {
        let (r, c) = (i / cols, i % cols);
        match (old, new) {
            (true, false) => counters.resets += reset_pair(bank, r, c)? as u64,
            (false, true) => counters.sets += set_pair(bank, r, c)? as u64,
            _ => {}
        }
    }
    Ok(())
}

/// Exhaustive scan: a pair is pruned in hardware exactly where the mask is 0.
pub fn mask_matches_hardware(bank: &DifferentialPairBank, mask: &[bool]) -> bool {
    if mask.len() != bank.len() {
        return false;
    }
    let cols = bank.cols();
    mask.iter().enumerate().all(|(i, &keep)| {
        let (r, c) = (i / cols, i % cols);
        if keep {
            bank.is_conducting(r, c)
        } else {
            bank.is_pruned(r, c)
        }
    })
}

impl ScoredLayer {
    pub fn new(slot: usize, bank: &DifferentialPairBank, sparsity: f64, threshold: ThresholdState) -> Result<Self> {
        if !(0.0..1.0).contains(&sparsity) {
            return Err(Error::Config(format!("sparsity must lie in [0,1), got {sparsity}")));
        }
        let scores = init_scores(bank)?;
        let weight_memory = ReadSnapshot::stored(bank).weights().into_data();
        Ok(ScoredLayer {
            slot,
            mask: vec![true; scores.len()],
            scores,
            sparsity,
            weight_memory,
            threshold,
        })
    }

    pub fn pruned(&self) -> usize {
        self.mask.iter().filter(|&&m| !m).count()
    }

    /// Re-select the sub-network and push the difference to hardware.
    /// Reinstated pairs come back with fresh conductance, which is recorded
    /// in the weight memory.
    pub fn reselect(&mut self, bank: &mut DifferentialPairBank, counters: &mut LayerCounters) -> Result<()> {
        let new_mask = select_subnetwork(&self.scores, self.sparsity);
        if new_mask == self.mask {
            return Ok(());
        }
        sync_mask_to_hardware(bank, &self.mask, &new_mask, counters)?;
        let cols = bank.cols();
        for (i, (&old, &new)) in self.mask.iter().zip(&new_mask).enumerate() {
            if !old && new {
                let (r, c) = (i / cols, i % cols);
                self.weight_memory[i] = bank.beta * (bank.g_plus.conductance(r, c) - bank.g_minus.conductance(r, c));
            }
        }
        self.mask = new_mask;
        Ok(())
    }

    /// Apply a gated score change.
    pub fn apply_delta(&mut self, delta: &[f64]) -> Result<usize> {
        if delta.len() != self.scores.len() {
            return Err(Error::dim("score delta does not match layer"));
        }
        let gated = super::threshold::gate_score_update(delta, self.threshold.current);
        let mut applied = 0;
        for (s, d) in self.scores.iter_mut().zip(&gated) {
            if *d != 0.0 {
                *s += d;
                applied += 1;
            }
        }
        if self.scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Numeric(format!("non-finite score in slot {}", self.slot)));
        }
        Ok(applied)
    }
}

/// Formed cells of every conducting pair, used to check weight freezing.
pub fn formed_conductances(bank: &DifferentialPairBank) -> Vec<Option<f64>> {
    let pick = |s: CellState, g: f64| if s == CellState::Formed { Some(g) } else { None };
    bank.g_plus
        .states()
        .iter()
        .zip(bank.g_plus.conductances())
        .zip(bank.g_minus.states().iter().zip(bank.g_minus.conductances()))
        .map(|((&sp, &gp), (&sm, &gm))| pick(sp, gp).or(pick(sm, gm)))
        .collect()
}
