use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ledger::{LayerCounters, ProgrammingLedger};
use crate::energy::ProgrammingEnergy;
use crate::error::{Error, Result};
use crate::grid::fmt6;

/// One report row. Programming counters are cumulative since formation;
/// row 0 describes the initialized network before any training step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_acc: f64,
    pub val_acc: f64,
    pub train_loss: Option<f64>,
    pub resets: u64,
    pub sets: u64,
    pub write_pulses: u64,
    pub write_ops: u64,
    /// Mean forward energy per validation inference, µJ.
    pub fwd_energy_uj: f64,
}

impl EpochRow {
    pub fn new(epoch: usize, train_acc: f64, val_acc: f64, train_loss: Option<f64>, totals: LayerCounters, fwd_energy_uj: f64) -> Self {
        EpochRow {
            epoch,
            train_acc,
            val_acc,
            train_loss,
            resets: totals.resets,
            sets: totals.sets,
            write_pulses: totals.write_pulses,
            write_ops: totals.write_ops,
            fwd_energy_uj,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// `topology` or `weights`.
    pub method: String,
    pub mode: Option<String>,
    pub seed: u64,
    pub t_w: Option<f64>,
    pub budget_ops: Option<u64>,
    pub rows: Vec<EpochRow>,
    pub test_acc: f64,
    pub test_energy_uj_per_sample: f64,
    pub ledger: ProgrammingLedger,
    pub programming_energy: ProgrammingEnergy,
    /// Pruned pairs per bank, one entry per row.
    pub pruned_counts: Vec<Vec<usize>>,
    pub expected_pruned: Vec<usize>,
    /// Mask/hardware agreement after each row's sync.
    pub coherent: Vec<bool>,
    pub final_thresholds: Vec<f64>,
}

impl TrainReport {
    pub fn total_operations(&self) -> u64 {
        self.ledger.total().operations()
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("epoch,train_acc,val_acc,resets,sets,write_pulses,fwd_energy_uJ,write_ops\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.epoch,
                fmt6(r.train_acc),
                fmt6(r.val_acc),
                r.resets,
                r.sets,
                r.write_pulses,
                fmt6(r.fwd_energy_uj),
                r.write_ops
            ));
        }
        out
    }

    /// Write `report.csv` and `summary.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv = dir.join("report.csv");
        std::fs::write(&csv, self.csv()).map_err(|e| Error::io(&csv, e))?;
        let json = dir.join("summary.json");
        std::fs::write(&json, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&json, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let p = dir.join("summary.json");
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
