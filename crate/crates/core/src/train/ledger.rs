use serde::{Deserialize, Serialize};

/// Programming operations applied to one bank.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCounters {
    pub resets: u64,
    pub sets: u64,
    /// Pulses spent in closed-loop writes.
    pub write_pulses: u64,
    /// Closed-loop write invocations (cells the controller decided to program).
    pub write_ops: u64,
    /// Writes that ran out of pulses before reaching tolerance.
    pub unconverged: u64,
}

impl LayerCounters {
    pub fn add(&mut self, other: &LayerCounters) {
        self.resets += other.resets;
        self.sets += other.sets;
        self.write_pulses += other.write_pulses;
        self.write_ops += other.write_ops;
        self.unconverged += other.unconverged;
    }

    /// Cell programming events of any kind: each reset, set, or write op.
    pub fn operations(&self) -> u64 {
        self.resets + self.sets + self.write_ops
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProgrammingLedger {
    pub layers: Vec<LayerCounters>,
    /// Cumulative per-layer counters at the end of each recorded epoch.
    pub history: Vec<Vec<LayerCounters>>,
}

impl ProgrammingLedger {
    pub fn new(layers: usize) -> Self {
        ProgrammingLedger { layers: vec![LayerCounters::default(); layers], history: Vec::new() }
    }

    pub fn total(&self) -> LayerCounters {
        let mut t = LayerCounters::default();
        for c in &self.layers {
            t.add(c);
        }
        t
    }

    pub fn record_epoch(&mut self) {
        self.history.push(self.layers.clone());
    }
}
