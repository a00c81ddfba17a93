//! Full hardware state as JSON: banks (including random-stream positions),
//! masks, scores, and the weight-optimization shadow copy.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::device::{CellState, CrossbarArray, DeviceSpec, DifferentialPairBank, StreamId};
use crate::error::{Error, Result};
use crate::hw::HardwareNet;
use crate::nn::{InputScaling, NetworkSpec};
use crate::tensor::Tensor;
use crate::train::scored::ScoredLayer;
use crate::vmm::QuantizationSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArraySnapshot {
    pub rows: usize,
    pub cols: usize,
    pub spec: DeviceSpec,
    pub stream: StreamId,
    pub word_pos: u128,
    pub electroformed: bool,
    pub states: Vec<CellState>,
    pub conductance_us: Vec<f64>,
}

impl ArraySnapshot {
    pub fn of(a: &CrossbarArray) -> Self {
        ArraySnapshot {
            rows: a.rows(),
            cols: a.cols(),
            spec: a.spec().clone(),
            stream: a.stream_id(),
            word_pos: a.rng_word_pos(),
            electroformed: a.is_electroformed(),
            states: a.states().to_vec(),
            conductance_us: a.conductances().to_vec(),
        }
    }

    pub fn restore(&self) -> Result<CrossbarArray> {
        CrossbarArray::restore(
            self.rows,
            self.cols,
            self.spec.clone(),
            self.stream,
            self.word_pos,
            self.states.clone(),
            self.conductance_us.clone(),
            self.electroformed,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankSnapshot {
    pub g_plus: ArraySnapshot,
    pub g_minus: ArraySnapshot,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    /// `formed`, `topology`, or `weights`.
    pub method: String,
    pub config: RunConfig,
    pub network: NetworkSpec,
    pub quant: QuantizationSpec,
    pub scalings: Vec<InputScaling>,
    pub banks: Vec<BankSnapshot>,
    #[serde(default)]
    pub layers: Option<Vec<ScoredLayer>>,
    #[serde(default)]
    pub shadow: Option<Vec<Tensor>>,
}

impl StateSnapshot {
    pub fn capture(method: &str, config: &RunConfig, net: &HardwareNet) -> Self {
        StateSnapshot {
            method: method.into(),
            config: config.clone(),
            network: net.spec.clone(),
            quant: net.quant.clone(),
            scalings: net.scalings.clone(),
            banks: net
                .banks
                .iter()
                .map(|b| BankSnapshot { g_plus: ArraySnapshot::of(&b.g_plus), g_minus: ArraySnapshot::of(&b.g_minus), beta: b.beta })
                .collect(),
            layers: None,
            shadow: None,
        }
    }

    pub fn network(&self) -> Result<HardwareNet> {
        let slots = self.network.weight_slots();
        if slots.len() != self.banks.len() {
            return Err(Error::dim(format!("{} banks for {} weight slots", self.banks.len(), slots.len())));
        }
        let mut banks = Vec::with_capacity(self.banks.len());
        for (b, s) in self.banks.iter().zip(&slots) {
            let bank = DifferentialPairBank::from_arrays(b.g_plus.restore()?, b.g_minus.restore()?, b.beta)?;
            if bank.rows() != s.rows || bank.cols() != s.cols {
                return Err(Error::dim(format!("bank {} is {}x{}, slot wants {}x{}", s.name, bank.rows(), bank.cols(), s.rows, s.cols)));
            }
            banks.push(bank);
        }
        Ok(HardwareNet { spec: self.network.clone(), banks, quant: self.quant.clone(), scalings: self.scalings.clone() })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            at: format!("line {}, column {}", e.line(), e.column()),
            msg: e.to_string(),
        })
    }
}
