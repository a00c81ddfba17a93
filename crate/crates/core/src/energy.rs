//! Forward-pass and programming energy model.
//!
//! Read energy of a cell is `G·V²·t` per driven plane. Pruned (Off) and
//! Pristine cells still conduct a little, so sparsity savings come out of
//! the conductances themselves.

use serde::{Deserialize, Serialize};

use crate::device::DifferentialPairBank;
use crate::train::ledger::{LayerCounters, ProgrammingLedger};
use crate::vmm::BitPlanes;

/// µS · V² · ns → µJ.
const READ_UNIT_TO_UJ: f64 = 1e-9;
const PJ_TO_UJ: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnergySpec {
    pub v_read: f64,
    pub t_read_ns: f64,
    pub e_reset_pj: f64,
    pub e_set_pj: f64,
    pub e_write_pulse_pj: f64,
    /// ADC conversion plus shift-and-add, amortized per multiply-accumulate.
    pub digital_overhead_pj_per_mac: f64,
}

impl Default for EnergySpec {
    fn default() -> Self {
        EnergySpec {
            v_read: 0.1,
            t_read_ns: 100.0,
            e_reset_pj: 10.0,
            e_set_pj: 10.0,
            e_write_pulse_pj: 10.0,
            digital_overhead_pj_per_mac: 0.02,
        }
    }
}

impl EnergySpec {
    pub fn validate(&self) -> crate::Result<()> {
        let all = [
            self.v_read,
            self.t_read_ns,
            self.e_reset_pj,
            self.e_set_pj,
            self.e_write_pulse_pj,
            self.digital_overhead_pj_per_mac,
        ];
        if all.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(crate::Error::Config("energy constants must be non-negative".into()));
        }
        Ok(())
    }

    /// µJ for driving rows whose summed conductance is `g_sum_us` for one plane.
    pub fn read_energy_uj(&self, g_sum_us: f64) -> f64 {
        g_sum_us * self.v_read * self.v_read * self.t_read_ns * READ_UNIT_TO_UJ
    }

    pub fn digital_energy_uj(&self, macs: usize) -> f64 {
        macs as f64 * self.digital_overhead_pj_per_mac * PJ_TO_UJ
    }
}

/// Running totals for forward passes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyMeter {
    pub analog_uj: f64,
    pub digital_uj: f64,
    pub macs: u64,
}

impl EnergyMeter {
    pub fn total_uj(&self) -> f64 {
        self.analog_uj + self.digital_uj
    }

    pub fn add(&mut self, other: &EnergyMeter) {
        self.analog_uj += other.analog_uj;
        self.digital_uj += other.digital_uj;
        self.macs += other.macs;
    }

    /// Charge one bit-serial VMM given per-row conductance sums of both arrays.
    pub fn charge(&mut self, row_sums: &[f64], planes: &BitPlanes, spec: &EnergySpec) {
        for plane in &planes.planes {
            let g: f64 = plane.iter().zip(row_sums).filter(|(b, _)| **b).map(|(_, g)| g).sum();
            self.analog_uj += spec.read_energy_uj(g);
        }
        if planes.lo != 0.0 {
            self.analog_uj += spec.read_energy_uj(row_sums.iter().sum());
        }
    }

    pub fn charge_macs(&mut self, macs: usize, spec: &EnergySpec) {
        self.macs += macs as u64;
        self.digital_uj += spec.digital_energy_uj(macs);
    }
}

/// Energy of one bit-serial VMM of `planes` on `bank`, µJ, from stored
/// conductance of both arrays plus the digital overhead of `rows·cols` MACs.
pub fn forward_energy(bank: &DifferentialPairBank, planes: &BitPlanes, spec: &EnergySpec) -> f64 {
    let (rows, cols) = (bank.rows(), bank.cols());
    let gp = bank.g_plus.conductances();
    let gm = bank.g_minus.conductances();
    let row_sum = |r: usize| -> f64 {
        gp[r * cols..(r + 1) * cols].iter().sum::<f64>() + gm[r * cols..(r + 1) * cols].iter().sum::<f64>()
    };
    let mut analog = 0.0;
    for plane in &planes.planes {
        for (r, &on) in plane.iter().enumerate().take(rows) {
            if on {
                analog += spec.read_energy_uj(row_sum(r));
            }
        }
    }
    if planes.lo != 0.0 {
        analog += spec.read_energy_uj((0..rows).map(row_sum).sum());
    }
    analog + spec.digital_energy_uj(rows * cols)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgrammingEnergy {
    pub per_layer_uj: Vec<f64>,
    pub total_uj: f64,
}

fn counters_energy(c: &LayerCounters, spec: &EnergySpec) -> f64 {
    (c.resets as f64 * spec.e_reset_pj + c.sets as f64 * spec.e_set_pj + c.write_pulses as f64 * spec.e_write_pulse_pj)
        * PJ_TO_UJ
}

/// `resets·e_reset + sets·e_set + write_pulses·e_write`, per layer and total.
pub fn programming_energy(ledger: &ProgrammingLedger, spec: &EnergySpec) -> ProgrammingEnergy {
    let per_layer_uj: Vec<f64> = ledger.layers.iter().map(|c| counters_energy(c, spec)).collect();
    let total_uj = per_layer_uj.iter().sum();
    ProgrammingEnergy { per_layer_uj, total_uj }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::DeviceSpec;
    use crate::device::reset_pair;
    use crate::vmm::{quantize_input, QuantizationSpec};

    fn bank() -> DifferentialPairBank {
        let mut b = DifferentialPairBank::new(6, 5, DeviceSpec::default(), 4, 0, 0.05).unwrap();
        b.form().unwrap();
        b
    }

    #[test]
    fn zero_input_has_no_analog_term() {
        let b = bank();
        let q = QuantizationSpec::default();
        let planes = quantize_input(&[0.0; 6], &q).unwrap();
        let spec = EnergySpec::default();
        let e = forward_energy(&b, &planes, &spec);
        assert!((e - spec.digital_energy_uj(30)).abs() < 1e-18);
    }

    #[test]
    fn unit_conversion() {
        let spec = EnergySpec { v_read: 0.1, t_read_ns: 100.0, ..Default::default() };
        // 27.2 µS · 0.01 V² · 100 ns = 27.2e-15 J = 2.72e-8 µJ.
        assert!((spec.read_energy_uj(27.2) - 2.72e-8).abs() < 1e-20);
    }

    #[test]
    fn all_off_bank_is_cheap() {
        let formed = bank();
        let mut off = formed.clone();
        for r in 0..6 {
            for c in 0..5 {
                reset_pair(&mut off, r, c).unwrap();
            }
        }
        let spec = EnergySpec { digital_overhead_pj_per_mac: 0.0, ..Default::default() };
        let planes = quantize_input(&[0.9, 0.5, 0.7, 0.3, 0.99, 0.6], &QuantizationSpec::default()).unwrap();
        let e_on = forward_energy(&formed, &planes, &spec);
        let e_off = forward_energy(&off, &planes, &spec);
        assert!(e_off < 0.01 * e_on, "{e_off} vs {e_on}");
    }

    #[test]
    fn programming_energy_arithmetic() {
        let spec = EnergySpec { e_reset_pj: 1.0, e_set_pj: 1.0, e_write_pulse_pj: 1.0, ..Default::default() };
        let empty = ProgrammingLedger::new(2);
        assert_eq!(programming_energy(&empty, &spec).total_uj, 0.0);
        let mut l = ProgrammingLedger::new(1);
        l.layers[0].resets = 1;
        l.layers[0].sets = 1;
        let e = programming_energy(&l, &spec);
        assert!((e.total_uj - 2.0e-6).abs() < 1e-18);
    }
}
