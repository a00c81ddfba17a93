//! A network mapped onto differential-pair banks, one bank per weight slot,
//! and the backend that runs its weighted layers through bit-sliced VMMs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::device::{DeviceSpec, DifferentialPairBank};
use crate::energy::{EnergyMeter, EnergySpec};
use crate::error::{Error, Result};
use crate::nn::model::{default_scalings, forward, ExactBackend, InputScaling, LinearBackend, LinearOut, Trace};
use crate::nn::NetworkSpec;
use crate::tensor::Tensor;
use crate::vmm::{quantize_input, vmm_planes, QuantizationSpec, ReadSnapshot};

/// Scale factor mapping conductance to weight units so that a layer with
/// `fan_in·keep` live inputs starts with unit-variance pre-activations.
pub fn layer_beta(device: &DeviceSpec, fan_in: usize, keep: f64, gain: f64) -> f64 {
    gain / (device.formed_mean_us * (fan_in as f64 * keep).max(1.0).sqrt())
}

/// How the banks of a network are created.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingSpec {
    pub gain: f64,
    /// Fraction of inputs expected to stay connected, used for `beta`.
    pub keep: f64,
}

#[derive(Debug, Clone)]
pub struct HardwareNet {
    pub spec: NetworkSpec,
    pub banks: Vec<DifferentialPairBank>,
    pub quant: QuantizationSpec,
    pub scalings: Vec<InputScaling>,
}

impl HardwareNet {
    /// Allocate and form one bank per weight slot. Bank `k` uses random
    /// streams `2k` and `2k+1` of `seed`.
    pub fn form(
        spec: &NetworkSpec,
        device: &DeviceSpec,
        seed: u64,
        mapping: &MappingSpec,
        quant: &QuantizationSpec,
        first: InputScaling,
    ) -> Result<Self> {
        spec.shapes()?;
        quant.validate()?;
        let mut banks = Vec::new();
        for (k, slot) in spec.weight_slots().iter().enumerate() {
            let beta = layer_beta(device, slot.rows, mapping.keep, mapping.gain);
            let mut bank = DifferentialPairBank::new(slot.rows, slot.cols, device.clone(), seed, k as u64, beta)?;
            bank.form()?;
            banks.push(bank);
        }
        Ok(HardwareNet {
            spec: spec.clone(),
            banks,
            quant: quant.clone(),
            scalings: default_scalings(spec, first),
        })
    }

    /// Stored (noiseless) logical weights, `[rows, cols]` per slot.
    pub fn stored_weights(&self) -> Vec<Tensor> {
        self.banks.iter().map(|b| ReadSnapshot::stored(b).weights()).collect()
    }

    /// Forward through noisy analogue reads drawn from `rng`.
    pub fn forward_analog<R: Rng + ?Sized>(&self, x: &Tensor, rng: &mut R, energy: &EnergySpec) -> Result<(Trace, EnergyMeter)> {
        let mut backend = AnalogBackend::noisy(self, rng, energy);
        let trace = forward(&self.spec, &mut backend, &self.scalings, x)?;
        Ok((trace, backend.meter))
    }

    /// Forward through stored conductance with quantized inputs but no noise.
    pub fn forward_stored(&self, x: &Tensor, energy: &EnergySpec) -> Result<(Trace, EnergyMeter)> {
        let mut backend = AnalogBackend::stored(self, energy);
        let trace = forward(&self.spec, &mut backend, &self.scalings, x)?;
        Ok((trace, backend.meter))
    }

    /// Floating-point forward on the stored weights (digital reference).
    pub fn forward_exact(&self, x: &Tensor) -> Result<Trace> {
        let w = self.stored_weights();
        forward(&self.spec, &mut ExactBackend { weights: &w }, &self.scalings, x)
    }
}

/// Runs weight slots as bit-sliced VMMs on one read of every bank.
pub struct AnalogBackend<'a> {
    snaps: Vec<ReadSnapshot>,
    row_sums: Vec<Vec<f64>>,
    quant: &'a QuantizationSpec,
    energy: &'a EnergySpec,
    pub meter: EnergyMeter,
}

impl<'a> AnalogBackend<'a> {
    pub fn from_snapshots(snaps: Vec<ReadSnapshot>, quant: &'a QuantizationSpec, energy: &'a EnergySpec) -> Self {
        let row_sums = snaps.iter().map(ReadSnapshot::row_conductance_sums).collect();
        AnalogBackend { snaps, row_sums, quant, energy, meter: EnergyMeter::default() }
    }

    pub fn noisy<R: Rng + ?Sized>(net: &'a HardwareNet, rng: &mut R, energy: &'a EnergySpec) -> Self {
        let snaps = net.banks.iter().map(|b| ReadSnapshot::noisy(b, rng)).collect();
        Self::from_snapshots(snaps, &net.quant, energy)
    }

    pub fn stored(net: &'a HardwareNet, energy: &'a EnergySpec) -> Self {
        let snaps = net.banks.iter().map(ReadSnapshot::stored).collect();
        Self::from_snapshots(snaps, &net.quant, energy)
    }
}

impl LinearBackend for AnalogBackend<'_> {
    fn apply(&mut self, slot: usize, x: &[f64], n: usize, scaling: InputScaling) -> Result<LinearOut> {
        let snap = self.snaps.get(slot).ok_or_else(|| Error::dim(format!("no bank for slot {slot}")))?;
        let (rows, cols) = (snap.rows, snap.cols);
        if x.len() != n * rows {
            return Err(Error::dim(format!("slot {slot}: {} inputs for {n}x{rows}", x.len())));
        }
        let mut y = vec![0.0; n * cols];
        let mut x_eff = vec![0.0; n * rows];
        // One range per call: the controller digitizes a layer input as a whole.
        if let Some((lo, hi)) = scaling.resolve(x) {
            let q = self.quant.with_range(lo, hi);
            for s in 0..n {
                let planes = quantize_input(&x[s * rows..(s + 1) * rows], &q)?;
                let out = vmm_planes(snap, &planes, &q)?;
                y[s * cols..(s + 1) * cols].copy_from_slice(&out);
                x_eff[s * rows..(s + 1) * rows].copy_from_slice(&planes.dequantize());
                self.meter.charge(&self.row_sums[slot], &planes, self.energy);
            }
        }
        self.meter.charge_macs(n * rows * cols, self.energy);
        Ok(LinearOut { y, x_eff })
    }
}
