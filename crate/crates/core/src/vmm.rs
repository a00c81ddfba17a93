//! Bit-sliced multi-bit vector–matrix multiplication on differential pairs.
//!
//! Orientation, fixed crate-wide: a bank has `rows = fan_in` and
//! `cols = fan_out`. Inputs drive rows, outputs are column currents, and the
//! logical product is `y = Wᵀx` with `W[i][j] = beta·(G+[i][j] − G−[i][j])`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::device::DifferentialPairBank;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizationSpec {
    pub bits_m: u32,
    /// Half-open digitization range `[lo, hi)`.
    pub input_range: (f64, f64),
    /// Row drive voltage for a '1' bit, volts.
    pub v_read: f64,
    /// Optional column ADC resolution. `None` integrates currents ideally.
    #[serde(default)]
    pub adc_bits: Option<u32>,
}

impl Default for QuantizationSpec {
    fn default() -> Self {
        QuantizationSpec {
            bits_m: 4,
            input_range: (0.0, 1.0),
            v_read: 0.1,
            adc_bits: None,
        }
    }
}

impl QuantizationSpec {
    pub fn new(bits_m: u32, lo: f64, hi: f64) -> Result<Self> {
        let q = QuantizationSpec {
            bits_m,
            input_range: (lo, hi),
            ..Default::default()
        };
        q.validate()?;
        Ok(q)
    }

    pub fn with_range(&self, lo: f64, hi: f64) -> Self {
        QuantizationSpec {
            input_range: (lo, hi),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.input_range;
        if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Argument(format!("degenerate input range [{lo}, {hi})")));
        }
        if !(1..=16).contains(&self.bits_m) {
            return Err(Error::Argument(format!("bits_m must be in [1,16], got {}", self.bits_m)));
        }
        if !(self.v_read > 0.0) {
            return Err(Error::Argument("v_read must be positive".into()));
        }
        Ok(())
    }

    pub fn levels(&self) -> u32 {
        1 << self.bits_m
    }

    /// Value of one quantization step.
    pub fn lsb(&self) -> f64 {
        (self.input_range.1 - self.input_range.0) / self.levels() as f64
    }
}

/// An input vector split into binary planes, most significant first.
#[derive(Debug, Clone, PartialEq)]
pub struct BitPlanes {
    pub planes: Vec<Vec<bool>>,
    /// `2^(m−1−k)` for plane `k`.
    pub significance: Vec<f64>,
    pub lo: f64,
    pub lsb: f64,
}

impl BitPlanes {
    pub fn len(&self) -> usize {
        self.planes.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Integer code of each element.
    pub fn codes(&self) -> Vec<u32> {
        let mut codes = vec![0u32; self.len()];
        for (plane, &sig) in self.planes.iter().zip(&self.significance) {
            for (c, &b) in codes.iter_mut().zip(plane) {
                if b {
                    *c += sig as u32;
                }
            }
        }
        codes
    }

    /// Quantized values `lo + code·lsb`.
    pub fn dequantize(&self) -> Vec<f64> {
        self.codes()
            .into_iter()
            .map(|c| self.lo + c as f64 * self.lsb)
            .collect()
    }
}

/// Digitize each element to `floor((x−lo)/(hi−lo)·2^m)`, clamped to
/// `[0, 2^m − 1]`, and split the codes into bit planes.
pub fn quantize_input(x: &[f64], q: &QuantizationSpec) -> Result<BitPlanes> {
    q.validate()?;
    let (lo, hi) = q.input_range;
    let levels = q.levels();
    let m = q.bits_m as usize;
    let mut planes = vec![vec![false; x.len()]; m];
    for (i, &v) in x.iter().enumerate() {
        let scaled = ((v - lo) / (hi - lo) * levels as f64).floor();
        let code = if scaled.is_nan() { 0 } else { scaled.clamp(0.0, (levels - 1) as f64) as u32 };
        for (k, plane) in planes.iter_mut().enumerate() {
            plane[i] = (code >> (m - 1 - k)) & 1 == 1;
        }
    }
    let significance = (0..m).map(|k| (1u32 << (m - 1 - k)) as f64).collect();
    Ok(BitPlanes {
        planes,
        significance,
        lo,
        lsb: q.lsb(),
    })
}

/// One read of both arrays of a bank, used for any number of VMMs.
#[derive(Debug, Clone)]
pub struct ReadSnapshot {
    pub rows: usize,
    pub cols: usize,
    pub g_plus: Vec<f64>,
    pub g_minus: Vec<f64>,
    pub beta: f64,
}

impl ReadSnapshot {
    pub fn stored(bank: &DifferentialPairBank) -> Self {
        ReadSnapshot {
            rows: bank.rows(),
            cols: bank.cols(),
            g_plus: bank.g_plus.conductances().to_vec(),
            g_minus: bank.g_minus.conductances().to_vec(),
            beta: bank.beta,
        }
    }

    pub fn noisy<R: Rng + ?Sized>(bank: &DifferentialPairBank, rng: &mut R) -> Self {
        ReadSnapshot {
            rows: bank.rows(),
            cols: bank.cols(),
            g_plus: bank.g_plus.read_conductance_with(rng).into_data(),
            g_minus: bank.g_minus.read_conductance_with(rng).into_data(),
            beta: bank.beta,
        }
    }

    /// Logical weights `beta·(G+ − G−)`, shape `[rows, cols]`.
    pub fn weights(&self) -> Tensor {
        let data = self
            .g_plus
            .iter()
            .zip(&self.g_minus)
            .map(|(p, m)| self.beta * (p - m))
            .collect();
        Tensor::from_vec(&[self.rows, self.cols], data).expect("shape")
    }

    /// Per-row sum of `G+ + G−` over all columns, µS.
    pub fn row_conductance_sums(&self) -> Vec<f64> {
        (0..self.rows)
            .map(|r| {
                let s = r * self.cols;
                self.g_plus[s..s + self.cols].iter().sum::<f64>()
                    + self.g_minus[s..s + self.cols].iter().sum::<f64>()
            })
            .collect()
    }
}

/// Column currents (µS·V) with `active` rows driven at `v_read`.
fn column_currents(g: &[f64], cols: usize, active: &[bool], v_read: f64, out: &mut [f64]) {
    out.fill(0.0);
    for (r, _) in active.iter().enumerate().filter(|(_, &a)| a) {
        let row = &g[r * cols..(r + 1) * cols];
        for (o, &gv) in out.iter_mut().zip(row) {
            *o += gv * v_read;
        }
    }
}

fn adc(currents: &mut [f64], bits: u32, full_scale: f64) {
    let steps = ((1u64 << bits) - 1) as f64;
    for c in currents.iter_mut() {
        let code = (*c / full_scale * steps).round().clamp(0.0, steps);
        *c = code * full_scale / steps;
    }
}

/// Bit-serial VMM against an existing read snapshot.
///
/// Each plane drives its '1' rows, the differential column currents are
/// scaled by the plane significance, and the planes are summed digitally.
/// A non-zero range offset `lo` is restored with one all-rows read.
pub fn vmm_planes(snap: &ReadSnapshot, planes: &BitPlanes, q: &QuantizationSpec) -> Result<Vec<f64>> {
    if planes.len() != snap.rows {
        return Err(Error::dim(format!(
            "input length {} does not match {} bank rows",
            planes.len(),
            snap.rows
        )));
    }
    let cols = snap.cols;
    let v = q.v_read;
    let full_scale = snap.rows as f64 * max_conductance(snap) * v;
    let mut ip = vec![0.0; cols];
    let mut im = vec![0.0; cols];
    let mut acc = vec![0.0; cols];
    let mut drive = |active: &[bool], weight: f64, acc: &mut [f64]| {
        column_currents(&snap.g_plus, cols, active, v, &mut ip);
        column_currents(&snap.g_minus, cols, active, v, &mut im);
        if let Some(bits) = q.adc_bits {
            adc(&mut ip, bits, full_scale);
            adc(&mut im, bits, full_scale);
        }
        for ((a, p), m) in acc.iter_mut().zip(&ip).zip(&im) {
            *a += weight * (p - m) * snap.beta / v;
        }
    };
    for (plane, &sig) in planes.planes.iter().zip(&planes.significance) {
        drive(plane, sig * planes.lsb, &mut acc);
    }
    if planes.lo != 0.0 {
        let all = vec![true; snap.rows];
        drive(&all, planes.lo, &mut acc);
    }
    Ok(acc)
}

fn max_conductance(snap: &ReadSnapshot) -> f64 {
    snap.g_plus
        .iter()
        .chain(&snap.g_minus)
        .fold(f64::MIN_POSITIVE, |a, &b| a.max(b))
}

/// Quantize `x`, take a fresh noisy read of both arrays (from their own
/// streams), and run the bit-serial VMM.
pub fn vmm_bit_sliced(bank: &mut DifferentialPairBank, x: &[f64], q: &QuantizationSpec) -> Result<Vec<f64>> {
    if x.len() != bank.rows() {
        return Err(Error::dim(format!(
            "input length {} does not match {} bank rows",
            x.len(),
            bank.rows()
        )));
    }
    let planes = quantize_input(x, q)?;
    let snap = ReadSnapshot {
        rows: bank.rows(),
        cols: bank.cols(),
        g_plus: bank.g_plus.read_conductance().into_data(),
        g_minus: bank.g_minus.read_conductance().into_data(),
        beta: bank.beta,
    };
    vmm_planes(&snap, &planes, q)
}

/// Exact `Wᵀx` for `W` of shape `[rows, cols]` and `x` of length `rows`.
pub fn matmul_exact(w: &Tensor, x: &[f64]) -> Result<Vec<f64>> {
    if w.rank() != 2 || w.shape()[0] != x.len() {
        return Err(Error::dim(format!(
            "matmul of {:?} with vector of length {}",
            w.shape(),
            x.len()
        )));
    }
    let cols = w.shape()[1];
    let mut out = vec![0.0; cols];
    for (r, &xv) in x.iter().enumerate() {
        let row = &w.data()[r * cols..(r + 1) * cols];
        for (o, &wv) in out.iter_mut().zip(row) {
            *o += wv * xv;
        }
    }
    Ok(out)
}

/// Logical weight matrix of a bank from stored or freshly read conductance.
pub fn weights_from_bank(bank: &mut DifferentialPairBank, noisy: bool) -> Tensor {
    if noisy {
        let gp = bank.g_plus.read_conductance();
        let gm = bank.g_minus.read_conductance();
        let mut w = gp.zip_map(&gm, |p, m| p - m).expect("same shape");
        w.scale(bank.beta);
        w
    } else {
        ReadSnapshot::stored(bank).weights()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::{CrossbarArray, DeviceSpec};

    fn quiet() -> DeviceSpec {
        DeviceSpec { read_noise_cv: 0.0, ..Default::default() }
    }

    /// Bank whose single pair is written to an exact weight.
    fn unit_bank(weight: f64) -> DifferentialPairBank {
        let spec = DeviceSpec { write_tolerance: 1e-12, max_write_pulses: 10_000, write_noise_cv: 0.0, ..quiet() };
        let mut gp = CrossbarArray::new(1, 1, spec.clone(), 1).unwrap();
        let gm = CrossbarArray::new(1, 1, spec, 2).unwrap();
        let target = weight + gm.conductance(0, 0);
        gp.closed_loop_write(0, 0, target).unwrap();
        DifferentialPairBank::from_arrays(gp, gm, 1.0).unwrap()
    }

    #[test]
    fn binary_expansion() {
        let q = QuantizationSpec::new(3, 0.0, 1.0).unwrap();
        let p = quantize_input(&[0.625], &q).unwrap();
        let bits: Vec<bool> = p.planes.iter().map(|pl| pl[0]).collect();
        assert_eq!(bits, vec![true, false, true]);
        assert_eq!(p.significance, vec![4.0, 2.0, 1.0]);

        let p = quantize_input(&[0.0, -3.0], &q).unwrap();
        assert!(p.planes.iter().all(|pl| pl.iter().all(|&b| !b)));
        let top = quantize_input(&[1.0, 7.0], &q).unwrap();
        assert_eq!(top.codes(), vec![7, 7]);
    }

    #[test]
    fn degenerate_range() {
        assert!(matches!(QuantizationSpec::new(4, 1.0, 1.0), Err(Error::Argument(_))));
        assert!(matches!(QuantizationSpec::new(0, 0.0, 1.0), Err(Error::Argument(_))));
        assert!(matches!(QuantizationSpec::new(17, 0.0, 1.0), Err(Error::Argument(_))));
    }

    #[test]
    fn identity_weight_within_one_lsb() {
        let mut bank = unit_bank(1.0);
        assert!((weights_from_bank(&mut bank, false).data()[0] - 1.0).abs() < 1e-9);
        let q = QuantizationSpec::new(4, 0.0, 1.0).unwrap();
        let y = vmm_bit_sliced(&mut bank, &[0.5], &q).unwrap();
        assert!((y[0] - 0.5).abs() <= 1.0 / 16.0);
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let mut bank = DifferentialPairBank::new(6, 4, quiet(), 3, 0, 0.1).unwrap();
        bank.form().unwrap();
        let q = QuantizationSpec::new(4, 0.0, 1.0).unwrap();
        let y = vmm_bit_sliced(&mut bank, &[0.0; 6], &q).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch() {
        let mut bank = DifferentialPairBank::new(3, 2, quiet(), 3, 0, 0.1).unwrap();
        let q = QuantizationSpec::default();
        assert!(matches!(vmm_bit_sliced(&mut bank, &[0.1; 2], &q), Err(Error::Dimension(_))));
        let w = Tensor::zeros(&[3, 2]);
        assert!(matches!(matmul_exact(&w, &[1.0; 2]), Err(Error::Dimension(_))));
    }

    #[test]
    fn matmul_orientation() {
        let eye = Tensor::eye(3);
        assert_eq!(matmul_exact(&eye, &[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(matmul_exact(&Tensor::zeros(&[3, 3]), &[1.0, 2.0, 3.0]).unwrap(), vec![0.0; 3]);
        // Wᵀx: column j collects Σ_i W[i][j]·x[i].
        let w = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(matmul_exact(&w, &[1.0, 1.0]).unwrap(), vec![1.0 + 3.0, 2.0 + 4.0]);
        assert_eq!(matmul_exact(&w, &[1.0, 0.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn weights_from_symmetric_and_unbalanced_pairs() {
        let spec = quiet();
        let gp = CrossbarArray::new(2, 2, spec.clone(), 1).unwrap();
        let gm = CrossbarArray::new(2, 2, spec, 2).unwrap();
        let mut bank = DifferentialPairBank::from_arrays(gp, gm, 1.0 / 27.2).unwrap();
        assert!(weights_from_bank(&mut bank, false).data().iter().all(|&w| w == 0.0));

        let snap = ReadSnapshot {
            rows: 1,
            cols: 1,
            g_plus: vec![27.2],
            g_minus: vec![1.0 / 30.0],
            beta: 1.0 / 27.2,
        };
        let w = snap.weights().data()[0];
        assert!((w - (27.2 - 1.0 / 30.0) / 27.2).abs() < 1e-12);
        assert!((w - 0.9988).abs() < 1e-4);
    }

    #[test]
    fn offset_range_uses_all_rows_read() {
        let mut bank = DifferentialPairBank::new(5, 3, quiet(), 9, 0, 0.05).unwrap();
        bank.form().unwrap();
        let q = QuantizationSpec::new(3, -1.0, 1.0).unwrap();
        let x = [-0.9, -0.2, 0.0, 0.4, 0.99];
        let y = vmm_bit_sliced(&mut bank, &x, &q).unwrap();
        let deq = quantize_input(&x, &q).unwrap().dequantize();
        let exact = matmul_exact(&weights_from_bank(&mut bank, false), &deq).unwrap();
        for (a, b) in y.iter().zip(&exact) {
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
    }

    #[test]
    fn adc_quantizes_column_currents() {
        let mut bank = DifferentialPairBank::new(8, 4, quiet(), 9, 0, 0.05).unwrap();
        bank.form().unwrap();
        let x = [0.3; 8];
        let ideal = vmm_bit_sliced(&mut bank, &x, &QuantizationSpec::default()).unwrap();
        let q = QuantizationSpec { adc_bits: Some(14), ..Default::default() };
        let fine = vmm_bit_sliced(&mut bank, &x, &q).unwrap();
        let q = QuantizationSpec { adc_bits: Some(2), ..Default::default() };
        let coarse = vmm_bit_sliced(&mut bank, &x, &q).unwrap();
        let err = |v: &[f64]| v.iter().zip(&ideal).map(|(a, b)| (a - b).abs()).sum::<f64>();
        assert!(err(&fine) < 1e-2);
        assert!(err(&coarse) > err(&fine));
    }
}
