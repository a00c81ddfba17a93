//! Resistive-memory cells and crossbar arrays.
//!
//! Cells start Pristine (never electroformed, ~30 MΩ). Electroforming is a
//! one-shot stochastic event: a cell either forms a conducting channel with a
//! random conductance or stays insulating. Formed cells are pruned by reset
//! (Formed → Off) and reinstated by set (Off → Formed). No other transition
//! exists; set on a Pristine cell is rejected.
//!
//! All conductances are in µS.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Lower support of the formed distribution: the <300 kΩ forming criterion.
pub const FORMED_FLOOR_US: f64 = 1.0 / 0.3;

/// Closed-loop programming step: fraction of the remaining gap covered by a pulse.
const WRITE_STEP_MIN: f64 = 0.2;
const WRITE_STEP_MAX: f64 = 0.6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeviceSpec {
    pub pristine_conductance_us: f64,
    pub formed_mean_us: f64,
    pub formed_sigma_us: f64,
    pub off_mean_us: f64,
    pub off_sigma_us: f64,
    pub read_noise_cv: f64,
    pub form_probability: f64,
    pub write_tolerance: f64,
    pub max_write_pulses: u32,
    /// Multiplicative noise of a single program pulse.
    pub write_noise_cv: f64,
}

impl Default for DeviceSpec {
    fn default() -> Self {
        DeviceSpec {
            pristine_conductance_us: 1.0 / 30.0,
            formed_mean_us: 27.2,
            formed_sigma_us: 2.5,
            off_mean_us: 0.07,
            off_sigma_us: 0.02,
            read_noise_cv: 0.03,
            form_probability: 0.5,
            write_tolerance: 0.10,
            max_write_pulses: 100,
            write_noise_cv: 0.05,
        }
    }
}

impl DeviceSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("pristine_conductance_us", self.pristine_conductance_us),
            ("formed_mean_us", self.formed_mean_us),
            ("formed_sigma_us", self.formed_sigma_us),
            ("off_mean_us", self.off_mean_us),
            ("off_sigma_us", self.off_sigma_us),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.form_probability) {
            return Err(Error::Config(format!(
                "form_probability must lie in [0,1], got {}",
                self.form_probability
            )));
        }
        if self.off_mean_us >= self.formed_mean_us {
            return Err(Error::Config("off_mean_us must be below formed_mean_us".into()));
        }
        if self.read_noise_cv < 0.0 || self.write_noise_cv < 0.0 || self.write_tolerance <= 0.0 {
            return Err(Error::Config(
                "noise CVs must be >= 0 and write_tolerance > 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellState {
    Pristine,
    Formed,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FormReport {
    pub formed_count: usize,
}

/// Result of a program-and-verify sequence on one cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WriteOutcome {
    pub pulses: u32,
    pub converged: bool,
}

/// Identity of an array's random stream. The stream is restored exactly from
/// `(seed, stream, word_pos)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamId {
    pub seed: u64,
    pub stream: u64,
}

#[derive(Debug, Clone)]
pub struct CrossbarArray {
    rows: usize,
    cols: usize,
    state: Vec<CellState>,
    conductance_us: Vec<f64>,
    spec: DeviceSpec,
    stream_id: StreamId,
    rng: ChaCha8Rng,
    electroformed: bool,
}

fn stream_rng(id: StreamId) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(id.seed);
    rng.set_stream(id.stream);
    rng
}

/// Rejection sample from N(mean, sigma) restricted to `>= floor`.
fn truncated_normal<R: Rng + ?Sized>(rng: &mut R, mean: f64, sigma: f64, floor: f64) -> f64 {
    let dist = Normal::new(mean, sigma).expect("validated sigma");
    loop {
        let v: f64 = dist.sample(rng);
        if v >= floor {
            return v;
        }
    }
}

impl CrossbarArray {
    /// A fresh all-Pristine array on random stream 0 of `seed`.
    pub fn new(rows: usize, cols: usize, spec: DeviceSpec, seed: u64) -> Result<Self> {
        Self::with_stream(rows, cols, spec, StreamId { seed, stream: 0 })
    }

    pub fn with_stream(rows: usize, cols: usize, spec: DeviceSpec, id: StreamId) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::dim(format!("array must be at least 1x1, got {rows}x{cols}")));
        }
        spec.validate()?;
        let n = rows * cols;
        Ok(CrossbarArray {
            rows,
            cols,
            state: vec![CellState::Pristine; n],
            conductance_us: vec![spec.pristine_conductance_us; n],
            spec,
            stream_id: id,
            rng: stream_rng(id),
            electroformed: false,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn spec(&self) -> &DeviceSpec {
        &self.spec
    }

    pub fn stream_id(&self) -> StreamId {
        self.stream_id
    }

    pub fn is_electroformed(&self) -> bool {
        self.electroformed
    }

    pub fn states(&self) -> &[CellState] {
        &self.state
    }

    pub fn state(&self, row: usize, col: usize) -> CellState {
        self.state[row * self.cols + col]
    }

    /// Stored (noise-free) conductances, row-major.
    pub fn conductances(&self) -> &[f64] {
        &self.conductance_us
    }

    pub fn conductance(&self, row: usize, col: usize) -> f64 {
        self.conductance_us[row * self.cols + col]
    }

    pub fn stored_grid(&self) -> Tensor {
        Tensor::from_vec(&[self.rows, self.cols], self.conductance_us.clone()).expect("shape")
    }

    pub fn count(&self, state: CellState) -> usize {
        self.state.iter().filter(|&&s| s == state).count()
    }

    fn index(&self, row: usize, col: usize) -> Result<usize> {
        if row >= self.rows || col >= self.cols {
            return Err(Error::dim(format!(
                "cell ({row},{col}) outside {}x{} array",
                self.rows, self.cols
            )));
        }
        Ok(row * self.cols + col)
    }

    fn draw_formed(&mut self) -> f64 {
        let s = &self.spec;
        let (m, sd) = (s.formed_mean_us, s.formed_sigma_us);
        truncated_normal(&mut self.rng, m, sd, FORMED_FLOOR_US)
    }

    fn draw_off(&mut self) -> f64 {
        let s = &self.spec;
        let (m, sd) = (s.off_mean_us, s.off_sigma_us);
        truncated_normal(&mut self.rng, m, sd, 0.0)
    }

    /// Apply a uniform forming pulse to every cell. Each cell forms
    /// independently with `form_probability`.
    pub fn electroform(&mut self) -> Result<FormReport> {
        if self.electroformed || self.state.iter().any(|&s| s != CellState::Pristine) {
            return Err(Error::State("electroform needs an all-pristine array".into()));
        }
        let p = self.spec.form_probability;
        let mut formed_count = 0;
        for i in 0..self.state.len() {
            if self.rng.random_bool(p) {
                self.state[i] = CellState::Formed;
                self.conductance_us[i] = self.draw_formed();
                formed_count += 1;
            }
        }
        self.electroformed = true;
        Ok(FormReport { formed_count })
    }

    /// Force-form a single Pristine cell (complementary forming).
    pub(crate) fn form_cell(&mut self, row: usize, col: usize) -> Result<()> {
        let i = self.index(row, col)?;
        if self.state[i] != CellState::Pristine {
            return Err(Error::State(format!("cell ({row},{col}) is not pristine")));
        }
        self.state[i] = CellState::Formed;
        self.conductance_us[i] = self.draw_formed();
        Ok(())
    }

    /// Reset a Formed cell to Off. Returns the pulses applied (0 or 1).
    pub fn reset_cell(&mut self, row: usize, col: usize) -> Result<u32> {
        let i = self.index(row, col)?;
        if self.state[i] != CellState::Formed {
            return Ok(0);
        }
        self.state[i] = CellState::Off;
        self.conductance_us[i] = self.draw_off();
        Ok(1)
    }

    /// Set an Off cell back to Formed with a freshly drawn conductance.
    /// A Formed cell is left alone; a Pristine cell is a state error.
    pub fn set_cell(&mut self, row: usize, col: usize) -> Result<u32> {
        let i = self.index(row, col)?;
        match self.state[i] {
            CellState::Pristine => Err(Error::State(format!(
                "set on pristine cell ({row},{col}); forming is the only pristine exit"
            ))),
            CellState::Formed => Ok(0),
            CellState::Off => {
                self.state[i] = CellState::Formed;
                self.conductance_us[i] = self.draw_formed();
                Ok(1)
            }
        }
    }

    /// Noisy read using the array's own stream. Stored values are untouched.
    pub fn read_conductance(&mut self) -> Tensor {
        let mut rng = std::mem::replace(&mut self.rng, ChaCha8Rng::seed_from_u64(0));
        let out = self.read_conductance_with(&mut rng);
        self.rng = rng;
        out
    }

    /// Noisy read drawing from a caller-supplied stream, for concurrent readers.
    pub fn read_conductance_with<R: Rng + ?Sized>(&self, rng: &mut R) -> Tensor {
        let cv = self.spec.read_noise_cv;
        let data = if cv == 0.0 {
            self.conductance_us.clone()
        } else {
            self.conductance_us
                .iter()
                .map(|&g| {
                    let eps: f64 = rng.sample(StandardNormal);
                    (g * (1.0 + cv * eps)).max(0.0)
                })
                .collect()
        };
        Tensor::from_vec(&[self.rows, self.cols], data).expect("shape")
    }

    /// Program-and-verify toward `target_us`. Each pulse covers a random
    /// fraction of the remaining gap and is perturbed by write noise; the
    /// loop stops once the relative error is within `write_tolerance`.
    pub fn closed_loop_write(&mut self, row: usize, col: usize, target_us: f64) -> Result<WriteOutcome> {
        if !(target_us > 0.0) || !target_us.is_finite() {
            return Err(Error::Argument(format!("write target must be positive, got {target_us}")));
        }
        let i = self.index(row, col)?;
        let tol = self.spec.write_tolerance;
        let noise = self.spec.write_noise_cv;
        let mut g = self.conductance_us[i];
        let mut pulses = 0;
        let mut converged = (g - target_us).abs() / target_us <= tol;
        while !converged && pulses < self.spec.max_write_pulses {
            let step = self.rng.random_range(WRITE_STEP_MIN..WRITE_STEP_MAX);
            let eps: f64 = self.rng.sample(StandardNormal);
            g += step * (target_us - g);
            g = (g * (1.0 + noise * eps)).max(0.0);
            pulses += 1;
            converged = (g - target_us).abs() / target_us <= tol;
        }
        self.conductance_us[i] = g;
        self.state[i] = CellState::Formed;
        Ok(WriteOutcome { pulses, converged })
    }

    pub(crate) fn rng_word_pos(&self) -> u128 {
        self.rng.get_word_pos()
    }

    /// Rebuild an array from a snapshot.
    pub(crate) fn restore(
        rows: usize,
        cols: usize,
        spec: DeviceSpec,
        id: StreamId,
        word_pos: u128,
        state: Vec<CellState>,
        conductance_us: Vec<f64>,
        electroformed: bool,
    ) -> Result<Self> {
        let n = rows * cols;
        if n == 0 || state.len() != n || conductance_us.len() != n {
            return Err(Error::dim(format!("snapshot grid does not match {rows}x{cols}")));
        }
        let mut rng = stream_rng(id);
        rng.set_word_pos(word_pos);
        Ok(CrossbarArray {
            rows,
            cols,
            state,
            conductance_us,
            spec,
            stream_id: id,
            rng,
            electroformed,
        })
    }
}

/// Two same-shape arrays whose conductance difference, scaled by `beta`,
/// realizes a signed weight matrix.
#[derive(Debug, Clone)]
pub struct DifferentialPairBank {
    pub g_plus: CrossbarArray,
    pub g_minus: CrossbarArray,
    /// Weight units per µS.
    pub beta: f64,
}

impl DifferentialPairBank {
    /// Two Pristine arrays on streams `2·bank_id` and `2·bank_id + 1`.
    pub fn new(rows: usize, cols: usize, spec: DeviceSpec, seed: u64, bank_id: u64, beta: f64) -> Result<Self> {
        let g_plus = CrossbarArray::with_stream(rows, cols, spec.clone(), StreamId { seed, stream: 2 * bank_id })?;
        let g_minus = CrossbarArray::with_stream(rows, cols, spec, StreamId { seed, stream: 2 * bank_id + 1 })?;
        Self::from_arrays(g_plus, g_minus, beta)
    }

    pub fn from_arrays(g_plus: CrossbarArray, g_minus: CrossbarArray, beta: f64) -> Result<Self> {
        if g_plus.rows != g_minus.rows || g_plus.cols != g_minus.cols {
            return Err(Error::dim(format!(
                "pair arrays differ: {}x{} vs {}x{}",
                g_plus.rows, g_plus.cols, g_minus.rows, g_minus.cols
            )));
        }
        if !beta.is_finite() || beta <= 0.0 {
            return Err(Error::Config(format!("beta must be positive, got {beta}")));
        }
        Ok(DifferentialPairBank { g_plus, g_minus, beta })
    }

    pub fn rows(&self) -> usize {
        self.g_plus.rows
    }

    pub fn cols(&self) -> usize {
        self.g_plus.cols
    }

    pub fn len(&self) -> usize {
        self.rows() * self.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Electroform G+ and then form G− into the complementary state.
    pub fn form(&mut self) -> Result<FormReport> {
        self.g_plus.electroform()?;
        form_complementary(self)
    }

    /// True when the pair holds a conducting channel in either array.
    pub fn is_conducting(&self, row: usize, col: usize) -> bool {
        self.g_plus.state(row, col) == CellState::Formed || self.g_minus.state(row, col) == CellState::Formed
    }

    /// True when the pair has been pruned: an Off cell and no Formed cell.
    pub fn is_pruned(&self, row: usize, col: usize) -> bool {
        let (p, m) = (self.g_plus.state(row, col), self.g_minus.state(row, col));
        !self.is_conducting(row, col) && (p == CellState::Off || m == CellState::Off)
    }
}

/// Form every G− cell whose G+ partner failed to form, so each position
/// carries exactly one conducting channel.
pub fn form_complementary(bank: &mut DifferentialPairBank) -> Result<FormReport> {
    if bank.g_plus.rows != bank.g_minus.rows || bank.g_plus.cols != bank.g_minus.cols {
        return Err(Error::dim("pair arrays differ in shape"));
    }
    if !bank.g_plus.electroformed {
        return Err(Error::State("G+ must be electroformed before complementary forming".into()));
    }
    if bank.g_minus.electroformed || bank.g_minus.state.iter().any(|&s| s != CellState::Pristine) {
        return Err(Error::State("G- must be all pristine for complementary forming".into()));
    }
    let mut formed_count = 0;
    for r in 0..bank.rows() {
        for c in 0..bank.cols() {
            if bank.g_plus.state(r, c) == CellState::Pristine {
                bank.g_minus.form_cell(r, c)?;
                formed_count += 1;
            }
        }
    }
    bank.g_minus.electroformed = true;
    Ok(FormReport { formed_count })
}

/// Prune a pair: reset whichever cells are Formed. Returns reset pulses.
pub fn reset_pair(bank: &mut DifferentialPairBank, row: usize, col: usize) -> Result<u32> {
    bank.g_plus.index(row, col)?;
    Ok(bank.g_plus.reset_cell(row, col)? + bank.g_minus.reset_cell(row, col)?)
}

/// Reinstate a pair: set whichever cells are Off. Pristine cells stay put.
pub fn set_pair(bank: &mut DifferentialPairBank, row: usize, col: usize) -> Result<u32> {
    bank.g_plus.index(row, col)?;
    let mut pulses = 0;
    for arr in [&mut bank.g_plus, &mut bank.g_minus] {
        if arr.state(row, col) == CellState::Off {
            pulses += arr.set_cell(row, col)?;
        }
    }
    Ok(pulses)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn formed_bank(rows: usize, cols: usize, seed: u64) -> DifferentialPairBank {
        let mut b = DifferentialPairBank::new(rows, cols, DeviceSpec::default(), seed, 0, 1.0 / 27.2).unwrap();
        b.form().unwrap();
        b
    }

    #[test]
    fn new_array_is_pristine() {
        let a = CrossbarArray::new(2, 3, DeviceSpec::default(), 42).unwrap();
        assert_eq!(a.count(CellState::Pristine), 6);
        assert!(a.conductances().iter().all(|&g| g == 1.0 / 30.0));
        let one = CrossbarArray::new(1, 1, DeviceSpec::default(), 0).unwrap();
        assert_eq!(one.state(0, 0), CellState::Pristine);
        assert!(matches!(
            CrossbarArray::new(0, 3, DeviceSpec::default(), 1),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn pristine_value_matches_forming_criterion() {
        assert!((DeviceSpec::default().pristine_conductance_us - 0.0333).abs() < 1e-3);
    }

    #[test]
    fn same_seed_same_forming() {
        let mut a = CrossbarArray::new(100, 100, DeviceSpec::default(), 7).unwrap();
        let mut b = CrossbarArray::new(100, 100, DeviceSpec::default(), 7).unwrap();
        assert_eq!(a.conductances(), b.conductances());
        a.electroform().unwrap();
        b.electroform().unwrap();
        assert_eq!(a.conductances(), b.conductances());
        assert_eq!(a.states(), b.states());
    }

    #[test]
    fn degenerate_probabilities() {
        let spec = DeviceSpec { form_probability: 1.0, ..Default::default() };
        let mut a = CrossbarArray::new(10, 10, spec, 1).unwrap();
        assert_eq!(a.electroform().unwrap().formed_count, 100);

        let spec = DeviceSpec { form_probability: 0.0, ..Default::default() };
        let mut a = CrossbarArray::new(10, 10, spec, 1).unwrap();
        assert_eq!(a.electroform().unwrap().formed_count, 0);
        assert_eq!(a.count(CellState::Pristine), 100);
    }

    #[test]
    fn reforming_is_a_state_error() {
        let mut a = CrossbarArray::new(4, 4, DeviceSpec::default(), 3).unwrap();
        a.electroform().unwrap();
        assert!(matches!(a.electroform(), Err(Error::State(_))));
    }

    #[test]
    fn formed_conductance_respects_floor() {
        let spec = DeviceSpec { formed_mean_us: 4.0, formed_sigma_us: 5.0, ..Default::default() };
        let mut a = CrossbarArray::new(50, 50, spec, 9).unwrap();
        a.electroform().unwrap();
        for (s, g) in a.states().iter().zip(a.conductances()) {
            if *s == CellState::Formed {
                assert!(*g >= FORMED_FLOOR_US);
            }
        }
    }

    #[test]
    fn complementary_masks() {
        let bank = formed_bank(20, 30, 11);
        for r in 0..20 {
            for c in 0..30 {
                let p = bank.g_plus.state(r, c) == CellState::Formed;
                let m = bank.g_minus.state(r, c) == CellState::Formed;
                assert!(p ^ m, "exactly one cell formed at ({r},{c})");
                assert!(bank.g_plus.state(r, c) != CellState::Off);
            }
        }
    }

    #[test]
    fn complementary_of_full_forming_is_empty() {
        let spec = DeviceSpec { form_probability: 1.0, ..Default::default() };
        let mut b = DifferentialPairBank::new(5, 5, spec, 2, 0, 1.0).unwrap();
        let rep = b.form().unwrap();
        assert_eq!(rep.formed_count, 0);
        assert_eq!(b.g_minus.count(CellState::Pristine), 25);
    }

    #[test]
    fn complementary_errors() {
        let mut b = DifferentialPairBank::new(3, 3, DeviceSpec::default(), 2, 0, 1.0).unwrap();
        assert!(matches!(form_complementary(&mut b), Err(Error::State(_))));
        b.form().unwrap();
        assert!(matches!(form_complementary(&mut b), Err(Error::State(_))));
        let a = CrossbarArray::new(3, 3, DeviceSpec::default(), 1).unwrap();
        let c = CrossbarArray::new(3, 4, DeviceSpec::default(), 1).unwrap();
        assert!(matches!(
            DifferentialPairBank::from_arrays(a, c, 1.0),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn reset_and_set_transitions() {
        let mut b = formed_bank(4, 4, 5);
        let (r, c) = (1, 2);
        assert_eq!(reset_pair(&mut b, r, c).unwrap(), 1);
        assert!(b.is_pruned(r, c));
        let diff = (b.g_plus.conductance(r, c) - b.g_minus.conductance(r, c)).abs();
        assert!(diff <= 0.2, "pruned pair difference {diff}");
        assert_eq!(reset_pair(&mut b, r, c).unwrap(), 0);

        assert_eq!(set_pair(&mut b, r, c).unwrap(), 1);
        assert!(b.is_conducting(r, c));
        assert_eq!(set_pair(&mut b, r, c).unwrap(), 0);

        assert!(matches!(reset_pair(&mut b, 4, 0), Err(Error::Dimension(_))));
        assert!(matches!(set_pair(&mut b, 0, 9), Err(Error::Dimension(_))));
    }

    #[test]
    fn set_on_pristine_cell_is_rejected() {
        let mut a = CrossbarArray::new(1, 1, DeviceSpec::default(), 0).unwrap();
        assert!(matches!(a.set_cell(0, 0), Err(Error::State(_))));
    }

    #[test]
    fn reset_keeps_sign_cell_on_reinstatement() {
        let mut b = formed_bank(1, 1, 8);
        let plus_formed = b.g_plus.state(0, 0) == CellState::Formed;
        for _ in 0..100 {
            reset_pair(&mut b, 0, 0).unwrap();
            set_pair(&mut b, 0, 0).unwrap();
        }
        assert_eq!(b.g_plus.state(0, 0) == CellState::Formed, plus_formed);
        let g = b.g_plus.conductance(0, 0).max(b.g_minus.conductance(0, 0));
        assert!(g > FORMED_FLOOR_US);
    }

    #[test]
    fn zero_noise_read_is_exact_and_reads_are_non_destructive() {
        let spec = DeviceSpec { read_noise_cv: 0.0, ..Default::default() };
        let mut a = CrossbarArray::new(8, 8, spec, 4).unwrap();
        a.electroform().unwrap();
        assert_eq!(a.read_conductance().data(), a.conductances());

        let mut b = CrossbarArray::new(8, 8, DeviceSpec::default(), 4).unwrap();
        b.electroform().unwrap();
        let before = b.conductances().to_vec();
        for _ in 0..50 {
            let _ = b.read_conductance();
        }
        assert_eq!(b.conductances(), &before[..]);
    }

    #[test]
    fn off_cells_never_read_negative() {
        let spec = DeviceSpec { read_noise_cv: 2.0, ..Default::default() };
        let mut b = DifferentialPairBank::new(10, 10, spec, 3, 0, 1.0).unwrap();
        b.form().unwrap();
        for r in 0..10 {
            for c in 0..10 {
                reset_pair(&mut b, r, c).unwrap();
            }
        }
        for _ in 0..20 {
            assert!(b.g_plus.read_conductance().data().iter().all(|&g| g >= 0.0));
        }
    }

    #[test]
    fn write_within_tolerance_uses_no_pulses() {
        let mut a = CrossbarArray::new(1, 1, DeviceSpec::default(), 1).unwrap();
        a.closed_loop_write(0, 0, 20.0).unwrap();
        let g = a.conductance(0, 0);
        let out = a.closed_loop_write(0, 0, g * 1.05).unwrap();
        assert_eq!(out.pulses, 0);
        assert!(out.converged);
        assert_eq!(a.state(0, 0), CellState::Formed);
    }

    #[test]
    fn write_errors_and_budget() {
        let mut a = CrossbarArray::new(1, 1, DeviceSpec::default(), 1).unwrap();
        assert!(matches!(a.closed_loop_write(0, 0, 0.0), Err(Error::Argument(_))));
        assert!(matches!(a.closed_loop_write(0, 0, -1.0), Err(Error::Argument(_))));
        assert!(matches!(a.closed_loop_write(1, 0, 5.0), Err(Error::Dimension(_))));

        let spec = DeviceSpec { max_write_pulses: 2, write_tolerance: 1e-9, ..Default::default() };
        let mut a = CrossbarArray::new(1, 1, spec, 1).unwrap();
        let out = a.closed_loop_write(0, 0, 30.0).unwrap();
        assert_eq!(out.pulses, 2);
        assert!(!out.converged);
    }

    #[test]
    fn converged_writes_meet_tolerance() {
        let mut a = CrossbarArray::new(1, 1, DeviceSpec::default(), 77).unwrap();
        for k in 0..200 {
            let target = 2.0 + (k as f64) * 0.2;
            let out = a.closed_loop_write(0, 0, target).unwrap();
            if out.converged {
                assert!((a.conductance(0, 0) - target).abs() / target <= 0.10);
            }
        }
    }
}
