//! Histograms and mode statistics of differential conductance.

use serde::{Deserialize, Serialize};

use crate::device::{DifferentialPairBank, FORMED_FLOOR_US};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// `bins` equal-width bins over `[lo, hi]`; the top edge is inclusive.
    pub fn new(values: &[f64], bins: usize, lo: f64, hi: f64) -> Result<Self> {
        if bins == 0 || !(hi > lo) {
            return Err(Error::Argument(format!("need bins >= 1 and hi > lo, got {bins} over [{lo}, {hi}]")));
        }
        let mut counts = vec![0u64; bins];
        let width = (hi - lo) / bins as f64;
        for &v in values {
            if v < lo || v > hi || v.is_nan() {
                continue;
            }
            let b = (((v - lo) / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
        Ok(Histogram { lo, hi, counts })
    }

    /// Symmetric range `[-m, m]` with `m` the largest magnitude (at least 1).
    pub fn symmetric(values: &[f64], bins: usize) -> Result<Self> {
        let m = values.iter().fold(1.0f64, |a, v| a.max(v.abs())) * (1.0 + 1e-9);
        Self::new(values, bins, -m, m)
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.counts.len() as f64
    }

    pub fn center(&self, bin: usize) -> f64 {
        self.lo + (bin as f64 + 0.5) * self.width()
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("bin_center,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            out.push_str(&format!("{},{c}\n", crate::grid::fmt6(self.center(i))));
        }
        out
    }

    /// Centers of local maxima of the 3-bin smoothed histogram that reach
    /// `min_fraction` of the tallest smoothed bin. Plateaus count once.
    pub fn peaks(&self, min_fraction: f64) -> Vec<f64> {
        let n = self.counts.len();
        let c: Vec<f64> = self.counts.iter().map(|&v| v as f64).collect();
        let s: Vec<f64> = (0..n)
            .map(|i| {
                let lo = i.saturating_sub(1);
                let hi = (i + 1).min(n - 1);
                c[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
            })
            .collect();
        let top = s.iter().cloned().fold(0.0, f64::max);
        if top == 0.0 {
            return vec![];
        }
        let mut peaks = Vec::new();
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && s[j + 1] == s[i] {
                j += 1;
            }
            let left_ok = i == 0 || s[i - 1] < s[i];
            let right_ok = j + 1 == n || s[j + 1] < s[i];
            if left_ok && right_ok && s[i] >= min_fraction * top {
                peaks.push((self.center(i) + self.center(j)) / 2.0);
            }
            i = j + 1;
        }
        peaks
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ModeStats {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
}

impl ModeStats {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return ModeStats::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        ModeStats { count: values.len(), mean, std }
    }
}

/// Negative, near-zero, and positive modes of differential conductance, µS.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Modes {
    pub negative: ModeStats,
    pub zero: ModeStats,
    pub positive: ModeStats,
}

/// Split at `±FORMED_FLOOR_US/2`: a conducting pair always differs by more.
pub fn modes(diff_us: &[f64]) -> Modes {
    let cut = FORMED_FLOOR_US / 2.0;
    let pick = |f: &dyn Fn(f64) -> bool| -> Vec<f64> { diff_us.iter().cloned().filter(|&v| f(v)).collect() };
    Modes {
        negative: ModeStats::of(&pick(&|v| v < -cut)),
        zero: ModeStats::of(&pick(&|v| v.abs() <= cut)),
        positive: ModeStats::of(&pick(&|v| v > cut)),
    }
}

/// `G+ − G−` of every pair, µS.
pub fn differential_us(bank: &DifferentialPairBank) -> Vec<f64> {
    bank.g_plus.conductances().iter().zip(bank.g_minus.conductances()).map(|(p, m)| p - m).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_bins_and_edges() {
        let h = Histogram::new(&[-1.0, 0.0, 1.0], 2, -1.0, 1.0).unwrap();
        assert_eq!(h.counts, vec![1, 2]);
        assert!(Histogram::new(&[], 0, 0.0, 1.0).is_err());
    }

    #[test]
    fn peak_scan() {
        let mut v = vec![-27.0; 50];
        v.extend(vec![27.0; 50]);
        v.extend(vec![0.0; 40]);
        let h = Histogram::new(&v, 101, -30.0, 30.0).unwrap();
        assert_eq!(h.peaks(0.1).len(), 3);
        let single = Histogram::new(&[0.03; 10], 101, -1.0, 1.0).unwrap();
        assert_eq!(single.peaks(0.1).len(), 1);
    }
}
