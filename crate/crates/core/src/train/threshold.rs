//! Update gating with a decaying threshold.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linearly decaying gate `T(t) = max(t_end, t_init − t·(t_init − t_end)/α)`,
/// where `t` counts new-best validation results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdState {
    pub t_init: f64,
    pub t_end: f64,
    pub alpha: f64,
    pub t_counter: u32,
    pub current: f64,
}

impl ThresholdState {
    pub fn new(t_init: f64, t_end: f64, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::Config(format!("threshold alpha must be positive, got {alpha}")));
        }
        if !(t_end >= 0.0) || !(t_init >= t_end) || !t_init.is_finite() {
            return Err(Error::Config(format!(
                "need 0 <= t_end <= t_init, got t_init={t_init}, t_end={t_end}"
            )));
        }
        Ok(ThresholdState { t_init, t_end, alpha, t_counter: 0, current: t_init })
    }

    /// Value of the schedule after `t` new bests.
    pub fn value_at(&self, t: u32) -> f64 {
        let v = self.t_init - t as f64 * (self.t_init - self.t_end) / self.alpha;
        v.max(self.t_end)
    }

    pub fn decay(&mut self, new_best: bool) {
        if new_best {
            self.t_counter += 1;
            self.current = self.value_at(self.t_counter);
        }
    }
}

/// Keep `Δs` where `|Δs| ≥ threshold`, zero elsewhere.
pub fn gate_score_update(delta: &[f64], threshold: f64) -> Vec<f64> {
    delta.iter().map(|&d| if d.abs() >= threshold { d } else { 0.0 }).collect()
}

/// Like [`gate_score_update`], but a zero update never survives, so a zero
/// threshold means "program every cell with a non-zero gradient".
pub fn gate_weight_update(delta: &[f64], t_w: f64) -> Vec<f64> {
    delta.iter().map(|&d| if d != 0.0 && d.abs() >= t_w { d } else { 0.0 }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gating() {
        assert_eq!(gate_score_update(&[0.05], 0.1), vec![0.0]);
        assert_eq!(gate_score_update(&[-0.2], 0.1), vec![-0.2]);
        assert_eq!(gate_score_update(&[0.1], 0.1), vec![0.1]);
        let d = [0.0, 1e-12, -3.0];
        assert_eq!(gate_score_update(&d, 0.0), d.to_vec());
        assert_eq!(gate_weight_update(&d, 0.0), d.to_vec());
        assert_eq!(gate_weight_update(&d, f64::INFINITY), vec![0.0; 3]);
    }

    #[test]
    fn schedule() {
        let mut th = ThresholdState::new(0.1, 0.01, 9.0).unwrap();
        assert_eq!(th.current, 0.1);
        th.decay(false);
        assert_eq!(th.current, 0.1);
        th.decay(true);
        assert!((th.current - 0.09).abs() < 1e-15);
        for _ in 0..20 {
            th.decay(true);
        }
        assert_eq!(th.current, 0.01);
        assert!(ThresholdState::new(0.1, 0.01, 0.0).is_err());
        assert!(ThresholdState::new(0.01, 0.1, 1.0).is_err());
    }
}
