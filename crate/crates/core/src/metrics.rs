//! Classification and segmentation metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

/// A ratio that may have had a zero denominator. Degenerate values are 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub value: f64,
    pub degenerate: bool,
}

fn ratio(num: f64, den: f64) -> Metric {
    if den == 0.0 {
        Metric { value: 0.0, degenerate: true }
    } else {
        Metric { value: num / den, degenerate: false }
    }
}

pub fn confusion(pred: &[bool], truth: &[bool]) -> Result<ConfusionCounts> {
    if pred.len() != truth.len() {
        return Err(Error::dim(format!(
            "{} predictions vs {} labels",
            pred.len(),
            truth.len()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred.iter().zip(truth) {
        match (p, t) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// TP / (TP + FN)
    pub fn tpr_recall(&self) -> Metric {
        ratio(self.tp as f64, (self.tp + self.fn_) as f64)
    }

    /// FP / (TN + FP)
    pub fn fpr(&self) -> Metric {
        ratio(self.fp as f64, (self.tn + self.fp) as f64)
    }

    /// TP / (TP + FP)
    pub fn precision(&self) -> Metric {
        ratio(self.tp as f64, (self.tp + self.fp) as f64)
    }

    /// Harmonic mean of precision and recall.
    pub fn f1(&self) -> Metric {
        let p = self.precision();
        let r = self.tpr_recall();
        let m = ratio(2.0 * p.value * r.value, p.value + r.value);
        Metric { value: m.value, degenerate: m.degenerate || p.degenerate || r.degenerate }
    }

    pub fn accuracy(&self) -> Metric {
        ratio((self.tp + self.tn) as f64, self.total() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curves {
    /// `(threshold, FPR, TPR)`, thresholds descending, starting at (0, 0).
    pub roc: Vec<CurvePoint>,
    /// `(threshold, recall, precision)`, starting at recall 0, precision 1.
    pub pr: Vec<CurvePoint>,
    pub auc_roc: f64,
    pub auc_pr: f64,
}

fn trapezoid(points: &[CurvePoint]) -> f64 {
    points.windows(2).map(|w| (w[1].x - w[0].x) * (w[1].y + w[0].y) / 2.0).sum()
}

/// Sweep every distinct score as a `score ≥ threshold` cut and integrate
/// both curves with the trapezoid rule.
pub fn roc_pr_curves(probabilities: &[f64], truth: &[bool]) -> Result<Curves> {
    if probabilities.is_empty() {
        return Err(Error::Argument("curves need at least one score".into()));
    }
    if probabilities.len() != truth.len() {
        return Err(Error::dim("scores and labels differ in length"));
    }
    if probabilities.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::Argument("scores must lie in [0, 1]".into()));
    }
    let mut order: Vec<usize> = (0..probabilities.len()).collect();
    order.sort_by(|&a, &b| probabilities[b].total_cmp(&probabilities[a]));
    let pos = truth.iter().filter(|&&t| t).count() as f64;
    let neg = truth.len() as f64 - pos;

    let mut roc = vec![CurvePoint { threshold: f64::INFINITY, x: 0.0, y: 0.0 }];
    let mut pr = vec![CurvePoint { threshold: f64::INFINITY, x: 0.0, y: 1.0 }];
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let thr = probabilities[order[i]];
        while i < order.len() && probabilities[order[i]] == thr {
            if truth[order[i]] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        let tpr = ratio(tp, pos).value;
        let fpr = ratio(fp, neg).value;
        roc.push(CurvePoint { threshold: thr, x: fpr, y: tpr });
        pr.push(CurvePoint { threshold: thr, x: tpr, y: ratio(tp, tp + fp).value });
    }
    Ok(Curves {
        auc_roc: trapezoid(&roc),
        auc_pr: trapezoid(&pr),
        roc,
        pr,
    })
}

/// Square multi-class confusion matrix, `rows = truth`, `cols = prediction`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix { classes, counts: vec![vec![0; classes]; classes] }
    }

    pub fn record(&mut self, truth: usize, pred: usize) {
        self.counts[truth][pred] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let diag: u64 = (0..self.classes).map(|i| self.counts[i][i]).sum();
        ratio(diag as f64, self.total() as f64).value
    }

    pub fn is_diagonal(&self) -> bool {
        (0..self.classes).all(|i| (0..self.classes).all(|j| i == j || self.counts[i][j] == 0))
    }
}
