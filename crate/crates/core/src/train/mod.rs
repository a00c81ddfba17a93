//! Hardware-in-the-loop training: topology optimization over fixed random
//! conductance, and the conductance-tuning baseline.
//!
//! Both trainers run forward passes through noisy analogue reads and the
//! backward pass on stored (noiseless) weights. Per-sample random streams
//! are keyed by `(seed, purpose, epoch, sample)`, and batch gradients are
//! reduced in sample order, so results do not depend on the worker count.

pub mod ledger;
pub mod report;
pub mod scored;
pub mod threshold;
pub mod topology;
pub mod weights;

use rayon::prelude::*;

use crate::data::Dataset;
use crate::energy::{EnergyMeter, EnergySpec};
use crate::error::{Error, Result};
use crate::hw::HardwareNet;
use crate::metrics::ConfusionMatrix;
use crate::nn::model::backward;
use crate::nn::ops::softmax;
use crate::rng;
use crate::tensor::Tensor;

pub use report::{EpochRow, TrainReport};
pub use topology::{train_topology, TopologyOutcome};
pub use weights::{train_weights, WeightsOutcome};

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

pub fn make_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))
}

/// Summed gradients and statistics of one mini-batch.
pub struct BatchOut {
    pub grads: Vec<Tensor>,
    pub loss: f64,
    pub correct: usize,
    pub energy: EnergyMeter,
}

/// Forward `idx` through noisy reads and backpropagate through `weights`.
/// `key` is `(seed, purpose tag, epoch)`.
pub fn batch_gradients(
    net: &HardwareNet,
    weights: &[Tensor],
    data: &Dataset,
    idx: &[usize],
    energy: &EnergySpec,
    key: [u64; 3],
    pool: &rayon::ThreadPool,
) -> Result<BatchOut> {
    let per_sample: Vec<Result<(Vec<Tensor>, f64, bool, EnergyMeter)>> = pool.install(|| {
        idx.par_iter()
            .map(|&i| {
                let (x, label) = &data.samples[i];
                let mut r = rng::stream(&[key[0], key[1], key[2], i as u64]);
                let (trace, meter) = net.forward_analog(x, &mut r, energy)?;
                let (loss, grads) = backward(&trace, weights, *label)?;
                if !loss.is_finite() {
                    return Err(Error::Numeric(format!("non-finite loss on sample {i} (epoch {})", key[2])));
                }
                Ok((grads, loss, trace.predicted() == *label, meter))
            })
            .collect()
    });
    let mut out = BatchOut {
        grads: weights.iter().map(|w| Tensor::zeros(w.shape())).collect(),
        loss: 0.0,
        correct: 0,
        energy: EnergyMeter::default(),
    };
    for r in per_sample {
        let (grads, loss, ok, meter) = r?;
        for (acc, g) in out.grads.iter_mut().zip(&grads) {
            acc.add_assign(g)?;
        }
        out.loss += loss;
        out.correct += ok as usize;
        out.energy.add(&meter);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
    /// Softmax output per sample.
    pub probabilities: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub energy: EnergyMeter,
}

impl Evaluation {
    pub fn energy_per_sample_uj(&self) -> f64 {
        if self.labels.is_empty() {
            0.0
        } else {
            self.energy.total_uj() / self.labels.len() as f64
        }
    }
}

/// Inference over a whole dataset through noisy analogue reads.
pub fn evaluate(net: &HardwareNet, data: &Dataset, energy: &EnergySpec, key: [u64; 3], pool: &rayon::ThreadPool) -> Result<Evaluation> {
    let classes = net.spec.classes()?;
    let per_sample: Vec<Result<(Vec<f64>, EnergyMeter)>> = pool.install(|| {
        (0..data.len())
            .into_par_iter()
            .map(|i| {
                let mut r = rng::stream(&[key[0], key[1], key[2], i as u64]);
                let (trace, meter) = net.forward_analog(&data.samples[i].0, &mut r, energy)?;
                Ok((trace.logits, meter))
            })
            .collect()
    });
    let mut ev = Evaluation {
        accuracy: 0.0,
        confusion: ConfusionMatrix::new(classes),
        probabilities: Vec::with_capacity(data.len()),
        labels: Vec::with_capacity(data.len()),
        energy: EnergyMeter::default(),
    };
    for (r, (_, label)) in per_sample.into_iter().zip(&data.samples) {
        let (logits, meter) = r?;
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite logits during evaluation".into()));
        }
        let pred = crate::nn::model::argmax(&logits);
        if *label >= classes {
            return Err(Error::Argument(format!("label {label} outside {classes} classes")));
        }
        ev.confusion.record(*label, pred);
        ev.probabilities.push(softmax(&logits));
        ev.labels.push(*label);
        ev.energy.add(&meter);
    }
    ev.accuracy = ev.confusion.accuracy();
    Ok(ev)
}

/// Deterministic epoch order of the training set.
pub(crate) fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(&[seed, rng::tag::TRAIN, epoch, u64::MAX]));
    idx
}
