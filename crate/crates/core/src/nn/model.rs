//! Per-sample forward/backward over a [`NetworkSpec`].
//!
//! Weighted layers go through a [`LinearBackend`], so the same network runs
//! on exact digital weights or on simulated crossbars. The backward pass is
//! always digital: it takes explicit weight matrices and treats whatever the
//! backend saw as the layer input (straight-through over quantization).

use serde::{Deserialize, Serialize};

use super::ops::{col2im, im2col, maxpool2x2_backward, maxpool2x2_forward, softmax_xent};
use super::spec::{LayerKind, NetworkSpec};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// How a layer input is mapped onto the digitization range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputScaling {
    Fixed { lo: f64, hi: f64 },
    /// Range taken from the data of each call: `[min(0, min x), max x]`.
    Dynamic,
}

impl InputScaling {
    /// Resolve to a concrete `[lo, hi)`. `None` means every value is zero.
    pub fn resolve(&self, x: &[f64]) -> Option<(f64, f64)> {
        match *self {
            InputScaling::Fixed { lo, hi } => Some((lo, hi)),
            InputScaling::Dynamic => {
                let min = x.iter().cloned().fold(0.0, f64::min);
                let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut span = max - min;
                if !(span > 0.0) {
                    if min == 0.0 {
                        return None;
                    }
                    span = min.abs();
                }
                Some((min, min + span * (1.0 + 1e-9)))
            }
        }
    }
}

/// Output of one batched linear application.
pub struct LinearOut {
    /// `[n, cols]`, row-major.
    pub y: Vec<f64>,
    /// The inputs as the weights actually saw them, `[n, rows]`.
    pub x_eff: Vec<f64>,
}

pub trait LinearBackend {
    /// Compute `Wᵀx` for `n` row-major input vectors against weight slot `slot`.
    fn apply(&mut self, slot: usize, x: &[f64], n: usize, scaling: InputScaling) -> Result<LinearOut>;
}

/// Exact floating-point weights, `[rows, cols]` per slot.
pub struct ExactBackend<'a> {
    pub weights: &'a [Tensor],
}

impl LinearBackend for ExactBackend<'_> {
    fn apply(&mut self, slot: usize, x: &[f64], n: usize, _scaling: InputScaling) -> Result<LinearOut> {
        let w = &self.weights[slot];
        let (rows, cols) = (w.shape()[0], w.shape()[1]);
        if x.len() != n * rows {
            return Err(Error::dim(format!("slot {slot}: {} inputs for {n}x{rows}", x.len())));
        }
        Ok(LinearOut {
            y: matmul_rows(x, n, rows, w.data(), cols),
            x_eff: x.to_vec(),
        })
    }
}

/// `X[n, rows] · W[rows, cols]`.
pub(crate) fn matmul_rows(x: &[f64], n: usize, rows: usize, w: &[f64], cols: usize) -> Vec<f64> {
    let mut y = vec![0.0; n * cols];
    for s in 0..n {
        let out = &mut y[s * cols..(s + 1) * cols];
        for (r, &xv) in x[s * rows..(s + 1) * rows].iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            for (o, &wv) in out.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
                *o += xv * wv;
            }
        }
    }
    y
}

/// Input scaling for every weight slot: the first layer uses `first`, inputs
/// that come straight from a tanh use `[-1, 1)`, everything else is dynamic.
pub fn default_scalings(spec: &NetworkSpec, first: InputScaling) -> Vec<InputScaling> {
    let tanh_range = InputScaling::Fixed { lo: -1.0, hi: 1.0 };
    let mut out = Vec::new();
    let mut prev_bounded = false;
    let mut seen_weighted = false;
    for layer in &spec.layers {
        match layer.kind {
            LayerKind::Conv2d | LayerKind::FullyConnected => {
                out.push(if !seen_weighted {
                    first
                } else if prev_bounded {
                    tanh_range
                } else {
                    InputScaling::Dynamic
                });
                seen_weighted = true;
                prev_bounded = false;
            }
            LayerKind::Recurrent => {
                out.push(if seen_weighted { InputScaling::Dynamic } else { first });
                out.push(tanh_range);
                seen_weighted = true;
                prev_bounded = true;
            }
            LayerKind::Tanh => prev_bounded = true,
            LayerKind::Relu => prev_bounded = false,
            _ => {}
        }
    }
    out
}

enum Cache {
    Conv {
        cols: Vec<f64>,
        in_shape: [usize; 3],
        kh: usize,
        kw: usize,
        slot: usize,
    },
    Pool {
        argmax: Vec<usize>,
        cropped: [usize; 3],
        original: [usize; 3],
    },
    Relu(Vec<f64>),
    Tanh(Vec<f64>),
    Fc {
        x_eff: Vec<f64>,
        slot: usize,
    },
    Recurrent {
        xs: Vec<Vec<f64>>,
        h_prev: Vec<Vec<f64>>,
        hs: Vec<Vec<f64>>,
        in_shape: [usize; 3],
        slots: (usize, usize),
    },
    Flatten,
    Softmax,
}

/// Everything the backward pass needs from one forward pass.
pub struct Trace {
    caches: Vec<Cache>,
    pub logits: Vec<f64>,
}

impl Trace {
    pub fn predicted(&self) -> usize {
        argmax(&self.logits)
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn three(shape: &[usize]) -> Result<[usize; 3]> {
    match *shape {
        [a, b, c] => Ok([a, b, c]),
        _ => Err(Error::dim(format!("expected [C,H,W], got {shape:?}"))),
    }
}

/// Run one sample `[C, H, W]` through the network.
pub fn forward<B: LinearBackend>(
    spec: &NetworkSpec,
    backend: &mut B,
    scalings: &[InputScaling],
    x: &Tensor,
) -> Result<Trace> {
    x.expect_shape(&spec.input_shape)?;
    let mut shape = spec.input_shape.clone();
    let mut data = x.data().to_vec();
    let mut caches = Vec::with_capacity(spec.layers.len());
    let mut slot = 0;
    for layer in &spec.layers {
        match (layer.kind, layer.dims.as_slice()) {
            (LayerKind::Conv2d, &[o, c, kh, kw]) => {
                let [ic, h, w] = three(&shape)?;
                if ic != c || h < kh || w < kw {
                    return Err(Error::dim(format!("conv input {shape:?} vs kernel {:?}", layer.dims)));
                }
                let (oh, ow) = (h - kh + 1, w - kw + 1);
                let p = oh * ow;
                let cols = im2col(&data, c, h, w, kh, kw);
                let out = backend.apply(slot, &cols, p, scalings[slot])?;
                let mut y = vec![0.0; o * p];
                for pos in 0..p {
                    for oc in 0..o {
                        y[oc * p + pos] = out.y[pos * o + oc];
                    }
                }
                caches.push(Cache::Conv { cols: out.x_eff, in_shape: [c, h, w], kh, kw, slot });
                slot += 1;
                data = y;
                shape = vec![o, oh, ow];
            }
            (LayerKind::MaxPool2x2, dims) => {
                let [c, h, w] = three(&shape)?;
                let floor = dims == [1];
                let (ch, cw) = if floor { (h - h % 2, w - w % 2) } else { (h, w) };
                let mut cropped = Vec::with_capacity(c * ch * cw);
                for ci in 0..c {
                    for y in 0..ch {
                        let base = ci * h * w + y * w;
                        cropped.extend_from_slice(&data[base..base + cw]);
                    }
                }
                let t = Tensor::from_vec(&[1, c, ch, cw], cropped)?;
                let (pooled, argmax) = maxpool2x2_forward(&t)?;
                caches.push(Cache::Pool { argmax, cropped: [c, ch, cw], original: [c, h, w] });
                data = pooled.into_data();
                shape = vec![c, ch / 2, cw / 2];
            }
            (LayerKind::Relu, _) => {
                let out = data.iter().map(|&v| v.max(0.0)).collect();
                caches.push(Cache::Relu(std::mem::replace(&mut data, out)));
            }
            (LayerKind::Tanh, _) => {
                data.iter_mut().for_each(|v| *v = v.tanh());
                caches.push(Cache::Tanh(data.clone()));
            }
            (LayerKind::Flatten, _) => {
                caches.push(Cache::Flatten);
                shape = vec![data.len()];
            }
            (LayerKind::FullyConnected, &[o, i]) => {
                if data.len() != i {
                    return Err(Error::dim(format!("fc expects {i} inputs, got {}", data.len())));
                }
                let out = backend.apply(slot, &data, 1, scalings[slot])?;
                caches.push(Cache::Fc { x_eff: out.x_eff, slot });
                slot += 1;
                data = out.y;
                shape = vec![o];
            }
            (LayerKind::Recurrent, &[hid, inp, steps]) => {
                let [c, t, w] = three(&shape)?;
                if c != inp || t != steps {
                    return Err(Error::dim(format!("recurrent input {shape:?} vs dims {:?}", layer.dims)));
                }
                let (s_ih, s_hh) = (slot, slot + 1);
                let mut xs = Vec::with_capacity(t);
                let mut h_prev = Vec::with_capacity(t);
                let mut hs: Vec<Vec<f64>> = Vec::with_capacity(t);
                let mut h = vec![0.0; hid];
                for step in 0..t {
                    let x_t: Vec<f64> = (0..c)
                        .map(|ci| {
                            let row = &data[ci * t * w + step * w..ci * t * w + (step + 1) * w];
                            row.iter().sum::<f64>() / w as f64
                        })
                        .collect();
                    let a = backend.apply(s_ih, &x_t, 1, scalings[s_ih])?;
                    // h(0) = 0: the recurrent array is not driven on the first step.
                    let (b, h_eff) = if step == 0 {
                        (vec![0.0; hid], vec![0.0; hid])
                    } else {
                        let out = backend.apply(s_hh, &h, 1, scalings[s_hh])?;
                        (out.y, out.x_eff)
                    };
                    h = a.y.iter().zip(&b).map(|(p, q)| (p + q).tanh()).collect();
                    xs.push(a.x_eff);
                    h_prev.push(h_eff);
                    hs.push(h.clone());
                }
                let mut avg = vec![0.0; hid];
                for hv in &hs {
                    for (a, v) in avg.iter_mut().zip(hv) {
                        *a += v;
                    }
                }
                avg.iter_mut().for_each(|a| *a /= t as f64);
                caches.push(Cache::Recurrent { xs, h_prev, hs, in_shape: [c, t, w], slots: (s_ih, s_hh) });
                slot += 2;
                data = avg;
                shape = vec![hid];
            }
            (LayerKind::SoftmaxXent, _) => caches.push(Cache::Softmax),
            (kind, dims) => return Err(Error::dim(format!("malformed layer {kind:?} {dims:?}"))),
        }
    }
    Ok(Trace { caches, logits: data })
}

/// Backpropagate one sample. `weights[slot]` is `[rows, cols]`; returns the
/// loss and one `[rows, cols]` gradient per slot.
pub fn backward(trace: &Trace, weights: &[Tensor], label: usize) -> Result<(f64, Vec<Tensor>)> {
    let (loss, mut grad) = softmax_xent(&trace.logits, label)?;
    let mut grads: Vec<Tensor> = weights.iter().map(|w| Tensor::zeros(w.shape())).collect();
    for cache in trace.caches.iter().rev() {
        grad = match cache {
            Cache::Softmax | Cache::Flatten => grad,
            Cache::Relu(input) => input.iter().zip(&grad).map(|(&x, &g)| if x > 0.0 { g } else { 0.0 }).collect(),
            Cache::Tanh(out) => out.iter().zip(&grad).map(|(&y, &g)| g * (1.0 - y * y)).collect(),
            Cache::Fc { x_eff, slot } => {
                let w = &weights[*slot];
                let cols = w.shape()[1];
                let gw = grads[*slot].data_mut();
                let mut dx = vec![0.0; x_eff.len()];
                for (r, &xv) in x_eff.iter().enumerate() {
                    let wr = &w.data()[r * cols..(r + 1) * cols];
                    let gr = &mut gw[r * cols..(r + 1) * cols];
                    let mut acc = 0.0;
                    for c in 0..cols {
                        gr[c] += xv * grad[c];
                        acc += wr[c] * grad[c];
                    }
                    dx[r] = acc;
                }
                dx
            }
            Cache::Conv { cols, in_shape, kh, kw, slot } => {
                let [c, h, w] = *in_shape;
                let wt = &weights[*slot];
                let (rows, o) = (wt.shape()[0], wt.shape()[1]);
                let p = cols.len() / rows;
                let gw = grads[*slot].data_mut();
                let mut dcols = vec![0.0; p * rows];
                for pos in 0..p {
                    let patch = &cols[pos * rows..(pos + 1) * rows];
                    let dpatch = &mut dcols[pos * rows..(pos + 1) * rows];
                    for oc in 0..o {
                        let g = grad[oc * p + pos];
                        if g == 0.0 {
                            continue;
                        }
                        for r in 0..rows {
                            gw[r * o + oc] += patch[r] * g;
                            dpatch[r] += wt.data()[r * o + oc] * g;
                        }
                    }
                }
                col2im(&dcols, c, h, w, *kh, *kw)
            }
            Cache::Pool { argmax, cropped, original } => {
                let dy = Tensor::from_vec(&[argmax.len()], grad)?;
                let [c, ch, cw] = *cropped;
                let dcrop = maxpool2x2_backward(&dy, argmax, &[1, c, ch, cw])?;
                let [_, h, w] = *original;
                let mut dx = vec![0.0; c * h * w];
                for ci in 0..c {
                    for y in 0..ch {
                        let src = &dcrop.data()[ci * ch * cw + y * cw..ci * ch * cw + (y + 1) * cw];
                        dx[ci * h * w + y * w..ci * h * w + y * w + cw].copy_from_slice(src);
                    }
                }
                dx
            }
            Cache::Recurrent { xs, h_prev, hs, in_shape, slots } => {
                let [c, t, w] = *in_shape;
                let (w_ih, w_hh) = (&weights[slots.0], &weights[slots.1]);
                let hid = w_hh.shape()[0];
                let mut dfeat = vec![0.0; c * t * w];
                let mut dh_next = vec![0.0; hid];
                for step in (0..t).rev() {
                    let da: Vec<f64> = (0..hid)
                        .map(|j| (grad[j] / t as f64 + dh_next[j]) * (1.0 - hs[step][j] * hs[step][j]))
                        .collect();
                    {
                        let g = grads[slots.0].data_mut();
                        for (r, &xv) in xs[step].iter().enumerate() {
                            let mut acc = 0.0;
                            for j in 0..hid {
                                g[r * hid + j] += xv * da[j];
                                acc += w_ih.data()[r * hid + j] * da[j];
                            }
                            let dx = acc / w as f64;
                            for k in 0..w {
                                dfeat[r * t * w + step * w + k] += dx;
                            }
                        }
                    }
                    let g = grads[slots.1].data_mut();
                    for (r, &hv) in h_prev[step].iter().enumerate() {
                        let mut acc = 0.0;
                        for j in 0..hid {
                            g[r * hid + j] += hv * da[j];
                            acc += w_hh.data()[r * hid + j] * da[j];
                        }
                        dh_next[r] = if step == 0 { 0.0 } else { acc };
                    }
                }
                dfeat
            }
        };
    }
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::spec::{build_cnn, build_crnn};

    #[test]
    fn dynamic_range_resolution() {
        assert_eq!(InputScaling::Dynamic.resolve(&[0.0, 0.0]), None);
        let (lo, hi) = InputScaling::Dynamic.resolve(&[0.0, 2.0, 1.0]).unwrap();
        assert_eq!(lo, 0.0);
        assert!(hi > 2.0 && hi < 2.0 + 1e-6);
        let (lo, hi) = InputScaling::Dynamic.resolve(&[-3.0, -3.0]).unwrap();
        assert_eq!(lo, -3.0);
        assert!(hi > 0.0);
    }

    #[test]
    fn scaling_plan() {
        let first = InputScaling::Fixed { lo: 0.0, hi: 1.0 };
        let cnn = default_scalings(&build_cnn(0.125).unwrap(), first);
        assert_eq!(cnn, vec![first, InputScaling::Dynamic, InputScaling::Dynamic, InputScaling::Dynamic]);
        let crnn = default_scalings(&build_crnn(0.25).unwrap(), InputScaling::Dynamic);
        let tanh = InputScaling::Fixed { lo: -1.0, hi: 1.0 };
        assert_eq!(
            crnn,
            vec![
                InputScaling::Dynamic,
                InputScaling::Dynamic,
                InputScaling::Dynamic,
                tanh,
                tanh,
                InputScaling::Dynamic
            ]
        );
    }
}
