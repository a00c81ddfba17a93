//! Forward and backward kernels. All bias-free.
//!
//! Kernel layout is `[out, in, kh, kw]`; FC weights are `[out, in]`;
//! images are `[N, C, H, W]`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn dims4(t: &Tensor, what: &str) -> Result<[usize; 4]> {
    match *t.shape() {
        [a, b, c, d] => Ok([a, b, c, d]),
        _ => Err(Error::dim(format!("{what} must be rank 4, got {:?}", t.shape()))),
    }
}

fn dims2(t: &Tensor, what: &str) -> Result<[usize; 2]> {
    match *t.shape() {
        [a, b] => Ok([a, b]),
        _ => Err(Error::dim(format!("{what} must be rank 2, got {:?}", t.shape()))),
    }
}

/// Unfold one `[C, H, W]` image into valid `kh×kw` patches, one per output
/// position, each laid out `(c, i, j)` to match a flattened kernel row.
pub fn im2col(img: &[f64], c: usize, h: usize, w: usize, kh: usize, kw: usize) -> Vec<f64> {
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let k = c * kh * kw;
    let mut cols = vec![0.0; oh * ow * k];
    for y in 0..oh {
        for x in 0..ow {
            let base = (y * ow + x) * k;
            let mut idx = base;
            for ch in 0..c {
                for i in 0..kh {
                    let row = ch * h * w + (y + i) * w + x;
                    cols[idx..idx + kw].copy_from_slice(&img[row..row + kw]);
                    idx += kw;
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add patch gradients back onto the image.
pub fn col2im(cols: &[f64], c: usize, h: usize, w: usize, kh: usize, kw: usize) -> Vec<f64> {
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let k = c * kh * kw;
    let mut img = vec![0.0; c * h * w];
    for y in 0..oh {
        for x in 0..ow {
            let mut idx = (y * ow + x) * k;
            for ch in 0..c {
                for i in 0..kh {
                    let row = ch * h * w + (y + i) * w + x;
                    for j in 0..kw {
                        img[row + j] += cols[idx + j];
                    }
                    idx += kw;
                }
            }
        }
    }
    img
}

fn conv_shapes(x: &Tensor, k: &Tensor) -> Result<([usize; 4], [usize; 4], usize, usize)> {
    let [n, c, h, w] = dims4(x, "conv input")?;
    let [o, kc, kh, kw] = dims4(k, "conv kernel")?;
    if kc != c {
        return Err(Error::dim(format!("kernel expects {kc} channels, input has {c}")));
    }
    if h < kh || w < kw {
        return Err(Error::dim(format!("input {h}x{w} smaller than kernel {kh}x{kw}")));
    }
    Ok(([n, c, h, w], [o, kc, kh, kw], h - kh + 1, w - kw + 1))
}

/// Valid cross-correlation, stride 1, no padding.
pub fn conv2d_forward(x: &Tensor, k: &Tensor) -> Result<Tensor> {
    let ([n, c, h, w], [o, _, kh, kw], oh, ow) = conv_shapes(x, k)?;
    let klen = c * kh * kw;
    let img_len = c * h * w;
    let mut out = Tensor::zeros(&[n, o, oh, ow]);
    let p = oh * ow;
    for s in 0..n {
        let cols = im2col(&x.data()[s * img_len..(s + 1) * img_len], c, h, w, kh, kw);
        let dst = &mut out.data_mut()[s * o * p..(s + 1) * o * p];
        for oc in 0..o {
            let kr = &k.data()[oc * klen..(oc + 1) * klen];
            for pos in 0..p {
                let patch = &cols[pos * klen..(pos + 1) * klen];
                dst[oc * p + pos] = patch.iter().zip(kr).map(|(a, b)| a * b).sum();
            }
        }
    }
    Ok(out)
}

/// Gradients of [`conv2d_forward`] with respect to input and kernel.
pub fn conv2d_backward(x: &Tensor, k: &Tensor, dy: &Tensor) -> Result<(Tensor, Tensor)> {
    let ([n, c, h, w], [o, _, kh, kw], oh, ow) = conv_shapes(x, k)?;
    dy.expect_shape(&[n, o, oh, ow])?;
    let klen = c * kh * kw;
    let img_len = c * h * w;
    let p = oh * ow;
    let mut dx = Tensor::zeros(x.shape());
    let mut dk = Tensor::zeros(k.shape());
    for s in 0..n {
        let cols = im2col(&x.data()[s * img_len..(s + 1) * img_len], c, h, w, kh, kw);
        let g = &dy.data()[s * o * p..(s + 1) * o * p];
        let mut dcols = vec![0.0; p * klen];
        for oc in 0..o {
            let kr = &k.data()[oc * klen..(oc + 1) * klen];
            let dkr = &mut dk.data_mut()[oc * klen..(oc + 1) * klen];
            for pos in 0..p {
                let gv = g[oc * p + pos];
                if gv == 0.0 {
                    continue;
                }
                let patch = &cols[pos * klen..(pos + 1) * klen];
                for (d, &v) in dkr.iter_mut().zip(patch) {
                    *d += gv * v;
                }
                let dpatch = &mut dcols[pos * klen..(pos + 1) * klen];
                for (d, &kv) in dpatch.iter_mut().zip(kr) {
                    *d += gv * kv;
                }
            }
        }
        let dimg = col2im(&dcols, c, h, w, kh, kw);
        dx.data_mut()[s * img_len..(s + 1) * img_len].copy_from_slice(&dimg);
    }
    Ok((dx, dk))
}

/// 2×2 max pooling, stride 2. Ties go to the first element in row-major
/// scan order. Returns the output and the flat argmax of every window.
pub fn maxpool2x2_forward(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let [n, c, h, w] = dims4(x, "maxpool input")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::dim(format!("maxpool2x2 needs even spatial dims, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let mut arg = vec![0usize; n * c * oh * ow];
    let src = x.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for y in 0..oh {
            for xx in 0..ow {
                let mut best = base + 2 * y * w + 2 * xx;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * y + dy) * w + 2 * xx + dx;
                    if src[idx] > src[best] {
                        best = idx;
                    }
                }
                let o = plane * oh * ow + y * ow + xx;
                out.data_mut()[o] = src[best];
                arg[o] = best;
            }
        }
    }
    Ok((out, arg))
}

/// Route each window's gradient to its recorded argmax.
pub fn maxpool2x2_backward(dy: &Tensor, argmax: &[usize], input_shape: &[usize]) -> Result<Tensor> {
    if dy.len() != argmax.len() {
        return Err(Error::dim("maxpool gradient does not match stored argmax"));
    }
    let mut dx = Tensor::zeros(input_shape);
    for (&g, &i) in dy.data().iter().zip(argmax) {
        dx.data_mut()[i] += g;
    }
    Ok(dx)
}

pub fn relu_forward(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Gradient passes where the forward input was strictly positive.
pub fn relu_backward(x: &Tensor, dy: &Tensor) -> Result<Tensor> {
    x.zip_map(dy, |v, g| if v > 0.0 { g } else { 0.0 })
}

pub fn tanh_forward(x: &Tensor) -> Tensor {
    x.map(f64::tanh)
}

/// Uses the forward output: d tanh = 1 − y².
pub fn tanh_backward(y: &Tensor, dy: &Tensor) -> Result<Tensor> {
    y.zip_map(dy, |v, g| g * (1.0 - v * v))
}

fn fc_shapes(x: &Tensor, w: &Tensor) -> Result<(usize, usize, usize)> {
    let [n, i] = dims2(x, "fc input")?;
    let [o, wi] = dims2(w, "fc weight")?;
    if wi != i {
        return Err(Error::dim(format!("fc weight expects {wi} inputs, got {i}")));
    }
    Ok((n, i, o))
}

/// `y = x·Wᵀ` for `x: [N, in]`, `W: [out, in]`.
pub fn fc_forward(x: &Tensor, w: &Tensor) -> Result<Tensor> {
    let (n, i, o) = fc_shapes(x, w)?;
    let mut y = Tensor::zeros(&[n, o]);
    for s in 0..n {
        let xs = &x.data()[s * i..(s + 1) * i];
        for r in 0..o {
            let wr = &w.data()[r * i..(r + 1) * i];
            y.data_mut()[s * o + r] = xs.iter().zip(wr).map(|(a, b)| a * b).sum();
        }
    }
    Ok(y)
}

pub fn fc_backward(x: &Tensor, w: &Tensor, dy: &Tensor) -> Result<(Tensor, Tensor)> {
    let (n, i, o) = fc_shapes(x, w)?;
    dy.expect_shape(&[n, o])?;
    let mut dx = Tensor::zeros(&[n, i]);
    let mut dw = Tensor::zeros(&[o, i]);
    for s in 0..n {
        let xs = &x.data()[s * i..(s + 1) * i];
        for r in 0..o {
            let g = dy.data()[s * o + r];
            if g == 0.0 {
                continue;
            }
            let wr = &w.data()[r * i..(r + 1) * i];
            let dxs = &mut dx.data_mut()[s * i..(s + 1) * i];
            for (d, &wv) in dxs.iter_mut().zip(wr) {
                *d += g * wv;
            }
            let dwr = &mut dw.data_mut()[r * i..(r + 1) * i];
            for (d, &xv) in dwr.iter_mut().zip(xs) {
                *d += g * xv;
            }
        }
    }
    Ok((dx, dw))
}

fn matvec(w: &Tensor, x: &[f64]) -> Vec<f64> {
    let cols = w.shape()[1];
    w.data().chunks(cols).map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

/// One recurrent step: `h_t = tanh(W_ih·x_t + W_hh·h_prev)`.
/// `W_ih: [hidden, in]`, `W_hh: [hidden, hidden]`.
pub fn rnn_step(x_t: &Tensor, h_prev: &Tensor, w_ih: &Tensor, w_hh: &Tensor) -> Result<Tensor> {
    let [hid, inp] = dims2(w_ih, "W_ih")?;
    w_hh.expect_shape(&[hid, hid])?;
    if x_t.len() != inp || h_prev.len() != hid {
        return Err(Error::dim(format!(
            "rnn step wants x of {inp} and h of {hid}, got {} and {}",
            x_t.len(),
            h_prev.len()
        )));
    }
    let a = matvec(w_ih, x_t.data());
    let b = matvec(w_hh, h_prev.data());
    let h: Vec<f64> = a.iter().zip(&b).map(|(p, q)| (p + q).tanh()).collect();
    Tensor::from_vec(&[hid], h)
}

/// Gradients of one step given the step output `h_t` and upstream `dh_t`.
/// Returns `(dx_t, dh_prev, dW_ih, dW_hh)`.
pub fn rnn_step_backward(
    x_t: &Tensor,
    h_prev: &Tensor,
    h_t: &Tensor,
    w_ih: &Tensor,
    w_hh: &Tensor,
    dh_t: &Tensor,
) -> Result<(Tensor, Tensor, Tensor, Tensor)> {
    let [hid, inp] = dims2(w_ih, "W_ih")?;
    if h_t.len() != hid || dh_t.len() != hid || x_t.len() != inp || h_prev.len() != hid {
        return Err(Error::dim("rnn backward shapes disagree"));
    }
    let da: Vec<f64> = h_t.data().iter().zip(dh_t.data()).map(|(h, g)| g * (1.0 - h * h)).collect();
    let mut dx = vec![0.0; inp];
    let mut dh_prev = vec![0.0; hid];
    let mut dw_ih = Tensor::zeros(&[hid, inp]);
    let mut dw_hh = Tensor::zeros(&[hid, hid]);
    for (r, &g) in da.iter().enumerate() {
        for c in 0..inp {
            dx[c] += g * w_ih.data()[r * inp + c];
            dw_ih.data_mut()[r * inp + c] = g * x_t.data()[c];
        }
        for c in 0..hid {
            dh_prev[c] += g * w_hh.data()[r * hid + c];
            dw_hh.data_mut()[r * hid + c] = g * h_prev.data()[c];
        }
    }
    Ok((
        Tensor::from_vec(&[inp], dx)?,
        Tensor::from_vec(&[hid], dh_prev)?,
        dw_ih,
        dw_hh,
    ))
}

/// Mean of the hidden states over all steps.
pub fn rnn_average(hs: &[Tensor]) -> Result<Tensor> {
    let first = hs
        .first()
        .ok_or_else(|| Error::Argument("rnn_average of an empty sequence".into()))?;
    let mut sum = Tensor::zeros(first.shape());
    for h in hs {
        sum.add_assign(h)?;
    }
    sum.scale(1.0 / hs.len() as f64);
    Ok(sum)
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cross-entropy of one sample. Returns `(loss, dlogits = softmax − onehot)`.
pub fn softmax_xent(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::Argument(format!(
            "label {label} outside [0, {})",
            logits.len()
        )));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    let loss = lse - logits[label];
    let mut grad = softmax(logits);
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// Batched cross-entropy over `[N, classes]` logits; returns summed loss.
pub fn softmax_xent_batch(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let [n, k] = dims2(logits, "logits")?;
    if labels.len() != n {
        return Err(Error::dim(format!("{n} logit rows but {} labels", labels.len())));
    }
    let mut grad = Tensor::zeros(&[n, k]);
    let mut total = 0.0;
    for (s, &label) in labels.iter().enumerate() {
        let (l, g) = softmax_xent(&logits.data()[s * k..(s + 1) * k], label)?;
        total += l;
        grad.data_mut()[s * k..(s + 1) * k].copy_from_slice(&g);
    }
    Ok((total, grad))
}
