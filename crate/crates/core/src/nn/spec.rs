//! Network descriptions and shape algebra.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    /// dims: `[out_ch, in_ch, kh, kw]`
    Conv2d,
    /// dims: `[]` for strict even inputs, `[1]` to drop a trailing odd row/column first.
    MaxPool2x2,
    Relu,
    Tanh,
    /// dims: `[out, in]`
    FullyConnected,
    /// dims: `[hidden, input, steps]`. Consumes `[input, steps, W]` feature
    /// maps: time runs along the height axis and each step's input vector is
    /// the mean over the width axis. Emits the mean hidden state.
    Recurrent,
    Flatten,
    SoftmaxXent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    #[serde(default)]
    pub dims: Vec<usize>,
}

impl LayerSpec {
    pub fn new(kind: LayerKind, dims: &[usize]) -> Self {
        LayerSpec { kind, dims: dims.to_vec() }
    }

    /// Weight matrices owned by this layer, in crossbar orientation
    /// `(rows = fan_in, cols = fan_out)`.
    pub fn weight_shapes(&self) -> Vec<(usize, usize)> {
        match (self.kind, self.dims.as_slice()) {
            (LayerKind::Conv2d, &[o, c, kh, kw]) => vec![(c * kh * kw, o)],
            (LayerKind::FullyConnected, &[o, i]) => vec![(i, o)],
            (LayerKind::Recurrent, &[h, i, _]) => vec![(i, h), (h, h)],
            _ => vec![],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub name: String,
    /// Per-sample input shape `[C, H, W]`.
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub scale_factor: f64,
}

/// One weight matrix of a network, mapped onto one differential-pair bank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightSlot {
    pub layer: usize,
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

fn scaled(n: usize, scale: f64) -> usize {
    // Guard against 64·0.125 = 8.000000001-style rounding pushing ceil up.
    ((n as f64 * scale) - 1e-9).ceil().max(1.0) as usize
}

/// The four-layer CNN for 14×14 inputs. At scale 1: C1 64×1×3×3,
/// C2 16×64×3×3, 2×2 max pool, F1 128×400, F2 10×128.
pub fn build_cnn(scale: f64) -> Result<NetworkSpec> {
    check_scale(scale)?;
    let c1 = scaled(64, scale);
    let c2 = scaled(16, scale);
    let f1 = scaled(128, scale);
    use LayerKind::*;
    Ok(NetworkSpec {
        name: "cnn".into(),
        input_shape: vec![1, 14, 14],
        layers: vec![
            LayerSpec::new(Conv2d, &[c1, 1, 3, 3]),
            LayerSpec::new(Relu, &[]),
            LayerSpec::new(Conv2d, &[c2, c1, 3, 3]),
            LayerSpec::new(Relu, &[]),
            LayerSpec::new(MaxPool2x2, &[]),
            LayerSpec::new(Flatten, &[]),
            LayerSpec::new(FullyConnected, &[f1, c2 * 5 * 5]),
            LayerSpec::new(Relu, &[]),
            LayerSpec::new(FullyConnected, &[10, f1]),
            LayerSpec::new(SoftmaxXent, &[]),
        ],
        scale_factor: scale,
    })
}

/// The five-layer CRNN for 23×15 feature maps. At scale 1: C1 64×1×3×2,
/// pool, C2 32×64×3×2, pool, R1 (W_ih 128×32, W_hh 128×128, 4 steps),
/// F1 256×128, F2 10×256.
pub fn build_crnn(scale: f64) -> Result<NetworkSpec> {
    check_scale(scale)?;
    let c1 = scaled(64, scale);
    let c2 = scaled(32, scale);
    let r = scaled(128, scale);
    let f1 = scaled(256, scale);
    use LayerKind::*;
    Ok(NetworkSpec {
        name: "crnn".into(),
        input_shape: vec![1, 23, 15],
        layers: vec![
            LayerSpec::new(Conv2d, &[c1, 1, 3, 2]),
            LayerSpec::new(Relu, &[]),
            LayerSpec::new(MaxPool2x2, &[1]),
            LayerSpec::new(Conv2d, &[c2, c1, 3, 2]),
            LayerSpec::new(Relu, &[]),
            LayerSpec::new(MaxPool2x2, &[1]),
            LayerSpec::new(Recurrent, &[r, c2, 4]),
            LayerSpec::new(FullyConnected, &[f1, r]),
            LayerSpec::new(Relu, &[]),
            LayerSpec::new(FullyConnected, &[10, f1]),
            LayerSpec::new(SoftmaxXent, &[]),
        ],
        scale_factor: scale,
    })
}

fn check_scale(scale: f64) -> Result<()> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::Config(format!("scale factor must be positive, got {scale}")));
    }
    Ok(())
}

impl NetworkSpec {
    pub fn weight_slots(&self) -> Vec<WeightSlot> {
        let mut slots = Vec::new();
        for (li, layer) in self.layers.iter().enumerate() {
            let shapes = layer.weight_shapes();
            let many = shapes.len() > 1;
            for (k, (rows, cols)) in shapes.into_iter().enumerate() {
                let name = match (layer.kind, many) {
                    (LayerKind::Recurrent, _) => format!("L{li}.{}", if k == 0 { "w_ih" } else { "w_hh" }),
                    _ => format!("L{li}"),
                };
                slots.push(WeightSlot { layer: li, name, rows, cols });
            }
        }
        slots
    }

    pub fn param_count(&self) -> usize {
        self.weight_slots().iter().map(|s| s.rows * s.cols).sum()
    }

    pub fn classes(&self) -> Result<usize> {
        let shapes = self.shapes()?;
        Ok(shapes.last().map(|s| s.iter().product()).unwrap_or(0))
    }

    /// Per-sample shape after each layer, starting with the input shape.
    /// Rejects every inconsistency.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut cur = self.input_shape.clone();
        if cur.is_empty() || cur.iter().any(|&d| d == 0) {
            return Err(Error::dim(format!("invalid input shape {cur:?}")));
        }
        let mut out = vec![cur.clone()];
        for (i, layer) in self.layers.iter().enumerate() {
            let bad = |msg: String| Error::dim(format!("layer {i} ({:?}): {msg}", layer.kind));
            if layer.dims.iter().any(|&d| d == 0) {
                return Err(bad("zero dimension".into()));
            }
            cur = match (layer.kind, layer.dims.as_slice()) {
                (LayerKind::Conv2d, &[o, c, kh, kw]) => match *cur.as_slice() {
                    [ic, h, w] if ic == c && h >= kh && w >= kw => vec![o, h - kh + 1, w - kw + 1],
                    _ => return Err(bad(format!("input {cur:?} does not fit kernel {:?}", layer.dims))),
                },
                (LayerKind::MaxPool2x2, dims) => match *cur.as_slice() {
                    [c, h, w] => {
                        let floor = dims == [1];
                        if !floor && (h % 2 != 0 || w % 2 != 0) {
                            return Err(bad(format!("odd spatial dims {h}x{w}")));
                        }
                        if h < 2 || w < 2 {
                            return Err(bad(format!("spatial dims {h}x{w} too small")));
                        }
                        vec![c, h / 2, w / 2]
                    }
                    _ => return Err(bad(format!("needs [C,H,W], got {cur:?}"))),
                },
                (LayerKind::Relu | LayerKind::Tanh | LayerKind::SoftmaxXent, []) => cur.clone(),
                (LayerKind::Flatten, []) => vec![cur.iter().product()],
                (LayerKind::FullyConnected, &[o, inp]) => {
                    if cur.len() != 1 || cur[0] != inp {
                        return Err(bad(format!("expects [{inp}], got {cur:?}")));
                    }
                    vec![o]
                }
                (LayerKind::Recurrent, &[h, inp, steps]) => match *cur.as_slice() {
                    [c, t, _] if c == inp && t == steps => vec![h],
                    _ => return Err(bad(format!("expects [{inp}, {steps}, W], got {cur:?}"))),
                },
                _ => return Err(bad(format!("malformed dims {:?}", layer.dims))),
            };
            if layer.kind == LayerKind::SoftmaxXent && i + 1 != self.layers.len() {
                return Err(bad("softmax must be the final layer".into()));
            }
            out.push(cur.clone());
        }
        match self.layers.last() {
            Some(l) if l.kind == LayerKind::SoftmaxXent => {}
            _ => return Err(Error::dim("network must end with SoftmaxXent")),
        }
        if cur.len() != 1 {
            return Err(Error::dim(format!("network output must be a vector, got {cur:?}")));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_scale_parameter_counts() {
        let cnn = build_cnn(1.0).unwrap();
        assert_eq!(cnn.param_count(), 576 + 9216 + 51_200 + 1280);
        assert!((cnn.param_count() as f64 - 62_000.0).abs() / 62_000.0 < 0.01);

        let crnn = build_crnn(1.0).unwrap();
        assert_eq!(crnn.param_count(), 384 + 12_288 + 4096 + 16_384 + 32_768 + 2560);
        assert!((crnn.param_count() as f64 - 68_500.0).abs() / 68_500.0 < 0.01);
    }

    #[test]
    fn scaled_channel_counts() {
        let cnn = build_cnn(1.0 / 8.0).unwrap();
        assert_eq!(cnn.layers[0].dims, vec![8, 1, 3, 3]);
        assert_eq!(cnn.layers[2].dims, vec![2, 8, 3, 3]);
        let tiny = build_cnn(1e-3).unwrap();
        assert_eq!(tiny.layers[0].dims[0], 1);
        assert!(build_cnn(0.0).is_err());
    }

    #[test]
    fn shape_propagation() {
        for s in [1.0, 0.5, 0.25, 0.125, 0.01] {
            let cnn = build_cnn(s).unwrap();
            let shapes = cnn.shapes().unwrap();
            assert_eq!(shapes.last().unwrap(), &vec![10]);
            let crnn = build_crnn(s).unwrap();
            let shapes = crnn.shapes().unwrap();
            assert_eq!(shapes.last().unwrap(), &vec![10]);
        }
        let cnn = build_cnn(1.0).unwrap().shapes().unwrap();
        assert_eq!(cnn[1], vec![64, 12, 12]);
        assert_eq!(cnn[3], vec![16, 10, 10]);
        assert_eq!(cnn[5], vec![16, 5, 5]);
        let crnn = build_crnn(1.0).unwrap().shapes().unwrap();
        assert_eq!(crnn[7], vec![128]);
    }

    #[test]
    fn rejects_mismatches() {
        let mut cnn = build_cnn(1.0).unwrap();
        cnn.layers[2].dims[1] = 3;
        assert!(cnn.shapes().is_err());

        let mut cnn = build_cnn(1.0).unwrap();
        cnn.input_shape = vec![1, 15, 14];
        assert!(cnn.shapes().is_err());

        let mut cnn = build_cnn(1.0).unwrap();
        cnn.layers.pop();
        assert!(cnn.shapes().is_err());
    }

    #[test]
    fn recurrent_has_two_slots() {
        let crnn = build_crnn(1.0).unwrap();
        let slots = crnn.weight_slots();
        assert_eq!(slots.len(), 6);
        assert_eq!((slots[2].rows, slots[2].cols), (32, 128));
        assert_eq!((slots[3].rows, slots[3].cols), (128, 128));
    }

    #[test]
    fn json_round_trip() {
        let crnn = build_crnn(0.25).unwrap();
        let s = serde_json::to_string(&crnn).unwrap();
        let back: NetworkSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(back, crnn);
    }
}
