//! Datasets: IDX images, feature-map CSV, synthetic blobs, and splits.

use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::grid::fmt6;
use crate::rng;
use crate::tensor::Tensor;

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    /// `[1, H, W]` tensors with their labels.
    pub samples: Vec<(Tensor, usize)>,
    pub class_count: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_shape(&self) -> Option<&[usize]> {
        self.samples.first().map(|(t, _)| t.shape())
    }

    fn subset(&self, idx: &[usize], suffix: &str) -> Dataset {
        Dataset {
            name: format!("{}/{suffix}", self.name),
            samples: idx.iter().map(|&i| self.samples[i].clone()).collect(),
            class_count: self.class_count,
        }
    }
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..]).read_to_end(&mut out).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            at: "byte 0".into(),
            msg: format!("bad gzip stream: {e}"),
        })?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn parse_err(path: &Path, at: usize, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.display().to_string(), at: format!("byte {at}"), msg: msg.into() }
}

/// Header and payload of one IDX file with the expected magic number.
fn parse_idx<'a>(path: &Path, bytes: &'a [u8], magic: u32, ndims: usize) -> Result<(Vec<usize>, &'a [u8])> {
    let word = |at: usize| -> Result<u32> {
        bytes
            .get(at..at + 4)
            .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
            .ok_or_else(|| parse_err(path, bytes.len(), format!("header truncated, need {} bytes", at + 4)))
    };
    let got = word(0)?;
    if got != magic {
        return Err(parse_err(path, 0, format!("magic {got:#010x}, expected {magic:#010x}")));
    }
    let dims: Vec<usize> = (0..ndims).map(|k| word(4 + 4 * k).map(|d| d as usize)).collect::<Result<_>>()?;
    let start = 4 + 4 * ndims;
    let expected: usize = dims.iter().product();
    let payload = &bytes[start..];
    if payload.len() < expected {
        return Err(parse_err(
            path,
            bytes.len(),
            format!("truncated payload: expected {expected} bytes after header, found {}", payload.len()),
        ));
    }
    Ok((dims, &payload[..expected]))
}

/// Load an IDX image file and its label file (either may be gzipped).
/// Pixels are scaled by 1/255.
pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let ib = read_maybe_gz(images)?;
    let lb = read_maybe_gz(labels)?;
    let (idims, pixels) = parse_idx(images, &ib, IDX_IMAGES, 3)?;
    let (ldims, labs) = parse_idx(labels, &lb, IDX_LABELS, 1)?;
    let (n, h, w) = (idims[0], idims[1], idims[2]);
    if ldims[0] != n {
        return Err(Error::dim(format!("{n} images but {} labels", ldims[0])));
    }
    let class_count = labs.iter().map(|&l| l as usize + 1).max().unwrap_or(0).max(10);
    let samples = (0..n)
        .map(|i| {
            let data = pixels[i * h * w..(i + 1) * h * w].iter().map(|&p| p as f64 / 255.0).collect();
            (Tensor::from_vec(&[1, h, w], data).expect("shape"), labs[i] as usize)
        })
        .collect();
    Ok(Dataset { name: "idx".into(), samples, class_count })
}

/// Floor-quantize `v ∈ [0, 1]` to `k/2^bits`, `k < 2^bits`.
pub fn quantize_unit(v: f64, bits: u32) -> f64 {
    let levels = (1u32 << bits) as f64;
    (v * levels).floor().clamp(0.0, levels - 1.0) / levels
}

/// Block-mean downsample to `target_hw × target_hw`, then quantize to `bits`.
pub fn preprocess_fashion(ds: &Dataset, target_hw: usize, bits: u32) -> Result<Dataset> {
    if target_hw == 0 || !(1..=16).contains(&bits) {
        return Err(Error::Argument("target size and bits must be positive".into()));
    }
    let mut samples = Vec::with_capacity(ds.len());
    for (x, label) in &ds.samples {
        let &[c, h, w] = x.shape() else {
            return Err(Error::dim(format!("expected [C,H,W], got {:?}", x.shape())));
        };
        if h != w || h % target_hw != 0 || c != 1 {
            return Err(Error::dim(format!("cannot pool {h}x{w} to {target_hw}x{target_hw}")));
        }
        let b = h / target_hw;
        let mut out = vec![0.0; target_hw * target_hw];
        for (i, o) in out.iter_mut().enumerate() {
            let (r, col) = (i / target_hw, i % target_hw);
            let mut s = 0.0;
            for dy in 0..b {
                for dx in 0..b {
                    s += x.data()[(r * b + dy) * w + col * b + dx];
                }
            }
            *o = quantize_unit(s / (b * b) as f64, bits);
        }
        samples.push((Tensor::from_vec(&[1, target_hw, target_hw], out)?, *label));
    }
    Ok(Dataset { name: format!("{}-{target_hw}px-{bits}b", ds.name), samples, class_count: ds.class_count })
}

/// Feature-map CSV: a `H,W,classes` header line, then `label,v1,…,v(H·W)` rows.
pub fn load_feature_csv(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let p = path.display().to_string();
    let err = |line: usize, col: usize, msg: String| Error::Parse { path: p.clone(), at: format!("line {line}, column {col}"), msg };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| err(1, 1, "missing H,W,classes header".into()))?;
    let head: Vec<usize> = header
        .split(',')
        .enumerate()
        .map(|(k, f)| f.trim().parse().map_err(|_| err(1, k + 1, format!("not an integer: {f:?}"))))
        .collect::<Result<_>>()?;
    let &[h, w, classes] = head.as_slice() else {
        return Err(err(1, 1, format!("header needs 3 fields, found {}", head.len())));
    };
    let mut samples = Vec::new();
    for (ln, line) in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 1 + h * w {
            return Err(err(ln + 1, fields.len().min(1 + h * w) + 1, format!("expected {} fields, found {}", 1 + h * w, fields.len())));
        }
        let label: usize = fields[0].trim().parse().map_err(|_| err(ln + 1, 1, format!("bad label {:?}", fields[0])))?;
        if label >= classes {
            return Err(err(ln + 1, 1, format!("label {label} outside {classes} classes")));
        }
        let vals: Vec<f64> = fields[1..]
            .iter()
            .enumerate()
            .map(|(k, f)| {
                f.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err(ln + 1, k + 2, format!("not a number: {f:?}")))
            })
            .collect::<Result<_>>()?;
        samples.push((Tensor::from_vec(&[1, h, w], vals)?, label));
    }
    Ok(Dataset { name: "features".into(), samples, class_count: classes })
}

pub fn feature_csv_string(ds: &Dataset) -> Result<String> {
    let (h, w) = match ds.sample_shape() {
        Some(&[1, h, w]) => (h, w),
        Some(s) => return Err(Error::dim(format!("feature CSV needs [1,H,W] samples, got {s:?}"))),
        None => (0, 0),
    };
    let mut out = format!("{h},{w},{}\n", ds.class_count);
    for (x, label) in &ds.samples {
        out.push_str(&label.to_string());
        for v in x.data() {
            out.push(',');
            out.push_str(&fmt6(*v));
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write_feature_csv(ds: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, feature_csv_string(ds)?).map_err(|e| Error::io(path, e))
}

/// Gaussian prototypes, one per class, plus isotropic noise. Prototype
/// entries are `N(0, separation²/D)`, so prototypes have norm ≈ separation.
///
/// `smoothing > 0` box-blurs each prototype over the last two axes with that
/// half-width and rescales it to norm `separation`, giving feature-map-like
/// local correlation.
pub fn synth_blobs(
    classes: usize,
    per_class: usize,
    shape: &[usize],
    separation: f64,
    noise: f64,
    smoothing: usize,
    seed: u64,
) -> Result<Dataset> {
    if !(separation > 0.0) || !(noise >= 0.0) {
        return Err(Error::Argument("separation must be positive and noise non-negative".into()));
    }
    let dim: usize = shape.iter().product();
    if dim == 0 {
        return Err(Error::dim("blob shape must be non-empty"));
    }
    let mut r = rng::stream(&[seed, rng::tag::DATA]);
    let proto_dist = Normal::new(0.0, separation / (dim as f64).sqrt()).expect("finite");
    let prototypes: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            let p: Vec<f64> = (0..dim).map(|_| proto_dist.sample(&mut r)).collect();
            if smoothing == 0 {
                return p;
            }
            let p = box_blur(&p, shape, smoothing);
            let norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
            p.iter().map(|v| v * separation / norm).collect()
        })
        .collect();
    let noise_dist = Normal::new(0.0, noise).expect("finite");
    let mut samples = Vec::with_capacity(classes * per_class);
    for _ in 0..per_class {
        for (k, p) in prototypes.iter().enumerate() {
            let data = p.iter().map(|&v| v + noise_dist.sample(&mut r)).collect();
            samples.push((Tensor::from_vec(shape, data)?, k));
        }
    }
    Ok(Dataset { name: "blobs".into(), samples, class_count: classes })
}

/// Clamped box blur of half-width `k` along the last two axes of `shape`.
fn box_blur(v: &[f64], shape: &[usize], k: usize) -> Vec<f64> {
    let w = *shape.last().unwrap_or(&1);
    let h = if shape.len() >= 2 { shape[shape.len() - 2] } else { 1 };
    let plane = h * w;
    let mut out = vec![0.0; v.len()];
    for base in (0..v.len()).step_by(plane) {
        for y in 0..h {
            for x in 0..w {
                let (y0, y1) = (y.saturating_sub(k), (y + k).min(h - 1));
                let (x0, x1) = (x.saturating_sub(k), (x + k).min(w - 1));
                let mut acc = 0.0;
                for yy in y0..=y1 {
                    acc += v[base + yy * w + x0..=base + yy * w + x1].iter().sum::<f64>();
                }
                out[base + y * w + x] = acc / ((y1 - y0 + 1) * (x1 - x0 + 1)) as f64;
            }
        }
    }
    out
}

/// Deterministic shuffle, then disjoint `train / val / test` slices.
pub fn split(ds: &Dataset, train_n: usize, val_n: usize, test_n: usize, seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let need = train_n + val_n + test_n;
    if need > ds.len() {
        return Err(Error::Argument(format!("split wants {need} samples, dataset has {}", ds.len())));
    }
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    idx.shuffle(&mut rng::stream(&[seed, rng::tag::DATA, 1]));
    Ok((
        ds.subset(&idx[..train_n], "train"),
        ds.subset(&idx[train_n..train_n + val_n], "val"),
        ds.subset(&idx[train_n + val_n..need], "test"),
    ))
}
