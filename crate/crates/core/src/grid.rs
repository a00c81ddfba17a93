//! Conductance-grid CSV: a `rows,cols` line holding the dimensions, then
//! one row-major line per row with 6 significant digits.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Shortest decimal that round-trips the value rounded to 6 significant digits.
pub fn fmt6(v: f64) -> String {
    let rounded: f64 = format!("{v:.5e}").parse().expect("formatted float parses");
    format!("{rounded}")
}

pub fn grid_string(grid: &Tensor) -> Result<String> {
    let &[rows, cols] = grid.shape() else {
        return Err(Error::dim(format!("grid must be 2-D, got {:?}", grid.shape())));
    };
    let mut out = format!("{rows},{cols}\n");
    for r in 0..rows {
        let line: Vec<String> = grid.data()[r * cols..(r + 1) * cols].iter().map(|&v| fmt6(v)).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    Ok(out)
}

pub fn write_grid(path: &Path, grid: &Tensor) -> Result<()> {
    std::fs::write(path, grid_string(grid)?).map_err(|e| Error::io(path, e))
}

pub fn parse_grid(text: &str, source: &str) -> Result<Tensor> {
    let err = |line: usize, msg: String| Error::Parse { path: source.into(), at: format!("line {line}"), msg };
    let mut lines = text.lines();
    let head = lines.next().ok_or_else(|| err(1, "empty grid file".into()))?;
    let dims: Vec<usize> = head.split(',').map(|f| f.trim().parse().map_err(|_| err(1, format!("bad dimension {f:?}")))).collect::<Result<_>>()?;
    let &[rows, cols] = dims.as_slice() else {
        return Err(err(1, "header must be rows,cols".into()));
    };
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let line = lines.next().ok_or_else(|| err(r + 2, format!("expected {rows} rows")))?;
        let vals: Vec<f64> = line.split(',').map(|f| f.trim().parse().map_err(|_| err(r + 2, format!("bad value {f:?}")))).collect::<Result<_>>()?;
        if vals.len() != cols {
            return Err(err(r + 2, format!("expected {cols} values, found {}", vals.len())));
        }
        data.extend(vals);
    }
    Tensor::from_vec(&[rows, cols], data)
}

pub fn read_grid(path: &Path) -> Result<Tensor> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_grid(&text, &path.display().to_string())
}
