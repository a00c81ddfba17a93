//! Browser bindings: each export returns a JSON string for the page to plot.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rramtopo::device::{reset_pair, CellState, DeviceSpec, DifferentialPairBank, StreamId};
use rramtopo::dist::{differential_us, modes, Histogram};
use rramtopo::snapshot::ArraySnapshot;
use rramtopo::vmm::{matmul_exact, vmm_bit_sliced, QuantizationSpec, ReadSnapshot};
use rramtopo::Result;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

const BETA: f64 = 1.0 / 27.2;

fn to_js(r: Result<Value>) -> std::result::Result<String, JsError> {
    r.map(|v| v.to_string()).map_err(|e| JsError::new(&e.to_string()))
}

/// Weight histograms of a freshly formed bank, before and after pruning a
/// random `sparsity` fraction of its pairs.
pub fn form_prune(rows: usize, cols: usize, sparsity: f64, bins: usize, seed: u64) -> Result<Value> {
    let mut bank = DifferentialPairBank::new(rows, cols, DeviceSpec::default(), seed, 0, BETA)?;
    bank.form()?;
    let weights = |b: &DifferentialPairBank| differential_us(b).iter().map(|g| g * BETA).collect::<Vec<_>>();
    let before = weights(&bank);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for r in 0..rows {
        for c in 0..cols {
            if rng.random_bool(sparsity.clamp(0.0, 1.0)) {
                reset_pair(&mut bank, r, c)?;
            }
        }
    }
    let after = weights(&bank);
    // Shared axis so the two histograms overlay.
    let span = before.iter().chain(&after).fold(0.0f64, |m, v| m.max(v.abs())).max(1e-9);
    let hb = Histogram::new(&before, bins, -span, span)?;
    let ha = Histogram::new(&after, bins, -span, span)?;
    Ok(json!({
        "centers": (0..bins).map(|i| hb.center(i)).collect::<Vec<_>>(),
        "before": hb.counts,
        "after": ha.counts,
        "peaks_before": hb.peaks(0.1),
        "peaks_after": ha.peaks(0.1),
        "modes_us": modes(&differential_us(&bank)),
    }))
}

/// Mean relative error of the bit-sliced product against the exact one on
/// unquantized inputs, for input precisions 1 to 8 bits.
pub fn vmm_error(rows: usize, cols: usize, read_noise_cv: f64, trials: usize, seed: u64) -> Result<Value> {
    let spec = DeviceSpec { read_noise_cv, ..Default::default() };
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bits: Vec<u32> = (1..=8).collect();
    let mut err = vec![0.0; bits.len()];
    for t in 0..trials.max(1) {
        let mut bank = DifferentialPairBank::new(rows, cols, spec.clone(), seed, t as u64, BETA)?;
        bank.form()?;
        let x: Vec<f64> = (0..rows).map(|_| rng.random_range(0.0..1.0)).collect();
        let exact = matmul_exact(&ReadSnapshot::stored(&bank).weights(), &x)?;
        let norm: f64 = exact.iter().map(|v| v.abs()).sum::<f64>().max(1e-12);
        for (e, &m) in err.iter_mut().zip(&bits) {
            let got = vmm_bit_sliced(&mut bank, &x, &QuantizationSpec::new(m, 0.0, 1.0)?)?;
            *e += got.iter().zip(&exact).map(|(g, w)| (g - w).abs()).sum::<f64>() / norm;
        }
    }
    let n = trials.max(1) as f64;
    Ok(json!({ "bits": bits, "relative_error": err.iter().map(|e| e / n).collect::<Vec<_>>() }))
}

/// Conductance after each program-and-verify pulse from `start_us` toward
/// `target_us`. Replaying the same stream with a growing pulse cap yields the
/// prefix of one write.
pub fn write_trace(start_us: f64, target_us: f64, write_noise_cv: f64, seed: u64) -> Result<Value> {
    let base = DeviceSpec { write_noise_cv, ..Default::default() };
    base.validate()?;
    let cell = |cap: u32| ArraySnapshot {
        rows: 1,
        cols: 1,
        spec: DeviceSpec { max_write_pulses: cap, ..base.clone() },
        stream: StreamId { seed, stream: 0 },
        word_pos: 0,
        electroformed: true,
        states: vec![CellState::Formed],
        conductance_us: vec![start_us],
    };
    let mut trace = vec![start_us];
    let mut converged = false;
    for cap in 1..=base.max_write_pulses {
        let mut a = cell(cap).restore()?;
        let out = a.closed_loop_write(0, 0, target_us)?;
        if out.pulses < cap {
            converged = out.converged;
            break;
        }
        trace.push(a.conductance(0, 0));
        if out.converged {
            converged = true;
            break;
        }
    }
    Ok(json!({
        "target_us": target_us,
        "tolerance": base.write_tolerance,
        "conductance_us": trace,
        "converged": converged,
    }))
}

// Seeds are u32 on the JS side so they stay plain numbers.
#[wasm_bindgen(js_name = formPrune)]
pub fn form_prune_js(rows: usize, cols: usize, sparsity: f64, bins: usize, seed: u32) -> std::result::Result<String, JsError> {
    to_js(form_prune(rows, cols, sparsity, bins, seed.into()))
}

#[wasm_bindgen(js_name = vmmError)]
pub fn vmm_error_js(rows: usize, cols: usize, read_noise_cv: f64, trials: usize, seed: u32) -> std::result::Result<String, JsError> {
    to_js(vmm_error(rows, cols, read_noise_cv, trials, seed.into()))
}

#[wasm_bindgen(js_name = writeTrace)]
pub fn write_trace_js(start_us: f64, target_us: f64, write_noise_cv: f64, seed: u32) -> std::result::Result<String, JsError> {
    to_js(write_trace(start_us, target_us, write_noise_cv, seed.into()))
}
