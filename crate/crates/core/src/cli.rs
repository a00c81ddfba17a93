//! The `rramtopo` command line.
//!
//! Exit codes: 0 success, 1 internal error, 2 configuration error,
//! 3 missing input, 4 numeric failure.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::config::{RunConfig, WoMode};
use crate::dist::{differential_us, modes, Histogram, Modes};
use crate::error::{Error, Result};
use crate::grid::{fmt6, write_grid};
use crate::metrics::{confusion, roc_pr_curves, Curves};
use crate::snapshot::StateSnapshot;
use crate::tensor::Tensor;
use crate::train::{self, scored, TrainReport};

/// Power reference values for the same models on a GPU, µJ per inference.
/// Quoted for context in comparison reports; never computed here.
pub const GPU_REFERENCE_UJ: [(&str, f64); 3] = [("cnn", 5.76), ("crnn", 2.15), ("unet", 1913.6)];

#[derive(Parser, Debug)]
#[command(name = "rramtopo", version, about = "Resistive-memory crossbar simulator with topology training")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Run configuration (JSON). Relative data paths resolve against its directory.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Batch workers. Results do not depend on this value.
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    Free,
    BudgetMatched,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Form the banks of the configured network and summarize them.
    Form {
        #[command(flatten)]
        common: Common,
    },
    /// Train by topology optimization.
    TrainTo {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Train the weight-optimization baseline.
    TrainWo {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Operation budget for budget-matched mode.
        #[arg(long)]
        budget: Option<u64>,
        /// Take the budget from a topology run directory.
        #[arg(long)]
        budget_from: Option<PathBuf>,
    },
    /// Test-set inference from a saved state.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Run directory holding `state.json`.
        #[arg(long)]
        run: PathBuf,
    },
    /// Compare a topology run with weight-optimization runs.
    Report {
        #[arg(long)]
        to: PathBuf,
        #[arg(long)]
        wo: Vec<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Differential-conductance histograms before and after pruning.
    ExportDist {
        /// Run directory holding `state.json`.
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value_t = 101)]
        bins: usize,
        /// Prune a copy of a dense state at this sparsity for the "after" histogram.
        #[arg(long)]
        prune: Option<f64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Argument(_) | Error::Parse { .. } | Error::Json(_) => 2,
        Error::Missing(_) => 3,
        Error::Numeric(_) => 4,
        _ => 1,
    }
}

/// Parse `args` (including the program name) and run. Returns the exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn strict() -> bool {
    std::env::var("REPRO_STRICT").map(|v| v == "1").unwrap_or(false)
}

/// Load the config and apply overrides. Returns it with the data base directory.
fn load_config(c: &Common) -> Result<(RunConfig, PathBuf)> {
    let (mut cfg, base) = match &c.config {
        Some(p) => (RunConfig::load(p)?, p.parent().map(Path::to_path_buf).unwrap_or_default()),
        None => (RunConfig::default(), PathBuf::from(".")),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(w) = c.workers {
        cfg.workers = w;
    }
    if strict() {
        cfg.workers = 1;
    }
    cfg.validate()?;
    Ok((cfg, base))
}

fn mkdir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n").map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Form { common } => cmd_form(&common),
        Command::TrainTo { common, epochs } => cmd_train_to(&common, epochs),
        Command::TrainWo { common, epochs, mode, budget, budget_from } => cmd_train_wo(&common, epochs, mode, budget, budget_from),
        Command::Eval { common, run } => cmd_eval(&common, &run),
        Command::Report { to, wo, out } => cmd_report(&to, &wo, &out),
        Command::ExportDist { run, bins, prune, out } => cmd_export_dist(&run, bins, prune, &out),
    }
}

#[derive(Serialize)]
struct BankSummary {
    name: String,
    rows: usize,
    cols: usize,
    beta: f64,
    g_plus_formed: usize,
    g_minus_formed: usize,
    g_minus_pristine: usize,
    modes_us: Modes,
    weight_modes: Modes,
}

fn scale_modes(m: &Modes, k: f64) -> Modes {
    let s = |x: crate::dist::ModeStats| crate::dist::ModeStats { count: x.count, mean: x.mean * k, std: x.std * k };
    Modes { negative: s(m.negative), zero: s(m.zero), positive: s(m.positive) }
}

fn cmd_form(c: &Common) -> Result<()> {
    use crate::device::CellState;
    let (cfg, _) = load_config(c)?;
    let net = cfg.form_network(1.0 - cfg.topology.sparsity)?;
    mkdir(&c.out)?;
    let mut banks = Vec::new();
    for (slot, bank) in net.spec.weight_slots().iter().zip(&net.banks) {
        let name = slot.name.replace('.', "_");
        write_grid(&c.out.join(format!("{name}_gplus.csv")), &bank.g_plus.stored_grid())?;
        write_grid(&c.out.join(format!("{name}_gminus.csv")), &bank.g_minus.stored_grid())?;
        let m = modes(&differential_us(bank));
        banks.push(BankSummary {
            name,
            rows: bank.rows(),
            cols: bank.cols(),
            beta: bank.beta,
            g_plus_formed: bank.g_plus.count(CellState::Formed),
            g_minus_formed: bank.g_minus.count(CellState::Formed),
            g_minus_pristine: bank.g_minus.count(CellState::Pristine),
            weight_modes: scale_modes(&m, bank.beta),
            modes_us: m,
        });
    }
    let all: Vec<f64> = net.banks.iter().flat_map(differential_us).collect();
    write_json(&c.out.join("summary.json"), &json!({ "seed": cfg.seed, "overall_modes_us": modes(&all), "banks": banks }))?;
    StateSnapshot::capture("formed", &cfg, &net).save(&c.out.join("state.json"))
}

fn write_layers(out: &Path, net: &crate::hw::HardwareNet, layers: &[scored::ScoredLayer]) -> Result<()> {
    for (l, slot) in layers.iter().zip(net.spec.weight_slots()) {
        let (r, cc) = (slot.rows, slot.cols);
        let name = slot.name.replace('.', "_");
        write_grid(&out.join(format!("{name}_scores.csv")), &Tensor::from_vec(&[r, cc], l.scores.clone())?)?;
        let mask = l.mask.iter().map(|&m| m as u8 as f64).collect();
        write_grid(&out.join(format!("{name}_mask.csv")), &Tensor::from_vec(&[r, cc], mask)?)?;
    }
    Ok(())
}

fn cmd_train_to(c: &Common, epochs: Option<usize>) -> Result<()> {
    let (mut cfg, base) = load_config(c)?;
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    let splits = cfg.load_splits(&base)?;
    let pool = train::make_pool(cfg.workers)?;
    let mut net = cfg.form_network(1.0 - cfg.topology.sparsity)?;
    let outcome = train::train_topology(&mut net, &splits, &cfg, &pool)?;
    outcome.report.write(&c.out)?;
    write_layers(&c.out, &net, &outcome.layers)?;
    let mut snap = StateSnapshot::capture("topology", &cfg, &net);
    snap.layers = Some(outcome.layers);
    snap.save(&c.out.join("state.json"))
}

fn cmd_train_wo(c: &Common, epochs: Option<usize>, mode: Option<ModeArg>, budget: Option<u64>, budget_from: Option<PathBuf>) -> Result<()> {
    let (mut cfg, base) = load_config(c)?;
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    if let Some(m) = mode {
        cfg.weights.mode = match m {
            ModeArg::Free => WoMode::Free,
            ModeArg::BudgetMatched => WoMode::BudgetMatched,
        };
    }
    if let Some(dir) = budget_from {
        cfg.weights.budget_ops = Some(TrainReport::read(&dir)?.total_operations());
    }
    if budget.is_some() {
        cfg.weights.budget_ops = budget;
    }
    if cfg.weights.mode == WoMode::BudgetMatched && cfg.weights.budget_ops.is_none() && cfg.weights.t_w.is_none() {
        return Err(Error::Config("budget-matched mode needs --budget, --budget-from, or weights.budget_ops".into()));
    }
    let splits = cfg.load_splits(&base)?;
    let pool = train::make_pool(cfg.workers)?;
    let mut net = cfg.form_network(1.0)?;
    let outcome = train::train_weights(&mut net, &splits, &cfg, &pool)?;
    outcome.report.write(&c.out)?;
    let mut snap = StateSnapshot::capture("weights", &cfg, &net);
    snap.shadow = Some(outcome.shadow);
    snap.save(&c.out.join("state.json"))
}

fn curves_csv(c: &Curves) -> (String, String) {
    let f = |pts: &[crate::metrics::CurvePoint]| {
        let mut s = String::from("threshold,x,y\n");
        for p in pts {
            let t = if p.threshold.is_finite() { fmt6(p.threshold) } else { "inf".into() };
            s.push_str(&format!("{t},{},{}\n", fmt6(p.x), fmt6(p.y)));
        }
        s
    };
    (f(&c.roc), f(&c.pr))
}

fn cmd_eval(c: &Common, run: &Path) -> Result<()> {
    let snap = StateSnapshot::load(&run.join("state.json"))?;
    let (mut cfg, base) = match &c.config {
        Some(_) => load_config(c)?,
        None => (snap.config.clone(), PathBuf::from(".")),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    cfg.workers = if strict() { 1 } else { c.workers.unwrap_or(cfg.workers) };
    let net = snap.network()?;
    let splits = cfg.load_splits(&base)?;
    let pool = train::make_pool(cfg.workers)?;
    let ev = train::evaluate(&net, &splits.test, &cfg.energy, [cfg.seed, crate::rng::tag::EVAL, u64::MAX - 1], &pool)?;
    mkdir(&c.out)?;
    let k = ev.confusion.classes;
    let mut csv = String::new();
    for row in &ev.confusion.counts {
        csv.push_str(&row.iter().map(u64::to_string).collect::<Vec<_>>().join(","));
        csv.push('\n');
    }
    write_text(&c.out.join("confusion.csv"), &csv)?;
    let mut metrics = json!({
        "method": snap.method,
        "samples": ev.labels.len(),
        "accuracy": ev.accuracy,
        "energy_uj_per_sample": ev.energy_per_sample_uj(),
        "confusion": ev.confusion.counts,
        "diagonal": ev.confusion.is_diagonal(),
    });
    if k == 2 && !ev.labels.is_empty() {
        let p1: Vec<f64> = ev.probabilities.iter().map(|p| p[1]).collect();
        let truth: Vec<bool> = ev.labels.iter().map(|&l| l == 1).collect();
        let pred: Vec<bool> = p1.iter().map(|&p| p >= 0.5).collect();
        let counts = confusion(&pred, &truth)?;
        let curves = roc_pr_curves(&p1, &truth)?;
        let (roc, pr) = curves_csv(&curves);
        write_text(&c.out.join("roc.csv"), &roc)?;
        write_text(&c.out.join("pr.csv"), &pr)?;
        metrics["binary"] = json!({
            "counts": counts,
            "tpr_recall": counts.tpr_recall(),
            "fpr": counts.fpr(),
            "precision": counts.precision(),
            "f1": counts.f1(),
            "accuracy": counts.accuracy(),
            "auc_roc": curves.auc_roc,
            "auc_pr": curves.auc_pr,
        });
    }
    write_json(&c.out.join("metrics.json"), &metrics)
}

fn cmd_report(to: &Path, wo: &[PathBuf], out: &Path) -> Result<()> {
    let t = TrainReport::read(to)?;
    let others: Vec<TrainReport> = wo.iter().map(|d| TrainReport::read(d)).collect::<Result<_>>()?;
    mkdir(out)?;
    let entry = |r: &TrainReport| {
        let tot = r.ledger.total();
        json!({
            "method": r.method,
            "mode": r.mode,
            "t_w": r.t_w,
            "test_acc": r.test_acc,
            "operations": tot.operations(),
            "resets": tot.resets,
            "sets": tot.sets,
            "write_ops": tot.write_ops,
            "write_pulses": tot.write_pulses,
            "programming_energy_uj": r.programming_energy.total_uj,
            "forward_energy_uj_per_sample": r.test_energy_uj_per_sample,
        })
    };
    let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
    let comparisons: Vec<_> = others
        .iter()
        .map(|w| {
            json!({
                "against": w.mode,
                "operations_ratio": ratio(t.total_operations() as f64, w.total_operations() as f64),
                "forward_energy_reduction": 1.0 - ratio(t.test_energy_uj_per_sample, w.test_energy_uj_per_sample),
                "accuracy_gap": t.test_acc - w.test_acc,
            })
        })
        .collect();
    let gpu: serde_json::Map<String, serde_json::Value> = GPU_REFERENCE_UJ.iter().map(|(k, v)| (k.to_string(), json!(v))).collect();
    let mut runs = vec![entry(&t)];
    runs.extend(others.iter().map(entry));
    let mut csv = String::from("method,mode,test_acc,operations,write_pulses,programming_energy_uJ,fwd_energy_uJ\n");
    for r in std::iter::once(&t).chain(&others) {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.method,
            r.mode.as_deref().unwrap_or(""),
            fmt6(r.test_acc),
            r.total_operations(),
            r.ledger.total().write_pulses,
            fmt6(r.programming_energy.total_uj),
            fmt6(r.test_energy_uj_per_sample)
        ));
    }
    write_text(&out.join("comparison.csv"), &csv)?;
    write_json(&out.join("comparison.json"), &json!({ "runs": runs, "comparisons": comparisons, "gpu_reference_uj": gpu }))
}

fn cmd_export_dist(run: &Path, bins: usize, prune: Option<f64>, out: &Path) -> Result<()> {
    if bins == 0 {
        return Err(Error::Argument("--bins must be at least 1".into()));
    }
    let snap = StateSnapshot::load(&run.join("state.json"))?;
    let net = snap.network()?;
    let current: Vec<f64> = net.banks.iter().flat_map(differential_us).collect();
    let (before, after) = match (&snap.layers, prune) {
        (_, Some(s)) => {
            if !(0.0..1.0).contains(&s) {
                return Err(Error::Argument(format!("--prune must lie in [0,1), got {s}")));
            }
            let mut pruned = net.clone();
            let mut counters = crate::train::ledger::LayerCounters::default();
            for bank in pruned.banks.iter_mut() {
                let scores = scored::init_scores(bank)?;
                let mask = scored::select_subnetwork(&scores, s);
                scored::sync_mask_to_hardware(bank, &vec![true; mask.len()], &mask, &mut counters)?;
            }
            (current, Some(pruned.banks.iter().flat_map(differential_us).collect::<Vec<f64>>()))
        }
        (Some(layers), None) => {
            let formed: Vec<f64> = layers
                .iter()
                .zip(&net.banks)
                .flat_map(|(l, b)| l.weight_memory.iter().map(move |w| w / b.beta))
                .collect();
            (formed, Some(current))
        }
        (None, None) => (current, None),
    };
    mkdir(out)?;
    let span = before.iter().chain(after.iter().flatten()).fold(1.0f64, |a, v| a.max(v.abs())) * (1.0 + 1e-9);
    let hb = Histogram::new(&before, bins, -span, span)?;
    write_text(&out.join("hist_before.csv"), &hb.csv())?;
    let mut summary = json!({ "bins": bins, "range_us": [-span, span], "before": { "peaks_us": hb.peaks(0.1), "modes_us": modes(&before) } });
    if let Some(a) = after {
        let ha = Histogram::new(&a, bins, -span, span)?;
        write_text(&out.join("hist_after.csv"), &ha.csv())?;
        summary["after"] = json!({ "peaks_us": ha.peaks(0.1), "modes_us": modes(&a) });
    }
    write_json(&out.join("dist.json"), &summary)
}
