//! Run configuration. A [`RunConfig`] fully determines a run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset};
use crate::device::DeviceSpec;
use crate::energy::EnergySpec;
use crate::error::{Error, Result};
use crate::hw::{HardwareNet, MappingSpec};
use crate::nn::{build_cnn, build_crnn, InputScaling, NetworkSpec};
use crate::train::Splits;
use crate::vmm::QuantizationSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetKind {
    Cnn,
    Crnn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub kind: NetKind,
    pub scale: f64,
    /// Replaces the built-in backbone when present.
    #[serde(default)]
    pub custom: Option<NetworkSpec>,
}

impl NetworkConfig {
    pub fn build(&self) -> Result<NetworkSpec> {
        let spec = match &self.custom {
            Some(s) => s.clone(),
            None => match self.kind {
                NetKind::Cnn => build_cnn(self.scale)?,
                NetKind::Crnn => build_crnn(self.scale)?,
            },
        };
        spec.shapes()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// IDX image/label pair, block-pooled to `target_hw` and quantized to `bits`.
    Idx { images: PathBuf, labels: PathBuf, target_hw: usize, bits: u32 },
    FeatureCsv { path: PathBuf },
    Blobs {
        classes: usize,
        per_class: usize,
        shape: Vec<usize>,
        separation: f64,
        noise: f64,
        #[serde(default)]
        smoothing: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    pub train_n: usize,
    pub val_n: usize,
    pub test_n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantConfig {
    /// Defaults to 4 for the CNN and 3 for the CRNN.
    pub bits_m: Option<u32>,
    pub adc_bits: Option<u32>,
    /// Range of the first weighted layer. Defaults to `[0, 1)` for the CNN and
    /// per-sample dynamic for the CRNN.
    pub first_layer: Option<InputScaling>,
}

impl Default for QuantConfig {
    fn default() -> Self {
        QuantConfig { bits_m: None, adc_bits: None, first_layer: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reselect {
    PerStep,
    PerEpoch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdConfig {
    /// Absolute initial threshold; when absent, `t_init_factor·std(initial scores)` per layer.
    pub t_init: Option<f64>,
    pub t_init_factor: f64,
    /// `t_end = t_init · t_end_ratio`.
    pub t_end_ratio: f64,
    pub alpha: f64,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        ThresholdConfig { t_init: None, t_init_factor: 0.1, t_end_ratio: 0.1, alpha: 20.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologyConfig {
    pub eta: f64,
    pub sparsity: f64,
    pub reselect: Reselect,
    pub threshold: ThresholdConfig,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        TopologyConfig { eta: 0.05, sparsity: 0.5, reselect: Reselect::PerStep, threshold: ThresholdConfig::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WoMode {
    Free,
    BudgetMatched,
}

impl WoMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            WoMode::Free => "free",
            WoMode::BudgetMatched => "budget-matched",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightOptConfig {
    pub eta: f64,
    pub mode: WoMode,
    /// Explicit update threshold; overrides the mode's own choice.
    pub t_w: Option<f64>,
    /// Programming operations to match in budget-matched mode.
    pub budget_ops: Option<u64>,
    /// Conductance an inactive cell of a pair is programmed down to, µS.
    pub idle_conductance_us: f64,
}

impl Default for WeightOptConfig {
    fn default() -> Self {
        WeightOptConfig { eta: 0.01, mode: WoMode::Free, t_w: None, budget_ops: None, idle_conductance_us: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub network: NetworkConfig,
    pub data: DataConfig,
    pub device: DeviceSpec,
    pub energy: EnergySpec,
    pub quantization: QuantConfig,
    /// Initial pre-activation scale of every layer (see [`crate::hw::layer_beta`]).
    pub gain: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub topology: TopologyConfig,
    pub weights: WeightOptConfig,
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            network: NetworkConfig { kind: NetKind::Cnn, scale: 0.125, custom: None },
            data: DataConfig {
                source: DataSource::Idx {
                    images: "data/fashion-subset/images-idx3-ubyte.gz".into(),
                    labels: "data/fashion-subset/labels-idx1-ubyte.gz".into(),
                    target_hw: 14,
                    bits: 4,
                },
                train_n: 2000,
                val_n: 500,
                test_n: 1000,
            },
            device: DeviceSpec::default(),
            energy: EnergySpec::default(),
            quantization: QuantConfig::default(),
            gain: 1.5,
            epochs: 15,
            batch_size: 32,
            topology: TopologyConfig::default(),
            weights: WeightOptConfig::default(),
            workers: 1,
        }
    }
}

fn finite_nonneg(name: &str, v: f64) -> Result<()> {
    if !(v >= 0.0) || !v.is_finite() {
        return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
    }
    Ok(())
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.device.validate()?;
        self.energy.validate()?;
        self.network.build()?;
        self.quant_spec()?;
        finite_nonneg("topology.eta", self.topology.eta)?;
        finite_nonneg("weights.eta", self.weights.eta)?;
        finite_nonneg("weights.idle_conductance_us", self.weights.idle_conductance_us)?;
        if !(0.0..1.0).contains(&self.topology.sparsity) {
            return Err(Error::Config(format!("sparsity must lie in [0,1), got {}", self.topology.sparsity)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.gain > 0.0) || !self.gain.is_finite() {
            return Err(Error::Config(format!("gain must be positive, got {}", self.gain)));
        }
        let th = &self.topology.threshold;
        if !(th.alpha > 0.0) {
            return Err(Error::Config(format!("threshold alpha must be positive, got {}", th.alpha)));
        }
        finite_nonneg("t_init_factor", th.t_init_factor)?;
        if !(0.0..=1.0).contains(&th.t_end_ratio) {
            return Err(Error::Config("t_end_ratio must lie in [0,1]".into()));
        }
        if let Some(t) = th.t_init {
            finite_nonneg("t_init", t)?;
        }
        if let Some(t) = self.weights.t_w {
            if !(t >= 0.0) {
                return Err(Error::Config(format!("t_w must be >= 0, got {t}")));
            }
        }
        Ok(())
    }

    pub fn quant_spec(&self) -> Result<QuantizationSpec> {
        let default_bits = match self.network.kind {
            NetKind::Cnn => 4,
            NetKind::Crnn => 3,
        };
        let q = QuantizationSpec {
            bits_m: self.quantization.bits_m.unwrap_or(default_bits),
            input_range: (0.0, 1.0),
            v_read: self.energy.v_read.max(f64::MIN_POSITIVE),
            adc_bits: self.quantization.adc_bits,
        };
        q.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(q)
    }

    pub fn first_scaling(&self) -> InputScaling {
        self.quantization.first_layer.unwrap_or(match self.network.kind {
            NetKind::Cnn => InputScaling::Fixed { lo: 0.0, hi: 1.0 },
            NetKind::Crnn => InputScaling::Dynamic,
        })
    }

    /// Form the network's banks. `keep` is the expected live fraction of
    /// each layer's inputs.
    pub fn form_network(&self, keep: f64) -> Result<HardwareNet> {
        let spec = self.network.build()?;
        let mapping = MappingSpec { gain: self.gain, keep };
        HardwareNet::form(&spec, &self.device, self.seed, &mapping, &self.quant_spec()?, self.first_scaling())
    }

    /// Load and split the configured dataset. Relative paths resolve against `base`.
    pub fn load_splits(&self, base: &Path) -> Result<Splits> {
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        let ds: Dataset = match &self.data.source {
            DataSource::Idx { images, labels, target_hw, bits } => {
                let raw = data::load_idx(&resolve(images), &resolve(labels))?;
                let hw = raw.sample_shape().map(|s| s[1]).unwrap_or(*target_hw);
                if hw == *target_hw {
                    raw
                } else {
                    data::preprocess_fashion(&raw, *target_hw, *bits)?
                }
            }
            DataSource::FeatureCsv { path } => data::load_feature_csv(&resolve(path))?,
            DataSource::Blobs { classes, per_class, shape, separation, noise, smoothing } => {
                data::synth_blobs(*classes, *per_class, shape, *separation, *noise, *smoothing, self.seed)?
            }
        };
        let d = &self.data;
        let (train, val, test) = data::split(&ds, d.train_n, d.val_n, d.test_n, self.seed)?;
        Ok(Splits { train, val, test })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_roundtrips_and_validates() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let back = RunConfig::from_json(&serde_json::to_string_pretty(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(RunConfig::from_json("{}").unwrap(), c);
    }

    #[test]
    fn bad_values_are_config_errors() {
        assert!(matches!(RunConfig::from_json(r#"{"topology":{"sparsity":1.5}}"#), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_json(r#"{"bogus":1}"#), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_json(r#"{"device":{"form_probability":2}}"#), Err(Error::Config(_))));
    }
}
