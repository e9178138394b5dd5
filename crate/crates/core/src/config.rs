//! Run configuration: one TOML (or JSON) document with a section per stage.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::validate_bins;
use crate::error::{Error, Result};
use crate::models::{ArchRegistry, ModelConfig};
use crate::plume_sim::{PlumeScenario, RegionConfig, MAX_RATE_MT, MIN_WIND_SPEED};
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub count: usize,
    pub q_range: (f64, f64),
    pub wind_speed_range: (f64, f64),
    pub grid_size: usize,
    pub cell_size_km: f64,
    /// Maximum random offset of the source from the patch centre, in cells.
    pub source_jitter_cells: usize,
    /// Template for every scene; rate, wind and seed are drawn per scene.
    pub scenario: PlumeScenario,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            count: 600,
            q_range: (1.0, 40.0),
            wind_speed_range: (2.0, 8.0),
            grid_size: 64,
            cell_size_km: 1.0,
            source_jitter_cells: 4,
            scenario: PlumeScenario::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    /// Whether `run-all` includes the ingest stage.
    pub enabled: bool,
    /// Regenerate a synthetic raw region under `raw/` before ingesting.
    pub synthesize_raw: bool,
    pub region: RegionConfig,
    pub knn_k: usize,
    pub patch_size: usize,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            synthesize_raw: true,
            region: RegionConfig::default(),
            knn_k: 16,
            patch_size: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub bin_edges: Vec<f64>,
    pub ratios: [f64; 3],
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            bin_edges: vec![0.0, 5.0, 10.0, 15.0, 20.0, 30.0, 60.0],
            ratios: [0.70, 0.15, 0.15],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub archs: Vec<String>,
    pub base_channels: usize,
    pub depth: usize,
    pub leaky_slope: f64,
    /// Dropout per architecture name.
    pub dropout: BTreeMap<String, f64>,
    pub losses: Vec<String>,
    pub huber_delta_mt: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub early_stop_patience: usize,
    pub augment: bool,
    pub calibration_samples: usize,
    pub threads: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        let m = ModelConfig::unet();
        Self {
            archs: vec!["cnn".into(), "unet".into()],
            base_channels: m.base_channels,
            depth: m.depth,
            leaky_slope: m.leaky_slope,
            dropout: BTreeMap::from([("cnn".into(), 0.3), ("unet".into(), 0.2)]),
            losses: t.losses,
            huber_delta_mt: t.huber_delta_mt,
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            early_stop_patience: t.early_stop_patience,
            augment: t.augment,
            calibration_samples: t.calibration_samples,
            threads: t.threads,
        }
    }
}

impl TrainSection {
    pub fn model_config(&self, arch: &str) -> ModelConfig {
        let key = arch.to_ascii_lowercase().replace(['-', '_'], "");
        let base = if key == "cnn" { ModelConfig::cnn() } else { ModelConfig::unet() };
        ModelConfig {
            arch: key.clone(),
            base_channels: self.base_channels,
            depth: self.depth,
            leaky_slope: self.leaky_slope,
            dropout: self.dropout.get(&key).copied().unwrap_or(base.dropout),
            head: None,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            losses: self.losses.clone(),
            huber_delta_mt: self.huber_delta_mt,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            early_stop_patience: self.early_stop_patience,
            seed,
            augment: self.augment,
            calibration_samples: self.calibration_samples,
            threads: self.threads,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalSubset {
    Simulated,
    Satellite,
    Combined,
}

impl EvalSubset {
    pub fn label(self) -> &'static str {
        match self {
            EvalSubset::Simulated => "Simulated",
            EvalSubset::Satellite => "Satellite",
            EvalSubset::Combined => "Combined",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub datasets: Vec<EvalSubset>,
    /// Architectures to evaluate; empty means every trained one in `train.archs`.
    pub archs: Vec<String>,
    /// Architecture whose ensemble is drawn in `scatter.png`.
    pub scatter_arch: String,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            datasets: vec![EvalSubset::Simulated, EvalSubset::Satellite, EvalSubset::Combined],
            archs: Vec::new(),
            scatter_arch: "unet".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data_root: Option<PathBuf>,
    pub simulate: SimulateConfig,
    pub ingest: IngestConfig,
    pub dataset: DatasetConfig,
    pub train: TrainSection,
    pub evaluate: EvaluateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            data_root: None,
            simulate: SimulateConfig::default(),
            ingest: IngestConfig::default(),
            dataset: DatasetConfig::default(),
            train: TrainSection::default(),
            evaluate: EvaluateConfig::default(),
        }
    }
}

fn cfg_err(m: impl Into<String>) -> Error {
    Error::ConfigError(m.into())
}

impl RunConfig {
    pub fn from_str_any(text: &str, json_first: bool) -> Result<Self> {
        let toml_parse = || toml::from_str::<RunConfig>(text).map_err(|e| cfg_err(format!("invalid TOML: {e}")));
        let json_parse = || serde_json::from_str::<RunConfig>(text).map_err(|e| cfg_err(format!("invalid JSON: {e}")));
        if json_first {
            json_parse().or_else(|_| toml_parse())
        } else {
            toml_parse().or_else(|t| json_parse().map_err(|_| t))
        }
    }

    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| cfg_err(format!("cannot read config {}: {e}", path.display())))?;
        let json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        Self::from_str_any(&text, json)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn data_root(&self) -> Result<&Path> {
        self.data_root
            .as_deref()
            .ok_or_else(|| cfg_err("no data root: pass --data-root, set PLUME2RATE_DATA_ROOT, or set data_root"))
    }

    pub fn validate(&self) -> Result<()> {
        self.data_root()?;
        let s = &self.simulate;
        let (qlo, qhi) = s.q_range;
        if !(qlo > 0.0 && qlo <= qhi && qhi <= MAX_RATE_MT) {
            return Err(cfg_err(format!("simulate.q_range ({qlo}, {qhi}) must satisfy 0 < lo <= hi <= {MAX_RATE_MT}")));
        }
        let (wlo, whi) = s.wind_speed_range;
        if !(wlo >= MIN_WIND_SPEED && wlo <= whi && whi.is_finite()) {
            return Err(cfg_err(format!(
                "simulate.wind_speed_range ({wlo}, {whi}) must satisfy {MIN_WIND_SPEED} <= lo <= hi"
            )));
        }
        if s.grid_size < 2 || !(s.cell_size_km > 0.0) {
            return Err(cfg_err("simulate grid must have at least 2 cells of positive size"));
        }
        if 2 * s.source_jitter_cells + 2 > s.grid_size {
            return Err(cfg_err("simulate.source_jitter_cells too large for the grid"));
        }
        s.scenario.validate().map_err(|e| cfg_err(format!("simulate.scenario: {e}")))?;
        if self.ingest.knn_k == 0 || self.ingest.patch_size == 0 {
            return Err(cfg_err("ingest.knn_k and ingest.patch_size must be positive"));
        }
        self.ingest.region.scenario.validate().map_err(|e| cfg_err(format!("ingest.region.scenario: {e}")))?;
        validate_bins(&self.dataset.bin_edges, &self.dataset.ratios)
            .map_err(|e| cfg_err(format!("dataset: {e}")))?;
        let t = &self.train;
        if t.archs.is_empty() {
            return Err(cfg_err("train.archs is empty"));
        }
        let registry = ArchRegistry::<f32>::builtin();
        for a in t.archs.iter().chain(&self.evaluate.archs) {
            registry.get(a)?;
            t.model_config(a).validate()?;
        }
        t.train_config(self.seed).validate()?;
        if self.evaluate.datasets.is_empty() {
            return Err(cfg_err("evaluate.datasets is empty"));
        }
        Ok(())
    }

    pub fn eval_archs(&self) -> Vec<String> {
        let src = if self.evaluate.archs.is_empty() { &self.train.archs } else { &self.evaluate.archs };
        src.iter().map(|a| a.to_ascii_lowercase().replace(['-', '_'], "")).collect()
    }
}
