//! Run configuration: one TOML file drives every stage. Each field has a
//! desk-scale default, and the resolved config is snapshotted into the run
//! manifest so a run is self-describing.

use serde::{Deserialize, Serialize};

use crate::cnn::{ConvSpec, NetworkSpec};
use crate::embedding::EmbeddingParams;
use crate::error::{Error, Result};
use crate::sim::{FaultCoupling, MotorConfig, NoiseSpec, Phase};

/// One severity cell of the fault grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultCell {
    /// Fault ratio in [0, 1).
    pub fr: f64,
    /// Directory-safe label, e.g. "healthy" or "fr_0182".
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FaultGridConfig {
    pub faulted_phase: Phase,
    pub coupling: FaultCoupling,
    pub grid: Vec<FaultCell>,
}

impl Default for FaultGridConfig {
    /// The seeded severities reported for the reference testbed.
    fn default() -> Self {
        FaultGridConfig {
            faulted_phase: Phase::A,
            coupling: FaultCoupling::default(),
            grid: vec![
                FaultCell {
                    fr: 0.0,
                    label: "healthy".into(),
                },
                FaultCell {
                    fr: 0.0182,
                    label: "fault_182".into(),
                },
                FaultCell {
                    fr: 0.0433,
                    label: "fault_433".into(),
                },
                FaultCell {
                    fr: 0.078,
                    label: "fault_780".into(),
                },
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateConfig {
    /// Seconds of signal per severity cell.
    pub duration_s: f64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig { duration_s: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowConfig {
    pub window_len: usize,
    pub hop: usize,
    /// Which phase feeds the imaging pipeline.
    pub phase: Phase,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            window_len: 8192,
            hop: 4096,
            phase: Phase::A,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingConfig {
    pub dim: usize,
    /// Delay in samples; absent means one quarter of the electrical period.
    pub delay: Option<usize>,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig { dim: 2, delay: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RpConfig {
    /// Side of the resized image fed to the network.
    pub target_side: usize,
    /// Saturation threshold; absent means the median pairwise distance of the
    /// healthy training trajectories, fixed at imaging time.
    pub clip_threshold: Option<f64>,
}

impl Default for RpConfig {
    fn default() -> Self {
        RpConfig {
            target_side: 600,
            clip_threshold: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DictionaryConfig {
    /// Sparse emphasis is optional in the imaging stage.
    pub enabled: bool,
    pub patch_side: usize,
    pub stride: usize,
    pub atoms: usize,
    pub lambda: f64,
    pub epochs: usize,
    pub code_iters: usize,
    /// Cap on training patches (deterministically subsampled).
    pub max_patches: usize,
}

impl Default for DictionaryConfig {
    fn default() -> Self {
        DictionaryConfig {
            enabled: false,
            patch_side: 20,
            stride: 20,
            atoms: 32,
            lambda: 0.1,
            epochs: 5,
            code_iters: 30,
            max_patches: 4000,
        }
    }
}

/// How windows map to classifier labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// Healthy (fr = 0) versus faulty (fr > 0).
    Binary,
    /// One class per fault-grid cell.
    PerSeverity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub conv1: ConvSpec,
    pub conv2: ConvSpec,
    pub fc1_width: usize,
    pub label_mode: LabelMode,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        let spec = NetworkSpec::default();
        NetworkConfig {
            conv1: spec.conv1,
            conv2: spec.conv2,
            fc1_width: spec.fc1_width,
            label_mode: LabelMode::Binary,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Windows per class drawn (evenly spaced) into the training subset.
    pub train_windows_per_class: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            learning_rate: 0.05,
            epochs: 6,
            batch_size: 8,
            train_windows_per_class: 18,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HealthConfig {
    /// Ridge epsilon; absent means 1e-6 * trace(cov) / d.
    pub ridge_epsilon: Option<f64>,
    pub quantile: f64,
    pub margin: f64,
}

impl Default for HealthConfig {
    fn default() -> Self {
        HealthConfig {
            ridge_epsilon: None,
            quantile: 1.0,
            margin: 1.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageFormat {
    Pgm,
    Png,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExportConfig {
    pub image_format: ImageFormat,
}

impl Default for ExportConfig {
    fn default() -> Self {
        ExportConfig {
            image_format: ImageFormat::Pgm,
        }
    }
}

/// Complete run configuration. One master seed; every stage derives its own
/// stream from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub motor: MotorConfig,
    pub fault: FaultGridConfig,
    pub noise: NoiseSpec,
    pub simulate: SimulateConfig,
    pub windowing: WindowConfig,
    pub embedding: EmbeddingConfig,
    pub rp: RpConfig,
    pub dictionary: DictionaryConfig,
    pub network: NetworkConfig,
    pub training: TrainingConfig,
    pub health: HealthConfig,
    pub export: ExportConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            motor: MotorConfig::default(),
            fault: FaultGridConfig::default(),
            noise: NoiseSpec {
                snr_db: 30.0,
                spike_rate: 10.0,
                spike_amplitude: 3.0,
            },
            simulate: SimulateConfig::default(),
            windowing: WindowConfig::default(),
            embedding: EmbeddingConfig::default(),
            rp: RpConfig::default(),
            dictionary: DictionaryConfig::default(),
            network: NetworkConfig::default(),
            training: TrainingConfig::default(),
            health: HealthConfig::default(),
            export: ExportConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config {
            field: "config",
            reason: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Effective embedding parameters (quarter-period delay when unset).
    pub fn embedding_params(&self) -> EmbeddingParams {
        let delay = self.embedding.delay.unwrap_or_else(|| {
            crate::embedding::quarter_period_delay(
                self.motor.sample_rate,
                self.motor.electrical_frequency(),
            )
        });
        EmbeddingParams {
            dim: self.embedding.dim,
            delay,
        }
    }

    /// Number of classifier classes under the configured label mode.
    pub fn class_count(&self) -> usize {
        match self.network.label_mode {
            LabelMode::Binary => 2,
            LabelMode::PerSeverity => self.fault.grid.len().max(2),
        }
    }

    /// Class index of a fault-grid cell.
    pub fn class_of_cell(&self, cell_index: usize) -> usize {
        match self.network.label_mode {
            LabelMode::Binary => usize::from(self.fault.grid[cell_index].fr > 0.0),
            LabelMode::PerSeverity => cell_index,
        }
    }

    pub fn network_spec(&self) -> NetworkSpec {
        NetworkSpec {
            input_side: self.rp.target_side,
            conv1: self.network.conv1,
            conv2: self.network.conv2,
            fc1_width: self.network.fc1_width,
            class_count: self.class_count(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.motor.validate()?;
        self.noise.validate()?;
        if self.fault.grid.is_empty() {
            return Err(Error::Config {
                field: "fault.grid",
                reason: "need at least one severity cell".into(),
            });
        }
        let mut seen = std::collections::BTreeSet::new();
        for cell in &self.fault.grid {
            if !(cell.fr.is_finite() && (0.0..1.0).contains(&cell.fr)) {
                return Err(Error::Config {
                    field: "fault.grid.fr",
                    reason: format!("fault ratio {} outside [0, 1)", cell.fr),
                });
            }
            if cell.label.is_empty()
                || !cell
                    .label
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
            {
                return Err(Error::Config {
                    field: "fault.grid.label",
                    reason: format!("label {:?} must be non-empty [A-Za-z0-9_-]", cell.label),
                });
            }
            if !seen.insert(cell.label.clone()) {
                return Err(Error::Config {
                    field: "fault.grid.label",
                    reason: format!("duplicate label {:?}", cell.label),
                });
            }
        }
        if !(self.simulate.duration_s.is_finite() && self.simulate.duration_s > 0.0) {
            return Err(Error::Config {
                field: "simulate.duration_s",
                reason: "must be finite and > 0".into(),
            });
        }
        let samples = (self.simulate.duration_s * self.motor.sample_rate) as usize;
        if self.windowing.window_len == 0 || self.windowing.hop == 0 {
            return Err(Error::Config {
                field: "windowing",
                reason: "window_len and hop must be >= 1".into(),
            });
        }
        if self.windowing.window_len > samples {
            return Err(Error::Config {
                field: "windowing.window_len",
                reason: format!(
                    "window of {} samples exceeds the {} samples produced per cell",
                    self.windowing.window_len, samples
                ),
            });
        }
        let params = self.embedding_params();
        params.validate()?;
        let traj_len = params
            .point_count(self.windowing.window_len)
            .unwrap_or(0);
        if traj_len < 2 {
            return Err(Error::Config {
                field: "embedding",
                reason: "window too short for the embedding".into(),
            });
        }
        if self.rp.target_side < 2 || self.rp.target_side > traj_len {
            return Err(Error::Config {
                field: "rp.target_side",
                reason: format!(
                    "target side {} must lie in 2..={traj_len} (trajectory length)",
                    self.rp.target_side
                ),
            });
        }
        if let Some(n) = self.rp.clip_threshold {
            if !(n.is_finite() && n > 0.0) {
                return Err(Error::Config {
                    field: "rp.clip_threshold",
                    reason: format!("must be finite and > 0, got {n}"),
                });
            }
        }
        if self.dictionary.enabled {
            if self.dictionary.patch_side == 0
                || self.dictionary.patch_side > self.rp.target_side
            {
                return Err(Error::Config {
                    field: "dictionary.patch_side",
                    reason: "must be in 1..=rp.target_side".into(),
                });
            }
            if self.dictionary.stride == 0 || self.dictionary.atoms == 0 {
                return Err(Error::Config {
                    field: "dictionary",
                    reason: "stride and atoms must be >= 1".into(),
                });
            }
            if !(self.dictionary.lambda.is_finite() && self.dictionary.lambda > 0.0) {
                return Err(Error::Config {
                    field: "dictionary.lambda",
                    reason: "must be finite and > 0".into(),
                });
            }
        }
        self.network_spec().dims()?;
        if !(self.training.learning_rate.is_finite() && self.training.learning_rate >= 0.0) {
            return Err(Error::Config {
                field: "training.learning_rate",
                reason: "must be finite and >= 0".into(),
            });
        }
        if self.training.batch_size == 0 || self.training.train_windows_per_class == 0 {
            return Err(Error::Config {
                field: "training",
                reason: "batch_size and train_windows_per_class must be >= 1".into(),
            });
        }
        if let Some(eps) = self.health.ridge_epsilon {
            if !(eps.is_finite() && eps >= 0.0) {
                return Err(Error::Config {
                    field: "health.ridge_epsilon",
                    reason: "must be finite and >= 0".into(),
                });
            }
        }
        if !(self.health.quantile > 0.0 && self.health.quantile <= 1.0) {
            return Err(Error::Config {
                field: "health.quantile",
                reason: "must lie in (0, 1]".into(),
            });
        }
        if !(self.health.margin.is_finite() && self.health.margin >= 1.0) {
            return Err(Error::Config {
                field: "health.margin",
                reason: "must be >= 1".into(),
            });
        }
        Ok(())
    }
}

/// Stage-specific seed derived from the master seed by FNV-1a mixing of the
/// stage name and index; stable across runs and platforms.
pub fn derive_seed(master: u64, stage: &str, index: u64) -> u64 {
    let mut h = 0xcbf29ce484222325u64 ^ master.rotate_left(17);
    for b in stage
        .as_bytes()
        .iter()
        .copied()
        .chain(index.to_le_bytes())
        .chain(master.to_le_bytes())
    {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    // splitmix64 finalizer
    let mut z = h.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml_string();
        let back = RunConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn partial_toml_uses_defaults() {
        let cfg = RunConfig::from_toml_str("seed = 7\n[simulate]\nduration_s = 0.5\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.simulate.duration_s, 0.5);
        assert_eq!(cfg.windowing.window_len, 8192);
    }

    #[test]
    fn default_grid_matches_reported_severities() {
        let cfg = RunConfig::default();
        let frs: Vec<f64> = cfg.fault.grid.iter().map(|c| c.fr).collect();
        assert_eq!(frs, vec![0.0, 0.0182, 0.0433, 0.078]);
    }

    #[test]
    fn invalid_fields_are_named() {
        let mut cfg = RunConfig::default();
        cfg.fault.grid[1].fr = 1.5;
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("fault.grid.fr"), "{err}");

        let mut cfg = RunConfig::default();
        cfg.fault.grid[1].label = "has space".into();
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.rp.target_side = 100_000;
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("rp.target_side"), "{err}");
    }

    #[test]
    fn derived_seeds_differ_by_stage_and_index() {
        let a = derive_seed(42, "simulate", 0);
        let b = derive_seed(42, "simulate", 1);
        let c = derive_seed(42, "train", 0);
        let d = derive_seed(43, "simulate", 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
        assert_eq!(a, derive_seed(42, "simulate", 0));
    }

    #[test]
    fn embedding_default_is_quarter_period() {
        let cfg = RunConfig::default();
        // 100 kHz / (4 * 200 Hz) = 125 samples.
        assert_eq!(cfg.embedding_params().delay, 125);
        assert_eq!(cfg.embedding_params().dim, 2);
    }
}
