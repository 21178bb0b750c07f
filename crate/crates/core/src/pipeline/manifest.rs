//! Run manifest: resolved config snapshot, derived values, and per-stage
//! content digests. Two runs from the same seed must reproduce the same
//! digest for every artifact file; stage durations are informational and
//! excluded from that comparison.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::pipeline::config::RunConfig;

pub const MANIFEST_NAME: &str = "manifest.json";

/// Values fixed while running, recorded for reproducibility.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DerivedValues {
    pub electrical_frequency: Option<f64>,
    pub embedding_delay: Option<usize>,
    /// The saturation threshold chosen for the clipped recurrence plots.
    pub rp_clip_threshold: Option<f64>,
    pub activation_dim: Option<usize>,
    pub windows_per_cell: Option<usize>,
    pub health_ridge_epsilon: Option<f64>,
    pub health_threshold: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Relative path -> sha256 hex digest of every file the stage produced.
    pub files: BTreeMap<String, String>,
    /// Wall-clock seconds; informational only.
    pub duration_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: RunConfig,
    pub format_versions: BTreeMap<String, u32>,
    pub derived: DerivedValues,
    pub stages: BTreeMap<String, StageRecord>,
}

impl RunManifest {
    pub fn new(config: RunConfig) -> RunManifest {
        let mut format_versions = BTreeMap::new();
        format_versions.insert("model".into(), crate::io::MODEL_VERSION);
        format_versions.insert("manifest".into(), 1);
        RunManifest {
            config,
            format_versions,
            derived: DerivedValues::default(),
            stages: BTreeMap::new(),
        }
    }

    pub fn path_in(dir: &Path) -> PathBuf {
        dir.join(MANIFEST_NAME)
    }

    pub fn load(dir: &Path) -> Result<RunManifest> {
        let path = Self::path_in(dir);
        let mut text = String::new();
        File::open(&path)
            .map_err(|_| Error::Dependency {
                stage: "simulate".into(),
                detail: format!("no manifest at {}; run `simulate` first", path.display()),
            })?
            .read_to_string(&mut text)
            .map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            path,
            reason: e.to_string(),
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = Self::path_in(dir);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        let mut f = File::create(&path).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        f.write_all(text.as_bytes()).map_err(|e| Error::Io {
            path,
            source: e,
        })
    }

    /// Fail when a later stage runs under a different config than the one
    /// snapshotted at simulate time.
    pub fn check_config(&self, config: &RunConfig) -> Result<()> {
        if &self.config != config {
            return Err(Error::Config {
                field: "config",
                reason: "configuration differs from the manifest snapshot in this run directory"
                    .into(),
            });
        }
        Ok(())
    }

    /// The stage must have run and each of its files must still match its
    /// recorded digest.
    pub fn require_stage(&self, dir: &Path, stage: &str) -> Result<&StageRecord> {
        let record = self.stages.get(stage).ok_or_else(|| Error::Dependency {
            stage: stage.into(),
            detail: "stage has not been run".into(),
        })?;
        for (rel, digest) in &record.files {
            let path = dir.join(rel);
            if !path.is_file() {
                return Err(Error::Dependency {
                    stage: stage.into(),
                    detail: format!("missing file {rel}"),
                });
            }
            let actual = digest_file(&path)?;
            if &actual != digest {
                return Err(Error::Dependency {
                    stage: stage.into(),
                    detail: format!("digest mismatch for {rel}"),
                });
            }
        }
        Ok(record)
    }

    /// Record a stage's outputs (paths relative to the run dir).
    pub fn record_stage(
        &mut self,
        dir: &Path,
        stage: &str,
        rel_paths: &[String],
        duration_s: f64,
    ) -> Result<()> {
        let mut files = BTreeMap::new();
        for rel in rel_paths {
            files.insert(rel.clone(), digest_file(&dir.join(rel))?);
        }
        self.stages.insert(
            stage.into(),
            StageRecord {
                files,
                duration_s,
            },
        );
        Ok(())
    }
}

pub fn digest_file(path: &Path) -> Result<String> {
    let mut f = File::open(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 65536];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    let mut hex = String::with_capacity(64);
    for b in hasher.finalize() {
        hex.push_str(&format!("{b:02x}"));
    }
    Ok(hex)
}
