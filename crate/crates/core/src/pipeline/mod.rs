//! End-to-end orchestration: dataset synthesis, imaging, dictionary and
//! network training, baseline fitting, scoring, and report emission, driven
//! by one TOML config and recorded in a digest-bearing run manifest.

pub mod config;
pub mod manifest;
pub mod report;
pub mod stages;

pub use config::{derive_seed, RunConfig};
pub use manifest::{digest_file, RunManifest};
pub use stages::{
    artifact_digests, cmd_image, cmd_report, cmd_score, cmd_simulate, cmd_train, run_all,
};
