//! The five pipeline stages: simulate, image, train, score, report.
//!
//! Stages communicate only through files in the run directory plus the
//! manifest, which records a digest for every artifact. Window processing
//! fans out across threads but results are always assembled in (cell,
//! window) order, so reruns from one master seed are bit-identical.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::cnn;
use crate::embedding::delay_embed;
use crate::error::{Error, Result};
use crate::health;
use crate::io;
use crate::pipeline::config::{derive_seed, ImageFormat, RunConfig};
use crate::pipeline::manifest::RunManifest;
use crate::pipeline::report;
use crate::rp::{normalize_image, rp_image_resized, UnitImage};
use crate::sim::{simulate_currents, window_slices, FaultSpec, ThreePhaseSignal};
use crate::sparse;

pub fn signal_rel(label: &str) -> String {
    format!("signals/{label}.csv")
}

pub fn image_rel(label: &str, window: usize, ext: &str) -> String {
    format!("images/{label}/win_{window:04}.{ext}")
}

pub fn scores_rel(label: &str) -> String {
    format!("scores/{label}.csv")
}

pub const MODEL_REL: &str = "model.bin";
pub const TRAIN_TRACE_REL: &str = "train_trace.csv";
pub const BASELINE_REL: &str = "baseline.bin";
pub const DICTIONARY_REL: &str = "dictionary.bin";

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Generate one CSV per fault-grid cell and start the run manifest.
pub fn cmd_simulate(config: &RunConfig, out: &Path) -> Result<()> {
    config.validate()?;
    let started = Instant::now();
    ensure_dir(out)?;
    ensure_dir(&out.join("signals"))?;

    let mut rels = Vec::new();
    for (i, cell) in config.fault.grid.iter().enumerate() {
        let fault = FaultSpec {
            fault_ratio: cell.fr,
            faulted_phase: config.fault.faulted_phase,
            coupling: config.fault.coupling.clone(),
        };
        let seed = derive_seed(config.seed, "simulate", i as u64);
        let sig = simulate_currents(
            &config.motor,
            &fault,
            &config.noise,
            config.simulate.duration_s,
            seed,
        )?;
        let rel = signal_rel(&cell.label);
        io::write_signal_csv(&out.join(&rel), &sig)?;
        rels.push(rel);
    }

    let mut manifest = RunManifest::new(config.clone());
    manifest.derived.electrical_frequency = Some(config.motor.electrical_frequency());
    manifest.record_stage(out, "simulate", &rels, started.elapsed().as_secs_f64())?;
    manifest.save(out)
}

fn load_cell_windows(config: &RunConfig, out: &Path) -> Result<Vec<Vec<Vec<f64>>>> {
    let mut per_cell = Vec::with_capacity(config.fault.grid.len());
    for cell in &config.fault.grid {
        let sig: ThreePhaseSignal =
            io::read_signal_csv(&out.join(signal_rel(&cell.label)), config.motor.sample_rate)?;
        let channel = sig.channel(config.windowing.phase);
        let windows = window_slices(channel, config.windowing.window_len, config.windowing.hop)?;
        per_cell.push(windows.into_iter().map(|w| w.to_vec()).collect());
    }
    Ok(per_cell)
}

/// Median pairwise distance over the healthy trajectories, estimated from a
/// strided subsample of at most `max_points` points per trajectory. For even
/// counts the two central order statistics are averaged.
fn healthy_median_distance(
    config: &RunConfig,
    per_cell: &[Vec<Vec<f64>>],
) -> Result<f64> {
    let params = config.embedding_params();
    let max_points = 256usize;
    let mut distances = Vec::new();
    for (cell, windows) in config.fault.grid.iter().zip(per_cell) {
        if cell.fr != 0.0 {
            continue;
        }
        for window in windows {
            let traj = delay_embed(window, &params)?;
            let stride = traj.len().div_ceil(max_points).max(1);
            let picked: Vec<usize> = (0..traj.len()).step_by(stride).collect();
            for (a, &i) in picked.iter().enumerate() {
                for &j in &picked[a + 1..] {
                    distances.push(traj.distance(i, j));
                }
            }
        }
    }
    if distances.is_empty() {
        return Err(Error::Config {
            field: "rp.clip_threshold",
            reason: "no healthy cell (fr = 0) to derive the threshold from; set it explicitly"
                .into(),
        });
    }
    distances.sort_by(f64::total_cmp);
    let n = distances.len();
    let median = if n % 2 == 1 {
        distances[n / 2]
    } else {
        (distances[n / 2 - 1] + distances[n / 2]) / 2.0
    };
    if median <= 0.0 {
        return Err(Error::Config {
            field: "rp.clip_threshold",
            reason: "healthy median distance is zero; set the threshold explicitly".into(),
        });
    }
    Ok(median)
}

/// Window, embed, image, normalize, and (optionally) emphasize every cell;
/// write one PGM/PNG per window.
pub fn cmd_image(config: &RunConfig, out: &Path) -> Result<()> {
    config.validate()?;
    let started = Instant::now();
    let mut manifest = RunManifest::load(out)?;
    manifest.check_config(config)?;
    manifest.require_stage(out, "simulate")?;

    let per_cell = load_cell_windows(config, out)?;
    let params = config.embedding_params();
    let clip = match config.rp.clip_threshold {
        Some(n) => n,
        None => healthy_median_distance(config, &per_cell)?,
    };
    let target = config.rp.target_side;

    let compute_unit = |window: &[f64]| -> Result<UnitImage> {
        let traj = delay_embed(window, &params)?;
        let img = rp_image_resized(&traj, clip, target)?;
        Ok(normalize_image(&img))
    };

    // Optional sparse emphasis, trained on healthy patches only.
    let dictionary = if config.dictionary.enabled {
        let d = &config.dictionary;
        let mut patches = Vec::new();
        for (cell, windows) in config.fault.grid.iter().zip(&per_cell) {
            if cell.fr != 0.0 {
                continue;
            }
            let imgs: Vec<UnitImage> = windows
                .par_iter()
                .map(|w| compute_unit(w))
                .collect::<Result<_>>()?;
            for img in &imgs {
                patches.extend(sparse::extract_patches(img, d.patch_side, d.stride)?);
            }
        }
        // Deterministic subsample when the patch pool is large.
        if patches.len() > d.max_patches {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut rng =
                rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "dictionary", 0));
            patches.shuffle(&mut rng);
            patches.truncate(d.max_patches);
        }
        let (dict, _log) = sparse::learn_dictionary(
            &patches,
            d.atoms,
            d.lambda,
            d.epochs,
            d.code_iters,
            derive_seed(config.seed, "dictionary", 1),
        )?;
        io::write_dictionary(&out.join(DICTIONARY_REL), &dict)?;
        Some(dict)
    } else {
        None
    };

    let mut rels: Vec<String> = Vec::new();
    if dictionary.is_some() {
        rels.push(DICTIONARY_REL.into());
    }
    let mut windows_per_cell = None;
    for (cell, windows) in config.fault.grid.iter().zip(&per_cell) {
        ensure_dir(&out.join("images").join(&cell.label))?;
        match windows_per_cell {
            None => windows_per_cell = Some(windows.len()),
            Some(n) => debug_assert_eq!(n, windows.len()),
        }
        let produced: Vec<Vec<String>> = windows
            .par_iter()
            .enumerate()
            .map(|(w, window)| -> Result<Vec<String>> {
                let mut unit = compute_unit(window)?;
                if let Some(dict) = &dictionary {
                    let d = &config.dictionary;
                    unit = sparse::emphasize(&unit, dict, d.lambda, d.stride, d.code_iters)?;
                }
                let mut here = Vec::new();
                if matches!(config.export.image_format, ImageFormat::Pgm | ImageFormat::Both) {
                    let rel = image_rel(&cell.label, w, "pgm");
                    io::write_pgm(&out.join(&rel), &unit)?;
                    here.push(rel);
                }
                if matches!(config.export.image_format, ImageFormat::Png | ImageFormat::Both) {
                    let rel = image_rel(&cell.label, w, "png");
                    io::write_png(&out.join(&rel), &unit)?;
                    here.push(rel);
                }
                Ok(here)
            })
            .collect::<Result<_>>()?;
        rels.extend(produced.into_iter().flatten());
    }

    manifest.derived.embedding_delay = Some(params.delay);
    manifest.derived.rp_clip_threshold = Some(clip);
    manifest.derived.windows_per_cell = windows_per_cell;
    manifest.record_stage(out, "image", &rels, started.elapsed().as_secs_f64())?;
    manifest.save(out)
}

/// Count of imaged windows per cell, from the manifest.
fn imaged_windows(manifest: &RunManifest) -> Result<usize> {
    manifest
        .derived
        .windows_per_cell
        .ok_or_else(|| Error::Dependency {
            stage: "image".into(),
            detail: "manifest lacks the imaged window count".into(),
        })
}

fn load_unit_image(out: &Path, label: &str, window: usize) -> Result<Vec<f64>> {
    let img = io::read_pgm(&out.join(image_rel(label, window, "pgm")))?;
    Ok(img.values().to_vec())
}

/// Evenly spaced pick of `take` items from `0..total`.
fn evenly_spaced(total: usize, take: usize) -> Vec<usize> {
    if take >= total {
        return (0..total).collect();
    }
    (0..take).map(|i| i * total / take).collect()
}

/// Train the classifier on a stratified, evenly spaced subset of the imaged
/// windows and save the model plus the per-epoch trace.
pub fn cmd_train(config: &RunConfig, out: &Path) -> Result<()> {
    config.validate()?;
    let started = Instant::now();
    let mut manifest = RunManifest::load(out)?;
    manifest.check_config(config)?;
    manifest.require_stage(out, "image")?;
    let per_cell = imaged_windows(&manifest)?;

    // Class -> all (cell, window) pairs in deterministic order.
    let class_count = config.class_count();
    let mut pools: Vec<Vec<(usize, usize)>> = vec![Vec::new(); class_count];
    for (cell_idx, _) in config.fault.grid.iter().enumerate() {
        let class = config.class_of_cell(cell_idx);
        for w in 0..per_cell {
            pools[class].push((cell_idx, w));
        }
    }

    let mut images = Vec::new();
    let mut labels = Vec::new();
    for (class, pool) in pools.iter().enumerate() {
        for &i in &evenly_spaced(pool.len(), config.training.train_windows_per_class) {
            let (cell_idx, w) = pool[i];
            images.push(load_unit_image(out, &config.fault.grid[cell_idx].label, w)?);
            labels.push(class);
        }
    }
    if images.is_empty() {
        return Err(Error::Input("no training windows available".into()));
    }

    let spec = config.network_spec();
    let net = cnn::init_network(&spec, derive_seed(config.seed, "init", 0))?;
    let opts = cnn::TrainOptions {
        learning_rate: config.training.learning_rate,
        epochs: config.training.epochs,
        batch_size: config.training.batch_size,
        seed: derive_seed(config.seed, "train", 0),
    };
    let (trained, trace) = cnn::train(net, &images, &labels, &opts)?;
    io::write_network(&out.join(MODEL_REL), &trained)?;

    let trace_path = out.join(TRAIN_TRACE_REL);
    let mut text = String::from("epoch,mean_loss,accuracy\n");
    for e in &trace {
        text.push_str(&format!("{},{},{}\n", e.epoch, e.mean_loss, e.accuracy));
    }
    std::fs::write(&trace_path, text).map_err(|e| Error::Io {
        path: trace_path,
        source: e,
    })?;

    manifest.derived.activation_dim = Some(spec.activation_dim()?);
    manifest.record_stage(
        out,
        "train",
        &[MODEL_REL.into(), TRAIN_TRACE_REL.into()],
        started.elapsed().as_secs_f64(),
    )?;
    manifest.save(out)
}

/// Extract activations for every window, fit (or load) the healthy baseline,
/// and write one health-series CSV per cell.
pub fn cmd_score(config: &RunConfig, out: &Path) -> Result<()> {
    config.validate()?;
    let started = Instant::now();
    let mut manifest = RunManifest::load(out)?;
    manifest.check_config(config)?;
    manifest.require_stage(out, "image")?;
    manifest.require_stage(out, "train")?;
    let per_cell = imaged_windows(&manifest)?;

    let net = io::read_network(&out.join(MODEL_REL))?;

    let mut activations: Vec<Vec<Vec<f64>>> = Vec::with_capacity(config.fault.grid.len());
    for cell in &config.fault.grid {
        let acts: Vec<Vec<f64>> = (0..per_cell)
            .into_par_iter()
            .map(|w| -> Result<Vec<f64>> {
                let image = load_unit_image(out, &cell.label, w)?;
                cnn::extract_activation(&net, &image)
            })
            .collect::<Result<_>>()?;
        activations.push(acts);
    }

    let healthy: Vec<Vec<f64>> = config
        .fault
        .grid
        .iter()
        .zip(&activations)
        .filter(|(cell, _)| cell.fr == 0.0)
        .flat_map(|(_, acts)| acts.iter().cloned())
        .collect();

    let baseline_path = out.join(BASELINE_REL);
    let model = if baseline_path.is_file() {
        let model = io::read_baseline(&baseline_path)?;
        if model.dim() != net.spec().activation_dim()? {
            return Err(Error::Shape(format!(
                "baseline dimension {} does not match activation dimension {}",
                model.dim(),
                net.spec().activation_dim()?
            )));
        }
        model
    } else {
        if healthy.len() < 2 {
            return Err(Error::Input(
                "need a healthy cell with at least 2 windows to fit the baseline".into(),
            ));
        }
        let model = match config.health.ridge_epsilon {
            Some(eps) => health::fit_baseline(&healthy, eps)?,
            None => health::fit_baseline_auto(&healthy)?,
        };
        io::write_baseline(&baseline_path, &model)?;
        model
    };

    let healthy_scores = health::score_series(&healthy, &model)?.scores;
    let threshold =
        health::set_threshold(&healthy_scores, config.health.quantile, config.health.margin)?;

    ensure_dir(&out.join("scores"))?;
    let mut rels = vec![BASELINE_REL.to_string()];
    for (cell, acts) in config.fault.grid.iter().zip(&activations) {
        let mut series = health::score_series(acts, &model)?;
        series.threshold = Some(threshold);
        let rel = scores_rel(&cell.label);
        io::write_health_csv(&out.join(&rel), &series)?;
        rels.push(rel);
    }

    manifest.derived.health_ridge_epsilon = Some(model.ridge_epsilon());
    manifest.derived.health_threshold = Some(threshold);
    manifest.record_stage(out, "score", &rels, started.elapsed().as_secs_f64())?;
    manifest.save(out)
}

/// Health-indicator charts (proposed MD and normalized knowledge features),
/// their data CSVs, and the severity-grouped summary table.
pub fn cmd_report(config: &RunConfig, out: &Path) -> Result<()> {
    config.validate()?;
    let started = Instant::now();
    let mut manifest = RunManifest::load(out)?;
    manifest.check_config(config)?;
    manifest.require_stage(out, "simulate")?;
    manifest.require_stage(out, "score")?;

    let rels = report::write_report(config, &manifest, out)?;
    manifest.record_stage(out, "report", &rels, started.elapsed().as_secs_f64())?;
    manifest.save(out)
}

/// Run all five stages in order.
pub fn run_all(config: &RunConfig, out: &Path) -> Result<()> {
    cmd_simulate(config, out)?;
    cmd_image(config, out)?;
    cmd_train(config, out)?;
    cmd_score(config, out)?;
    cmd_report(config, out)
}

/// Artifact digests of the whole run, for determinism checks: relative path
/// -> sha256, pooled over every stage.
pub fn artifact_digests(out: &Path) -> Result<std::collections::BTreeMap<String, String>> {
    let manifest = RunManifest::load(out)?;
    let mut all = std::collections::BTreeMap::new();
    for record in manifest.stages.values() {
        for (rel, digest) in &record.files {
            all.insert(rel.clone(), digest.clone());
        }
    }
    Ok(all)
}

pub fn run_dir_path(out: &Path) -> PathBuf {
    out.to_path_buf()
}
