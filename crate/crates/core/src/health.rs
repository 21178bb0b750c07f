//! Healthy-activation baseline and the squared-Mahalanobis-distance health
//! indicator.
//!
//! The baseline is the sample mean and ML-normalized covariance of healthy
//! activation vectors, with a ridge `epsilon * I` added before a Cholesky
//! factorization. Scoring applies the inverse through triangular solves, so
//! no matrix is ever explicitly inverted.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Mean, covariance, and the Cholesky factor of `(cov + eps*I)` fitted on
/// healthy activation vectors. Immutable after fit.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineModel {
    mean: Vec<f64>,
    /// Row-major `d x d` ML covariance, without the ridge.
    covariance: Vec<f64>,
    ridge_epsilon: f64,
    /// Row-major lower-triangular factor `L` with `L L^T = cov + eps*I`.
    factor: Vec<f64>,
    fit_count: usize,
}

impl BaselineModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn covariance(&self) -> &[f64] {
        &self.covariance
    }

    pub fn ridge_epsilon(&self) -> f64 {
        self.ridge_epsilon
    }

    pub fn precision_factor(&self) -> &[f64] {
        &self.factor
    }

    pub fn fit_count(&self) -> usize {
        self.fit_count
    }

    /// Rebuild from persisted mean/covariance, refactorizing.
    pub fn from_parts(
        mean: Vec<f64>,
        covariance: Vec<f64>,
        ridge_epsilon: f64,
        fit_count: usize,
    ) -> Result<BaselineModel> {
        let d = mean.len();
        if covariance.len() != d * d {
            return Err(Error::Shape(format!(
                "covariance has {} entries, expected {}",
                covariance.len(),
                d * d
            )));
        }
        if !(ridge_epsilon.is_finite() && ridge_epsilon >= 0.0) {
            return Err(Error::Parameter {
                name: "ridge_epsilon",
                reason: format!("must be finite and >= 0, got {ridge_epsilon}"),
            });
        }
        for i in 0..d {
            for j in (i + 1)..d {
                if (covariance[i * d + j] - covariance[j * d + i]).abs() > 1e-12 {
                    return Err(Error::Input(format!(
                        "covariance is not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        let factor = cholesky_with_ridge(&covariance, d, ridge_epsilon)?;
        Ok(BaselineModel {
            mean,
            covariance,
            ridge_epsilon,
            factor,
            fit_count,
        })
    }
}

/// Lower-triangular Cholesky of `cov + eps*I`; fails on loss of positive
/// definiteness.
fn cholesky_with_ridge(cov: &[f64], d: usize, eps: f64) -> Result<Vec<f64>> {
    let mut a = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            a[i * d + j] = cov[i * d + j];
        }
        a[i * d + i] += eps;
    }
    let scale = (0..d).map(|i| a[i * d + i].abs()).fold(0.0f64, f64::max);
    let floor = scale.max(1e-300) * 1e-13;
    for i in 0..d {
        for j in 0..=i {
            let mut sum = a[i * d + j];
            for k in 0..j {
                sum -= a[i * d + k] * a[j * d + k];
            }
            if i == j {
                if sum <= floor {
                    return Err(Error::Singular(format!(
                        "pivot {sum:.3e} at column {i} (ridge_epsilon = {eps:.3e})"
                    )));
                }
                a[i * d + i] = sum.sqrt();
            } else {
                a[i * d + j] = sum / a[j * d + j];
            }
        }
        for j in (i + 1)..d {
            a[i * d + j] = 0.0;
        }
    }
    Ok(a)
}

/// Default relative ridge: `1e-6 * trace(cov) / d`. Keeps scoring defined
/// when the healthy set is smaller than the activation dimension.
pub fn relative_ridge(covariance: &[f64], d: usize) -> f64 {
    let trace: f64 = (0..d).map(|i| covariance[i * d + i]).sum();
    1e-6 * trace / d as f64
}

fn mean_and_covariance(samples: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::Input(format!(
            "need at least 2 healthy samples to fit a baseline, got {n}"
        )));
    }
    let d = samples[0].len();
    if d == 0 {
        return Err(Error::Input("samples must have positive dimension".into()));
    }
    for (i, s) in samples.iter().enumerate() {
        if s.len() != d {
            return Err(Error::Shape(format!(
                "sample {i} has dimension {}, expected {d}",
                s.len()
            )));
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input(format!("sample {i} has non-finite values")));
        }
    }

    let mut mean = vec![0.0; d];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }

    // ML normalization (1/n): the mean squared Mahalanobis distance over the
    // fit set is then exactly d when the covariance is invertible.
    let mut cov = vec![0.0; d * d];
    let mut centered = vec![0.0; d];
    for s in samples {
        for ((c, v), m) in centered.iter_mut().zip(s).zip(&mean) {
            *c = v - m;
        }
        for i in 0..d {
            let ci = centered[i];
            if ci != 0.0 {
                let row = &mut cov[i * d..(i + 1) * d];
                for (r, cj) in row.iter_mut().zip(&centered) {
                    *r += ci * cj;
                }
            }
        }
    }
    for c in cov.iter_mut() {
        *c /= n as f64;
    }
    Ok((mean, cov))
}

/// Fit with an explicit ridge epsilon (zero allowed when the sample
/// covariance is invertible).
pub fn fit_baseline(samples: &[Vec<f64>], ridge_epsilon: f64) -> Result<BaselineModel> {
    let (mean, covariance) = mean_and_covariance(samples)?;
    BaselineModel::from_parts(mean, covariance, ridge_epsilon, samples.len())
}

/// Fit with the default relative ridge.
pub fn fit_baseline_auto(samples: &[Vec<f64>]) -> Result<BaselineModel> {
    let (mean, covariance) = mean_and_covariance(samples)?;
    let eps = relative_ridge(&covariance, mean.len());
    BaselineModel::from_parts(mean, covariance, eps, samples.len())
}

/// Squared Mahalanobis distance of one activation vector from the baseline:
/// `(a - mu)^T (cov + eps*I)^{-1} (a - mu)`, via a triangular solve.
pub fn mahalanobis(a: &[f64], model: &BaselineModel) -> Result<f64> {
    let d = model.dim();
    if a.len() != d {
        return Err(Error::Shape(format!(
            "vector dimension {} does not match baseline dimension {d}",
            a.len()
        )));
    }
    // Forward substitution: L y = (a - mean); MD = ||y||^2.
    let mut y = vec![0.0; d];
    for i in 0..d {
        let mut sum = a[i] - model.mean[i];
        let row = &model.factor[i * d..i * d + i];
        for (l, yk) in row.iter().zip(&y) {
            sum -= l * yk;
        }
        y[i] = sum / model.factor[i * d + i];
    }
    Ok(y.iter().map(|v| v * v).sum())
}

/// Ordered per-window health indicator trace.
#[derive(Debug, Clone, PartialEq)]
pub struct HealthSeries {
    pub scores: Vec<f64>,
    pub threshold: Option<f64>,
}

/// Score a list of activation vectors in order; an empty list is allowed.
pub fn score_series(activations: &[Vec<f64>], model: &BaselineModel) -> Result<HealthSeries> {
    let scores: Result<Vec<f64>> = activations
        .par_iter()
        .map(|a| mahalanobis(a, model))
        .collect();
    Ok(HealthSeries {
        scores: scores?,
        threshold: None,
    })
}

/// Alarm level: `margin` times the nearest-rank empirical quantile of the
/// healthy scores (sorted ascending, index `ceil(q*n) - 1`).
pub fn set_threshold(healthy_scores: &[f64], quantile: f64, margin: f64) -> Result<f64> {
    if healthy_scores.is_empty() {
        return Err(Error::Input("cannot set a threshold from zero scores".into()));
    }
    if !(quantile > 0.0 && quantile <= 1.0) {
        return Err(Error::Parameter {
            name: "quantile",
            reason: format!("must lie in (0, 1], got {quantile}"),
        });
    }
    if !(margin.is_finite() && margin >= 1.0) {
        return Err(Error::Parameter {
            name: "margin",
            reason: format!("must be >= 1, got {margin}"),
        });
    }
    let mut sorted = healthy_scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = (quantile * n as f64).ceil() as usize;
    Ok(margin * sorted[rank.clamp(1, n) - 1])
}
