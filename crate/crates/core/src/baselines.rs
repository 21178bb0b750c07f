//! Reference diagnostics for comparison: knowledge-based time-domain
//! features, the Clarke-Concordia locus distortion, and the third-harmonic
//! ratio.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::ThreePhaseSignal;

pub const FEATURE_NAMES: [&str; 6] = [
    "max_abs",
    "rms",
    "skewness",
    "kurtosis",
    "crest_factor",
    "entropy",
];

pub const DEFAULT_ENTROPY_BINS: usize = 32;

/// Six classical per-window features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub max_abs: f64,
    pub rms: f64,
    /// m3 / m2^1.5.
    pub skewness: f64,
    /// Non-excess convention: a Gaussian scores 3.
    pub kurtosis: f64,
    pub crest_factor: f64,
    /// Shannon entropy (nats) of an equal-width amplitude histogram.
    pub entropy: f64,
}

impl FeatureVector {
    pub fn as_array(&self) -> [f64; 6] {
        [
            self.max_abs,
            self.rms,
            self.skewness,
            self.kurtosis,
            self.crest_factor,
            self.entropy,
        ]
    }

    pub fn from_array(a: [f64; 6]) -> FeatureVector {
        FeatureVector {
            max_abs: a[0],
            rms: a[1],
            skewness: a[2],
            kurtosis: a[3],
            crest_factor: a[4],
            entropy: a[5],
        }
    }
}

/// Time-domain features with the default 32-bin entropy histogram.
pub fn time_features(window: &[f64]) -> Result<FeatureVector> {
    time_features_with_bins(window, DEFAULT_ENTROPY_BINS)
}

pub fn time_features_with_bins(window: &[f64], entropy_bins: usize) -> Result<FeatureVector> {
    if window.len() < 2 {
        return Err(Error::Sizing(format!(
            "need at least 2 samples for time features, got {}",
            window.len()
        )));
    }
    if entropy_bins < 1 {
        return Err(Error::Parameter {
            name: "entropy_bins",
            reason: "must be >= 1".into(),
        });
    }
    let n = window.len() as f64;
    let max_abs = window.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let rms = (window.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
    if rms == 0.0 {
        return Err(Error::DegenerateWindow(
            "all-zero window: crest factor undefined".into(),
        ));
    }
    let mean = window.iter().sum::<f64>() / n;
    let mut m2 = 0.0;
    let mut m3 = 0.0;
    let mut m4 = 0.0;
    for v in window {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    if m2 == 0.0 {
        return Err(Error::DegenerateWindow(
            "constant window: skewness and kurtosis undefined".into(),
        ));
    }
    let skewness = m3 / m2.powf(1.5);
    let kurtosis = m4 / (m2 * m2);
    let crest_factor = max_abs / rms;

    // Histogram entropy over the window's own range; empty bins contribute 0.
    let lo = window.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = window.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let entropy = if hi > lo {
        let width = (hi - lo) / entropy_bins as f64;
        let mut counts = vec![0usize; entropy_bins];
        for v in window {
            let bin = (((v - lo) / width) as usize).min(entropy_bins - 1);
            counts[bin] += 1;
        }
        -counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n;
                p * p.ln()
            })
            .sum::<f64>()
    } else {
        0.0
    };

    Ok(FeatureVector {
        max_abs,
        rms,
        skewness,
        kurtosis,
        crest_factor,
        entropy,
    })
}

/// Per-feature z-scoring result. Features whose spread is (near) zero pass
/// through unscaled and are flagged.
#[derive(Debug, Clone)]
pub struct NormalizedFeatures {
    pub rows: Vec<[f64; 6]>,
    /// Per-feature (mean, population std).
    pub stats: [(f64, f64); 6],
    /// True where the feature was actually scaled.
    pub scaled: [bool; 6],
}

pub fn normalize_features(rows: &[FeatureVector]) -> Result<NormalizedFeatures> {
    if rows.len() < 2 {
        return Err(Error::Input(format!(
            "need at least 2 feature rows to normalize, got {}",
            rows.len()
        )));
    }
    let n = rows.len() as f64;
    let mut stats = [(0.0, 0.0); 6];
    let mut scaled = [false; 6];
    let arrays: Vec<[f64; 6]> = rows.iter().map(|r| r.as_array()).collect();
    for f in 0..6 {
        let mean = arrays.iter().map(|a| a[f]).sum::<f64>() / n;
        let var = arrays.iter().map(|a| (a[f] - mean) * (a[f] - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        stats[f] = (mean, std);
        scaled[f] = std > 1e-12;
    }
    let out = arrays
        .iter()
        .map(|a| {
            let mut row = *a;
            for f in 0..6 {
                if scaled[f] {
                    row[f] = (row[f] - stats[f].0) / stats[f].1;
                }
            }
            row
        })
        .collect();
    Ok(NormalizedFeatures {
        rows: out,
        stats,
        scaled,
    })
}

/// Alpha-beta locus of a three-phase signal plus the eccentricity of its
/// fitted ellipse.
#[derive(Debug, Clone, PartialEq)]
pub struct ClarkeLocus {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// sqrt(1 - (b/a)^2) of the fitted origin-centered ellipse.
    pub eccentricity: f64,
}

const MIN_CLARKE_SAMPLES: usize = 8;

/// Power-invariant Clarke transform and an algebraic origin-centered ellipse
/// fit (`A x^2 + B xy + C y^2 = 1` by least squares; semi-axes from the
/// eigenvalues of the quadratic form).
pub fn clarke_transform(sig: &ThreePhaseSignal) -> Result<ClarkeLocus> {
    sig.validate()?;
    if sig.len() < MIN_CLARKE_SAMPLES {
        return Err(Error::Sizing(format!(
            "need at least {MIN_CLARKE_SAMPLES} samples covering one electrical period, got {}",
            sig.len()
        )));
    }
    let s23 = (2.0f64 / 3.0).sqrt();
    let s32 = 3.0f64.sqrt() / 2.0;
    let mut alpha = Vec::with_capacity(sig.len());
    let mut beta = Vec::with_capacity(sig.len());
    for i in 0..sig.len() {
        let (a, b, c) = (sig.ia[i], sig.ib[i], sig.ic[i]);
        alpha.push(s23 * (a - b / 2.0 - c / 2.0));
        beta.push(s23 * s32 * (b - c));
    }
    let eccentricity = ellipse_eccentricity(&alpha, &beta)?;
    Ok(ClarkeLocus {
        alpha,
        beta,
        eccentricity,
    })
}

/// Least-squares fit of `A x^2 + B xy + C y^2 = 1` via its 3x3 normal
/// equations; eccentricity from the eigenvalues of [[A, B/2], [B/2, C]].
pub fn ellipse_eccentricity(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!(
            "locus arrays differ in length: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    // Normalize the scale first so the normal equations are well conditioned
    // regardless of amperage; eccentricity is scale-invariant.
    let scale = x
        .iter()
        .chain(y)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    if scale <= 0.0 {
        return Err(Error::Input("degenerate locus: all points at the origin".into()));
    }
    let mut m = [[0.0f64; 3]; 3];
    let mut rhs = [0.0f64; 3];
    for (xv, yv) in x.iter().zip(y) {
        let (u, v) = (xv / scale, yv / scale);
        let row = [u * u, u * v, v * v];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] += row[i] * row[j];
            }
            rhs[i] += row[i];
        }
    }
    // Solve the 3x3 system by Gaussian elimination with partial pivoting.
    let mut a = m;
    let mut b = rhs;
    for col in 0..3 {
        let pivot = (col..3)
            .max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs()))
            .unwrap();
        if a[pivot][col].abs() < 1e-12 {
            return Err(Error::Input("degenerate locus: ellipse fit is singular".into()));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in 0..3 {
            if row != col {
                let f = a[row][col] / a[col][col];
                for c in col..3 {
                    a[row][c] -= f * a[col][c];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let qa = b[0] / a[0][0];
    let qb = b[1] / a[1][1];
    let qc = b[2] / a[2][2];

    // Eigenvalues of the quadratic form; axes are 1/sqrt(eigenvalue).
    let tr = qa + qc;
    let det = qa * qc - (qb / 2.0) * (qb / 2.0);
    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
    let l1 = tr / 2.0 - disc; // smaller eigenvalue -> major axis
    let l2 = tr / 2.0 + disc;
    if l1 <= 0.0 || l2 <= 0.0 {
        return Err(Error::Input(
            "locus does not trace an ellipse (non-positive quadratic form)".into(),
        ));
    }
    Ok((1.0 - l1 / l2).max(0.0).sqrt())
}

/// Magnitude of the correlation `sum x[n] exp(-j w n)` at an arbitrary
/// frequency, computed with the Goertzel recurrence.
fn goertzel_magnitude(window: &[f64], normalized_freq: f64) -> f64 {
    let omega = 2.0 * std::f64::consts::PI * normalized_freq;
    let coeff = 2.0 * omega.cos();
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    for &x in window {
        let s = x + coeff * s1 - s2;
        s2 = s1;
        s1 = s;
    }
    (s1 * s1 + s2 * s2 - coeff * s1 * s2).max(0.0).sqrt()
}

/// Third-harmonic indicator: `|X(3 f0)| / |X(f0)|` from single-bin Goertzel
/// correlations at the exact frequencies.
pub fn third_harmonic_ratio(window: &[f64], sample_rate: f64, fundamental: f64) -> Result<f64> {
    if !(sample_rate.is_finite() && sample_rate > 0.0) {
        return Err(Error::Parameter {
            name: "sample_rate",
            reason: format!("must be finite and > 0, got {sample_rate}"),
        });
    }
    if !(fundamental.is_finite() && fundamental > 0.0) {
        return Err(Error::Parameter {
            name: "fundamental",
            reason: format!("must be finite and > 0, got {fundamental}"),
        });
    }
    if 3.0 * fundamental >= sample_rate / 2.0 {
        return Err(Error::Parameter {
            name: "fundamental",
            reason: format!(
                "third harmonic {} Hz violates the Nyquist limit {} Hz",
                3.0 * fundamental,
                sample_rate / 2.0
            ),
        });
    }
    let min_len = (3.0 * sample_rate / fundamental).ceil() as usize;
    if window.len() < min_len {
        return Err(Error::Sizing(format!(
            "window of {} samples spans fewer than 3 fundamental periods ({min_len} samples)",
            window.len()
        )));
    }
    let fund = goertzel_magnitude(window, fundamental / sample_rate);
    let third = goertzel_magnitude(window, 3.0 * fundamental / sample_rate);
    if fund == 0.0 {
        return Err(Error::DegenerateWindow(
            "no fundamental content: third-harmonic ratio undefined".into(),
        ));
    }
    Ok(third / fund)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{simulate_currents, FaultSpec, MotorConfig, NoiseSpec, Phase};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn sine(amplitude: f64, periods: usize, samples_per_period: usize) -> Vec<f64> {
        (0..periods * samples_per_period)
            .map(|i| {
                amplitude
                    * (2.0 * std::f64::consts::PI * i as f64 / samples_per_period as f64).sin()
            })
            .collect()
    }

    #[test]
    fn sinusoid_rms_and_crest() {
        let w = sine(2.5, 10, 500);
        let f = time_features(&w).unwrap();
        assert!((f.rms - 2.5 / 2f64.sqrt()).abs() < 1e-9, "rms {}", f.rms);
        assert!((f.crest_factor - 2f64.sqrt()).abs() < 1e-6, "crest {}", f.crest_factor);
        assert!((f.max_abs - 2.5).abs() < 1e-9);
    }

    #[test]
    fn symmetric_window_has_zero_skewness() {
        let mut w: Vec<f64> = Vec::new();
        for i in 1..=100 {
            w.push(3.0 + i as f64 / 10.0);
            w.push(3.0 - i as f64 / 10.0);
        }
        let f = time_features(&w).unwrap();
        assert!(f.skewness.abs() < 1e-9, "skewness {}", f.skewness);
    }

    #[test]
    fn gaussian_kurtosis_approaches_three() {
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        let w: Vec<f64> = (0..1_000_000)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let f = time_features(&w).unwrap();
        assert!(
            (f.kurtosis - 3.0).abs() < 0.05,
            "non-excess Gaussian kurtosis should be 3 +- 0.05, got {}",
            f.kurtosis
        );
    }

    #[test]
    fn scale_invariant_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let w: Vec<f64> = (0..2048).map(|_| rng.random_range(-1.0..1.0)).collect();
        let scaled: Vec<f64> = w.iter().map(|v| v * 7.5).collect();
        let a = time_features(&w).unwrap();
        let b = time_features(&scaled).unwrap();
        for (x, y, name) in [
            (a.skewness, b.skewness, "skewness"),
            (a.kurtosis, b.kurtosis, "kurtosis"),
            (a.crest_factor, b.crest_factor, "crest"),
        ] {
            assert!(
                (x - y).abs() < 1e-9 * x.abs().max(1.0),
                "{name} not scale invariant: {x} vs {y}"
            );
        }
    }

    #[test]
    fn degenerate_windows_are_rejected() {
        assert!(matches!(
            time_features(&[0.0, 0.0, 0.0]),
            Err(Error::DegenerateWindow(_))
        ));
        assert!(matches!(
            time_features(&[2.0, 2.0, 2.0]),
            Err(Error::DegenerateWindow(_))
        ));
        assert!(matches!(time_features(&[1.0]), Err(Error::Sizing(_))));
    }

    #[test]
    fn normalization_yields_zero_mean_unit_std() {
        let mut rng = ChaCha8Rng::seed_from_u64(102);
        let rows: Vec<FeatureVector> = (0..50)
            .map(|_| {
                FeatureVector::from_array([
                    rng.random_range(0.0..10.0),
                    rng.random_range(0.0..5.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(1.0..4.0),
                    rng.random_range(1.0..2.0),
                    rng.random_range(0.0..3.0),
                ])
            })
            .collect();
        let norm = normalize_features(&rows).unwrap();
        assert!(norm.scaled.iter().all(|&s| s));
        let n = norm.rows.len() as f64;
        for f in 0..6 {
            let mean = norm.rows.iter().map(|r| r[f]).sum::<f64>() / n;
            let var = norm.rows.iter().map(|r| (r[f] - mean) * (r[f] - mean)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-9, "feature {f} mean {mean}");
            assert!((var.sqrt() - 1.0).abs() < 1e-9, "feature {f} std {}", var.sqrt());
        }
    }

    #[test]
    fn two_rows_normalize_to_plus_minus_one() {
        let a = FeatureVector::from_array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = FeatureVector::from_array([3.0, 6.0, 5.0, 0.0, 9.0, 2.0]);
        let norm = normalize_features(&[a, b]).unwrap();
        for f in 0..6 {
            assert!((norm.rows[0][f].abs() - 1.0).abs() < 1e-12);
            assert_eq!(norm.rows[0][f], -norm.rows[1][f]);
        }
    }

    #[test]
    fn constant_feature_passes_through_flagged() {
        let a = FeatureVector::from_array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = FeatureVector::from_array([3.0, 2.0, 5.0, 0.0, 9.0, 2.0]);
        let norm = normalize_features(&[a, b]).unwrap();
        assert!(!norm.scaled[1]);
        assert_eq!(norm.rows[0][1], 2.0);
        assert_eq!(norm.rows[1][1], 2.0);
        assert!(normalize_features(&[a]).is_err());
    }

    #[test]
    fn balanced_signal_traces_a_circle() {
        let cfg = MotorConfig::default();
        let sig = simulate_currents(&cfg, &FaultSpec::healthy(), &NoiseSpec::noiseless(), 0.02, 1)
            .unwrap();
        let locus = clarke_transform(&sig).unwrap();
        assert_eq!(locus.alpha.len(), sig.len());
        assert!(
            locus.eccentricity < 0.01,
            "balanced locus should be circular, eccentricity {}",
            locus.eccentricity
        );
    }

    #[test]
    fn zero_sequence_is_rejected_exactly() {
        let n = 64;
        let common: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin() + 0.4).collect();
        let sig = ThreePhaseSignal {
            sample_rate: 1000.0,
            ia: common.clone(),
            ib: common.clone(),
            ic: common.clone(),
        };
        // alpha and beta are identically zero, so the ellipse fit must fail
        // with a degenerate-locus error; the transform itself is exact.
        let s23 = (2.0f64 / 3.0).sqrt();
        for i in 0..n {
            let alpha = s23 * (common[i] - common[i] / 2.0 - common[i] / 2.0);
            assert_eq!(alpha, 0.0);
        }
        assert!(clarke_transform(&sig).is_err());
    }

    #[test]
    fn scaled_phase_eccentricity_matches_analytic_fit() {
        // Phase A scaled by 0.9: the locus is an axis-aligned ellipse; compare
        // against a brute-force fit on analytically generated alpha/beta.
        let n = 2000usize;
        let omega = 2.0 * std::f64::consts::PI / 500.0;
        let mut ia = Vec::new();
        let mut ib = Vec::new();
        let mut ic = Vec::new();
        for i in 0..n {
            let th = omega * i as f64;
            ia.push(0.9 * th.sin());
            ib.push((th - 2.0 * std::f64::consts::PI / 3.0).sin());
            ic.push((th + 2.0 * std::f64::consts::PI / 3.0).sin());
        }
        let sig = ThreePhaseSignal {
            sample_rate: 1000.0,
            ia,
            ib,
            ic,
        };
        let locus = clarke_transform(&sig).unwrap();

        // Brute-force oracle: dense scan of the axis ratio against the
        // analytic alpha/beta extremes.
        let a_max = locus.alpha.iter().cloned().fold(0.0f64, |m, v| m.max(v.abs()));
        let b_max = locus.beta.iter().cloned().fold(0.0f64, |m, v| m.max(v.abs()));
        let (major, minor) = if a_max > b_max { (a_max, b_max) } else { (b_max, a_max) };
        let expected = (1.0 - (minor / major) * (minor / major)).sqrt();
        assert!(
            (locus.eccentricity - expected).abs() < 1e-3,
            "eccentricity {} vs axis-extreme oracle {expected}",
            locus.eccentricity
        );
    }

    #[test]
    fn eccentricity_is_invariant_to_clarke_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(103);
        let n = 600;
        let x: Vec<f64> = (0..n)
            .map(|i| 2.0 * (i as f64 * 0.011).cos() + 0.01 * rng.random_range(-1.0..1.0))
            .collect();
        let y: Vec<f64> = (0..n)
            .map(|i| 1.5 * (i as f64 * 0.011).sin() + 0.01 * rng.random_range(-1.0..1.0))
            .collect();
        let e1 = ellipse_eccentricity(&x, &y).unwrap();
        let xs: Vec<f64> = x.iter().map(|v| v * 4.2).collect();
        let ys: Vec<f64> = y.iter().map(|v| v * 4.2).collect();
        let e2 = ellipse_eccentricity(&xs, &ys).unwrap();
        assert!((e1 - e2).abs() < 1e-9, "{e1} vs {e2}");
    }

    #[test]
    fn eccentricity_increases_with_fault_ratio() {
        let cfg = MotorConfig::default();
        let mut last = -1.0;
        for fr in [0.0, 0.0182, 0.0433, 0.078] {
            let sig = simulate_currents(
                &cfg,
                &FaultSpec::with_ratio(fr, Phase::A),
                &NoiseSpec::noiseless(),
                0.02,
                2,
            )
            .unwrap();
            let ecc = clarke_transform(&sig).unwrap().eccentricity;
            assert!(
                ecc > last,
                "eccentricity should increase with FR: {ecc} after {last} at FR {fr}"
            );
            last = ecc;
        }
    }

    #[test]
    fn pure_fundamental_has_no_third_harmonic() {
        let w = sine(1.0, 16, 500);
        let r = third_harmonic_ratio(&w, 100_000.0, 200.0).unwrap();
        assert!(r < 1e-9, "ratio {r}");
    }

    #[test]
    fn constructed_spectrum_ratio() {
        let n = 500 * 16;
        let w: Vec<f64> = (0..n)
            .map(|i| {
                let th = 2.0 * std::f64::consts::PI * i as f64 / 500.0;
                th.sin() + 0.2 * (3.0 * th).sin()
            })
            .collect();
        let r = third_harmonic_ratio(&w, 100_000.0, 200.0).unwrap();
        assert!((r - 0.2).abs() < 1e-6, "ratio {r}");

        // Scale invariance.
        let scaled: Vec<f64> = w.iter().map(|v| v * 3.3).collect();
        let rs = third_harmonic_ratio(&scaled, 100_000.0, 200.0).unwrap();
        assert!((r - rs).abs() < 1e-9);
    }

    #[test]
    fn simulator_ratio_matches_full_dft_oracle() {
        let cfg = MotorConfig::default();
        let sig = simulate_currents(
            &cfg,
            &FaultSpec::with_ratio(0.0433, Phase::A),
            &NoiseSpec::noiseless(),
            0.1,
            3,
        )
        .unwrap();
        // 0.1 s at 100 kHz = 10000 samples = 20 periods: the fundamental sits
        // exactly on DFT bin 20 and the third harmonic on bin 60.
        let w = &sig.ia;
        let n = w.len();
        let dft_bin = |k: usize| -> f64 {
            let mut re = 0.0;
            let mut im = 0.0;
            for (i, &x) in w.iter().enumerate() {
                let th = 2.0 * std::f64::consts::PI * k as f64 * i as f64 / n as f64;
                re += x * th.cos();
                im -= x * th.sin();
            }
            (re * re + im * im).sqrt()
        };
        let oracle = dft_bin(60) / dft_bin(20);
        let r = third_harmonic_ratio(w, cfg.sample_rate, 200.0).unwrap();
        assert!(
            (r - oracle).abs() < 1e-9,
            "goertzel ratio {r} vs full-DFT oracle {oracle}"
        );
        let analytic = 0.0433 / (1.0 - 0.5 * 0.0433);
        assert!((r - analytic).abs() < 1e-9, "ratio {r} vs analytic {analytic}");
    }

    #[test]
    fn nyquist_and_span_violations() {
        let w = sine(1.0, 16, 100);
        assert!(matches!(
            third_harmonic_ratio(&w, 1000.0, 200.0),
            Err(Error::Parameter { .. })
        ));
        let short = sine(1.0, 2, 500);
        assert!(matches!(
            third_harmonic_ratio(&short, 100_000.0, 200.0),
            Err(Error::Sizing(_))
        ));
    }
}
