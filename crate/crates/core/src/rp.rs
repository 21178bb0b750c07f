//! Recurrence-plot imaging: the classic binary plot and the clipped variant
//! that stores raw distances below a saturation threshold, plus area-average
//! resizing and unit-range normalization.
//!
//! The clipped plot maps every pairwise distance `d` to `min(d, N)`: large
//! excursions (spikes) saturate at N while weak structure below N survives
//! untouched. All matrices are stored row-major and built symmetric by
//! mirroring the computed upper triangle.

use crate::embedding::Trajectory;
use crate::error::{Error, Result};

/// Clipped recurrence image: values in `[0, clip_threshold]`, symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct RPImage {
    side: usize,
    /// Row-major `side * side` values.
    values: Vec<f64>,
    clip_threshold: f64,
}

impl RPImage {
    pub fn new(side: usize, values: Vec<f64>, clip_threshold: f64) -> Result<Self> {
        if values.len() != side * side {
            return Err(Error::Shape(format!(
                "expected {} values for side {side}, got {}",
                side * side,
                values.len()
            )));
        }
        if !(clip_threshold.is_finite() && clip_threshold > 0.0) {
            return Err(Error::Parameter {
                name: "clip_threshold",
                reason: format!("must be finite and > 0, got {clip_threshold}"),
            });
        }
        Ok(RPImage {
            side,
            values,
            clip_threshold,
        })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn clip_threshold(&self) -> f64 {
        self.clip_threshold
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.side + j]
    }
}

/// Classic thresholded recurrence plot over {0, 1}.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryRP {
    side: usize,
    values: Vec<u8>,
    epsilon: f64,
}

impl BinaryRP {
    pub fn side(&self) -> usize {
        self.side
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.values[i * self.side + j]
    }
}

/// Image normalized to `[0, 1]` by its clip threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitImage {
    side: usize,
    values: Vec<f64>,
}

impl UnitImage {
    pub fn new(side: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != side * side {
            return Err(Error::Shape(format!(
                "expected {} values for side {side}, got {}",
                side * side,
                values.len()
            )));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Input("unit image values must lie in [0, 1]".into()));
        }
        Ok(UnitImage { side, values })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.side + j]
    }
}

/// Clipped recurrence plot: `R(i,j) = min(||x(i)-x(j)||, clip)`.
pub fn modified_rp(traj: &Trajectory, clip: f64) -> Result<RPImage> {
    if !(clip.is_finite() && clip > 0.0) {
        return Err(Error::Parameter {
            name: "clip",
            reason: format!("saturation threshold must be finite and > 0, got {clip}"),
        });
    }
    let n = traj.len();
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = traj.distance(i, j);
            let v = if d >= clip { clip } else { d };
            values[i * n + j] = v;
            values[j * n + i] = v;
        }
    }
    RPImage::new(n, values, clip)
}

/// Classic binary recurrence plot: 1 iff `||x(i)-x(j)|| <= epsilon`.
pub fn classic_rp(traj: &Trajectory, epsilon: f64) -> Result<BinaryRP> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::Parameter {
            name: "epsilon",
            reason: format!("recurrence radius must be finite and > 0, got {epsilon}"),
        });
    }
    let n = traj.len();
    let mut values = vec![0u8; n * n];
    for i in 0..n {
        values[i * n + i] = 1; // distance 0 <= epsilon
        for j in (i + 1)..n {
            let v = u8::from(traj.distance(i, j) <= epsilon);
            values[i * n + j] = v;
            values[j * n + i] = v;
        }
    }
    Ok(BinaryRP {
        side: n,
        values,
        epsilon,
    })
}

/// Per-output-cell box-filter weights for one axis of an area-average resize.
/// Entry `a` holds the first covered input index and the normalized weight of
/// each covered index; weights sum to 1 up to rounding.
fn box_weights(source: usize, target: usize) -> Vec<(usize, Vec<f64>)> {
    let ratio = source as f64 / target as f64;
    (0..target)
        .map(|a| {
            let lo = a as f64 * ratio;
            let hi = (a + 1) as f64 * ratio;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(source) - 1;
            let weights = (first..=last)
                .map(|i| {
            let overlap = (hi.min((i + 1) as f64) - lo.max(i as f64)).max(0.0);
                    overlap / ratio
                })
                .collect();
            (first, weights)
        })
        .collect()
}

/// Area-average downsample to `target x target`. Symmetry is preserved
/// bit-exactly (upper triangle mirrored); values stay within `[0, clip]`.
pub fn resize_image(img: &RPImage, target: usize) -> Result<RPImage> {
    if target < 2 {
        return Err(Error::Sizing(format!("resize target must be >= 2, got {target}")));
    }
    if target > img.side {
        return Err(Error::Sizing(format!(
            "resize target {target} exceeds source side {} (upsampling unsupported)",
            img.side
        )));
    }
    if target == img.side {
        return Ok(img.clone());
    }
    let w = box_weights(img.side, target);
    let clip = img.clip_threshold;
    let mut values = vec![0.0; target * target];
    for a in 0..target {
        let (i0, ref wi) = w[a];
        for b in a..target {
            let (j0, ref wj) = w[b];
            let mut acc = 0.0;
            for (di, wa) in wi.iter().enumerate() {
                let row = &img.values[(i0 + di) * img.side..];
                let mut inner = 0.0;
                for (dj, wb) in wj.iter().enumerate() {
                    inner += wb * row[j0 + dj];
                }
                acc += wa * inner;
            }
            let v = acc.clamp(0.0, clip);
            values[a * target + b] = v;
            values[b * target + a] = v;
        }
    }
    RPImage::new(target, values, clip)
}

/// Fused clipped-RP + area-average resize; avoids materializing the full
/// distance matrix. Matches `resize_image(&modified_rp(..)?, target)` to
/// floating-point rounding.
pub fn rp_image_resized(traj: &Trajectory, clip: f64, target: usize) -> Result<RPImage> {
    if !(clip.is_finite() && clip > 0.0) {
        return Err(Error::Parameter {
            name: "clip",
            reason: format!("saturation threshold must be finite and > 0, got {clip}"),
        });
    }
    let n = traj.len();
    if target > n {
        return Err(Error::Sizing(format!(
            "resize target {target} exceeds trajectory length {n}"
        )));
    }
    if target == n {
        return modified_rp(traj, clip);
    }
    if target < 2 {
        return Err(Error::Sizing(format!("resize target must be >= 2, got {target}")));
    }
    let w = box_weights(n, target);
    let mut values = vec![0.0; target * target];
    for a in 0..target {
        let (i0, ref wi) = w[a];
        for b in a..target {
            let (j0, ref wj) = w[b];
            let mut acc = 0.0;
            for (di, wa) in wi.iter().enumerate() {
                let i = i0 + di;
                let mut inner = 0.0;
                for (dj, wb) in wj.iter().enumerate() {
                    let j = j0 + dj;
                    let v = if i == j {
                        0.0
                    } else {
                        let d = traj.distance(i, j);
                        if d >= clip {
                            clip
                        } else {
                            d
                        }
                    };
                    inner += wb * v;
                }
                acc += wa * inner;
            }
            let v = acc.clamp(0.0, clip);
            values[a * target + b] = v;
            values[b * target + a] = v;
        }
    }
    RPImage::new(target, values, clip)
}

/// Divide by the clip threshold, mapping `[0, N]` onto `[0, 1]`.
pub fn normalize_image(img: &RPImage) -> UnitImage {
    let n = img.clip_threshold;
    let values = img.values.iter().map(|v| v / n).collect();
    UnitImage {
        side: img.side,
        values,
    }
}
