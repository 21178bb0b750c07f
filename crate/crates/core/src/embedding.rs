//! Delay embedding of scalar windows into phase-space trajectories.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Embedding dimension and delay, in samples.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EmbeddingParams {
    /// Embedding dimension m >= 1.
    pub dim: usize,
    /// Delay tau >= 1, in samples.
    pub delay: usize,
}

impl EmbeddingParams {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 1 {
            return Err(Error::Parameter {
                name: "dim",
                reason: "embedding dimension must be >= 1".into(),
            });
        }
        if self.delay < 1 {
            return Err(Error::Parameter {
                name: "delay",
                reason: "delay must be >= 1".into(),
            });
        }
        Ok(())
    }

    /// Number of embedded points for a window of `window_len` samples.
    pub fn point_count(&self, window_len: usize) -> Option<usize> {
        window_len.checked_sub((self.dim - 1) * self.delay)
    }
}

/// Delay that places one quarter of an electrical period between coordinates,
/// so a pure sinusoid embeds onto a circle at m = 2. At least 1.
pub fn quarter_period_delay(sample_rate: f64, electrical_frequency: f64) -> usize {
    let tau = (sample_rate / (4.0 * electrical_frequency)).round() as usize;
    tau.max(1)
}

/// Sequence of m-dimensional points reconstructed from one scalar window.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    dim: usize,
    /// Row-major: point i occupies `[i*dim, (i+1)*dim)`.
    coords: Vec<f64>,
}

impl Trajectory {
    pub fn from_coords(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 || coords.is_empty() || coords.len() % dim != 0 {
            return Err(Error::Shape(format!(
                "coordinate count {} is not a positive multiple of dim {dim}",
                coords.len()
            )));
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("trajectory has non-finite coordinates".into()));
        }
        Ok(Trajectory { dim, coords })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of embedded points.
    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    /// Euclidean distance between points i and j.
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        let a = self.point(i);
        let b = self.point(j);
        let mut acc = 0.0;
        for k in 0..self.dim {
            let d = a[k] - b[k];
            acc += d * d;
        }
        acc.sqrt()
    }

    /// Largest pairwise distance. Quadratic; intended for tests and
    /// small trajectories.
    pub fn diameter(&self) -> f64 {
        let n = self.len();
        let mut max = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                max = max.max(self.distance(i, j));
            }
        }
        max
    }
}

/// Embed a window: point i is `(w[i], w[i+tau], ..., w[i+(m-1)tau])`.
pub fn delay_embed(window: &[f64], params: &EmbeddingParams) -> Result<Trajectory> {
    params.validate()?;
    let span = (params.dim - 1) * params.delay;
    let n_points = match window.len().checked_sub(span) {
        Some(n) if n >= 2 => n,
        _ => {
            return Err(Error::Sizing(format!(
                "window of {} samples leaves fewer than 2 embedded points for m={} tau={}",
                window.len(),
                params.dim,
                params.delay
            )))
        }
    };
    let mut coords = Vec::with_capacity(n_points * params.dim);
    for i in 0..n_points {
        for k in 0..params.dim {
            coords.push(window[i + k * params.delay]);
        }
    }
    Trajectory::from_coords(params.dim, coords)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn definition_unrolled() {
        let traj = delay_embed(&[1.0, 2.0, 3.0, 4.0], &EmbeddingParams { dim: 2, delay: 1 })
            .unwrap();
        assert_eq!(traj.len(), 3);
        assert_eq!(traj.point(0), &[1.0, 2.0]);
        assert_eq!(traj.point(1), &[2.0, 3.0]);
        assert_eq!(traj.point(2), &[3.0, 4.0]);
    }

    #[test]
    fn dim_one_is_identity() {
        let window = [0.5, -1.5, 2.5, 0.0];
        let traj = delay_embed(&window, &EmbeddingParams { dim: 1, delay: 3 }).unwrap();
        assert_eq!(traj.len(), window.len());
        for (i, w) in window.iter().enumerate() {
            assert_eq!(traj.point(i), &[*w]);
        }
    }

    #[test]
    fn period_four_signal_occupies_few_locations() {
        // x[i+2] = -x[i] for this period-4 signal, so every embedded point
        // lies on the line y = -x. Enumerating (w[i], w[i+2]) for
        // i = 0..8-2 gives 6 points on {(0,0), (1,-1), (-1,1)}.
        let window = [0.0, 1.0, 0.0, -1.0, 0.0, 1.0, 0.0, -1.0];
        let traj = delay_embed(&window, &EmbeddingParams { dim: 2, delay: 2 }).unwrap();
        assert_eq!(traj.len(), 6);
        let mut distinct: Vec<[f64; 2]> = Vec::new();
        for i in 0..traj.len() {
            let p = [traj.point(i)[0], traj.point(i)[1]];
            assert_eq!(p[1], -p[0]);
            if !distinct.iter().any(|q| q == &p) {
                distinct.push(p);
            }
        }
        assert_eq!(distinct.len(), 3, "distinct embedded locations: {distinct:?}");
    }

    #[test]
    fn too_short_window_is_a_sizing_error() {
        let err = delay_embed(&[1.0, 2.0, 3.0], &EmbeddingParams { dim: 2, delay: 2 });
        assert!(matches!(err, Err(Error::Sizing(_))));
    }

    #[test]
    fn quarter_period_rule() {
        assert_eq!(quarter_period_delay(100_000.0, 200.0), 125);
        assert_eq!(quarter_period_delay(8.0, 2.0), 1);
        assert_eq!(quarter_period_delay(4.0, 2.0), 1); // clamped to 1
    }
}
