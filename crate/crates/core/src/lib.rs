//! Inter-turn short-circuit severity diagnosis for PMSM phase currents.
//!
//! The pipeline turns raw three-phase current windows into clipped
//! recurrence-plot images, extracts activation features with a small
//! convolutional network, and scores machine health as the squared
//! Mahalanobis distance from a healthy baseline. A built-in synthetic fault
//! simulator stands in for a physical testbed, and classical diagnostics
//! (time-domain features, Clarke locus distortion, third-harmonic ratio)
//! are included for comparison.

pub mod baselines;
pub mod cnn;
pub mod embedding;
pub mod error;
pub mod health;
pub mod io;
pub mod pipeline;
pub mod rp;
pub mod sim;
pub mod sparse;

pub use error::{Error, Result};
