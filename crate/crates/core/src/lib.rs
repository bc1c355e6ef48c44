//! Identification of 360-degree videos from VR head-movement traces.
//!
//! A 360-degree video drives the head of its viewer: attention gravitates to
//! the salient regions of the scene, so the head-movement trace of a viewing
//! session carries a signature of the video being watched. This crate models
//! the full desk-scale pipeline around that observation:
//!
//! - [`geometry`]: quaternion rotations, the camera-to-VR coordinate
//!   conversion, and the equirectangular projection shared by every module.
//! - [`trace`]: timestamped head-movement traces, windowing, resampling,
//!   head-orientation maps, and trace error metrics.
//! - [`fingerprint`]: saliency maps and per-video fingerprints, synthetic
//!   generation, and the on-disk PGM/manifest format.
//! - [`simulate`]: saliency-driven victim synthesis plus the estimation-noise
//!   and yaw-drift channels (with drift fitting and removal).
//! - [`matcher`]: log-likelihood trace-fingerprint scoring, confidence
//!   calibration, and top-k identification.
//! - [`openworld`]: Bayesian detection-rate analysis for open-world settings.
//! - [`harness`]: seeded end-to-end experiments and report emission.
//!
//! All randomized components are seed-deterministic: the same inputs and
//! seeds produce bit-identical outputs.

pub mod error;
pub mod fingerprint;
pub mod geometry;
pub mod harness;
pub mod matcher;
pub mod openworld;
pub mod pgm;
pub mod seed;
pub mod simulate;
pub mod trace;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
