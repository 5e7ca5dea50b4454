//! Reliability assessment toolkit for semantic segmentation models.
//!
//! Covers segmentation accuracy, calibration, pixel-level OOD detection
//! metrics, benchmark-correlation analytics and the planning side of
//! synthetic-data generation.

pub mod analytics;
pub mod calibration;
pub mod data;
pub mod error;
pub mod genplan;
pub mod ood_metrics;
pub mod rng;
pub mod seg_metrics;

pub use error::{Error, Result};
