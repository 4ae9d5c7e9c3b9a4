//! Fold-level calibration audits for survival-model predictions.
//!
//! Curves are reconstructed per patient from risk scores, discrete hazard logits or explicit
//! grids, then scored with the C-index, an IPCW-weighted 1-calibration test, D-calibration
//! and the integrated Brier score. Fold-level p-values are corrected with Benjamini-Hochberg.

pub mod audit;
pub mod controls;
pub mod curves;
pub mod error;
pub mod metrics;
pub mod recalibrate;
pub mod survival;
pub mod synth;

pub use error::{Error, Result};
