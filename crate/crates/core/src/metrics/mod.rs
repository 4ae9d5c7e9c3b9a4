//! Discrimination and calibration statistics.

mod bh;
mod brier;
mod chisq;
mod concordance;
mod dcal;
mod one_cal;

pub use bh::{benjamini_hochberg, BhDecision};
pub use brier::{brier_score, ibs_grid, integrated_brier, BrierPoint, IntegratedBrier};
pub use chisq::chisq_sf;
pub use concordance::{c_index, concordance_counts, ConcordanceCounts};
pub use dcal::d_calibration;
pub use one_cal::{
    calibration_points, one_calibration, one_calibration_probs, CalibrationPoint, CalibrationResult, GroupSummary,
    OneCalOptions,
};
