//! End-to-end audit: ingestion, per-fold scoring, controls, recalibration and report output.

mod controls;
pub mod ingest;
mod recal;
mod report;
mod run;
pub mod synthetic;

pub use controls::{
    dcal_demo_replicate, four_bin_curves, run_controls, shuffled_dcal_demo, BreslowControl, BreslowFold, ControlBundle,
    ControlOptions, ControlReport, DcalDemo, DcalDemoFold, IbsComparison, NegativeControl, PositiveControl, NEGATIVE_MODEL,
    POSITIVE_MODEL,
};
pub use recal::{run_recalibration, RecalFoldRow, RecalibrationReport, C_INDEX_TOLERANCE};
pub use report::{
    audit_csv_rows, emit_audit, emit_controls, emit_monte_carlo, emit_recalibration, parse_formats, Format, AUDIT_CSV_HEADER,
};
pub use run::{
    build_fold_curves, evaluate_fold, finalize, run_audit, split_fold, AuditOptions, AuditReport, BhFamily, FamilyDecision,
    FoldCurves, FoldRow, Metadata, Rollup, SCHEMA_VERSION,
};
