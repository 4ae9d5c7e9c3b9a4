use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by the survival, calibration and recalibration routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("empty risks")]
    EmptyRisks,
    #[error("insufficient events: {0}")]
    InsufficientEvents(String),
    #[error("insufficient events for quartiles")]
    InsufficientQuartileEvents,
    #[error("degenerate quartiles")]
    DegenerateQuartiles,
    #[error("grid too small")]
    GridTooSmall,
    #[error("no comparable pairs")]
    NoComparablePairs,
    #[error("degenerate grouping")]
    DegenerateGrouping,
    #[error("degenerate labels")]
    DegenerateLabels,
    #[error("fit diverged")]
    FitDiverged,
    #[error("cox diverged")]
    CoxDiverged,
    #[error("no events")]
    NoEvents,
    #[error("k too large")]
    KTooLarge,
    #[error("no replicates")]
    NoReplicates,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("cannot write {0}")]
    Unwritable(String),
}

impl Error {
    /// Short stable identifier used in report rows.
    pub fn code(&self) -> &'static str {
        match self {
            Error::EmptyDataset => "empty_dataset",
            Error::EmptyRisks => "empty_risks",
            Error::InsufficientEvents(_) => "insufficient_events",
            Error::InsufficientQuartileEvents => "insufficient_events_for_quartiles",
            Error::DegenerateQuartiles => "degenerate_quartiles",
            Error::GridTooSmall => "grid_too_small",
            Error::NoComparablePairs => "no_comparable_pairs",
            Error::DegenerateGrouping => "degenerate_grouping",
            Error::DegenerateLabels => "degenerate_labels",
            Error::FitDiverged => "fit_diverged",
            Error::CoxDiverged => "cox_diverged",
            Error::NoEvents => "no_events",
            Error::KTooLarge => "k_too_large",
            Error::NoReplicates => "no_replicates",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::InvalidInput(_) => "invalid_input",
            Error::Unwritable(_) => "unwritable_path",
        }
    }
}
