//! Evaluation protocol: MAE, attribute-stratified errors, age-window error
//! curves, age histograms, observer-gender evaluation, reports and plots.

mod analysis;
mod plot;
mod predictions;
mod report;

pub use analysis::{
    age_histogram, error_by_age_window, observer_eval, stratify, AgeLabel, Attribute, Histogram, ObserverMae,
    ObserverReport, StratumRow, WindowPoint, DEFAULT_WINDOW,
};
pub use plot::{bar_plot, line_plot, Series};
pub use predictions::{predict, predict_observers, PredictionRow, PredictionSet};
pub use report::{build_report, emit_report, write_strata_csv, EvalReport, REPORT_FILE, STRATA_FILE};

use std::path::PathBuf;

use thiserror::Error;

use crate::architecture::ArchitectureError;

#[derive(Debug, Error)]
pub enum EvaluationError {
    #[error("length mismatch: {preds} predictions, {truths} ground truths")]
    LengthMismatch { preds: usize, truths: usize },
    #[error("cannot compute an error over zero samples")]
    Empty,
    #[error("duplicate image id `{0}` in predictions")]
    DuplicateId(String),
    #[error("image id `{0}` has no annotation")]
    UnknownId(String),
    #[error("sample `{0}` lacks per-observer apparent labels")]
    MissingObserverLabels(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Architecture(#[from] ArchitectureError),
}

pub type Result<T> = std::result::Result<T, EvaluationError>;

/// Mean absolute error, summed in index order.
pub fn mae(preds: &[f64], truths: &[f64]) -> Result<f64> {
    if preds.len() != truths.len() {
        return Err(EvaluationError::LengthMismatch {
            preds: preds.len(),
            truths: truths.len(),
        });
    }
    if preds.is_empty() {
        return Err(EvaluationError::Empty);
    }
    let total: f64 = preds.iter().zip(truths).map(|(p, t)| (p - t).abs()).sum();
    Ok(total / preds.len() as f64)
}
