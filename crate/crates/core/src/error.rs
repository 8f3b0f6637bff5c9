use std::fmt;

use thiserror::Error;

/// A rejected input row, numbered from 1 for the first data row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowError {
    pub row: usize,
    pub column: String,
    pub message: String,
}

impl fmt::Display for RowError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "row {}: column {}: {}",
            self.row, self.column, self.message
        )
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid measurement: {0}")]
    InvalidMeasurement(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("{} bad row(s); first: {}", .0.len(), .0.first().map(ToString::to_string).unwrap_or_default())]
    Rows(Vec<RowError>),
    #[error("conflicting occupancy labels in uplink group of node {node_id} at t={timestamp_s}")]
    LabelConflict { node_id: String, timestamp_s: f64 },
    #[error("split error: {0}")]
    Split(String),
    #[error("degenerate training set: {0}")]
    DegenerateTraining(String),
    #[error("fold error: {0}")]
    Fold(String),
    #[error("label error: {0}")]
    Label(String),
    #[error("mapping error: {0}")]
    Mapping(String),
    #[error("solver did not converge after {0} iterations")]
    NotConverged(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
