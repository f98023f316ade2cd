use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch for {what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged (NaN loss) at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("invalid {what}: {msg}")]
    Invalid { what: &'static str, msg: String },

    #[error("degenerate prediction range: all predictions equal {value}")]
    DegenerateRange { value: f64 },

    #[error("malformed expert vector: {0}")]
    MalformedExpertVector(String),

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("value {value} outside covered range [{lo}, {hi}]")]
    OutOfCoverage { value: f64, lo: f64, hi: f64 },

    #[error("target function is not affine over the unbounded top segment")]
    NonAffineTop,

    #[error(
        "no dataset sample has a prediction within {delta} of {target}; nearest achievable prediction is {nearest}"
    )]
    NoCandidate { target: f64, delta: f64, nearest: f64 },

    #[error("exact Shapley supports at most {max} features, got {d}")]
    TooManyFeatures { d: usize, max: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("feature '{0}' is constant and cannot be standardized")]
    ConstantFeature(String),

    #[error("target column '{0}' not found in header")]
    MissingColumn(String),

    #[error("no usable rows in {0}")]
    NoUsableRows(String),

    #[error("sample and baseline are too close: |f(x) - f(x~)| = {distance:e}")]
    DegeneratePair { distance: f64 },

    #[error("file not found: {}", .0.display())]
    NotFound(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Shape {
            what,
            expected,
            got,
        });
    }
    Ok(())
}

pub(crate) fn check_finite(what: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}
