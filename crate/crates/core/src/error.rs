//! Crate-wide error type. Variants mirror the failure contracts of the public
//! operations; message payloads carry enough context to be actionable at the
//! CLI boundary without a backtrace.

use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug)]
pub enum Error {
    /// Vector/matrix dimensions that must agree do not.
    LengthMismatch(String),
    /// A cluster id not present in the declared cluster order.
    UnknownLabel(String),
    /// A declared cluster receives no rows (raised only under the strict policy).
    EmptyCluster(String),
    /// Parameter or input validation failure (bad q, bad fraction, empty grid, ...).
    InvalidInput(String),
    /// The ridge system is not solvable: mu <= 0, or a factorization failed.
    SingularSystem(String),
    /// A cardinality budget lies outside 0..=K.
    BudgetOutOfRange(String),
    /// Exhaustive enumeration refused: the support space is too large.
    TooLarge(String),
    /// Design matrix is rank deficient where a unique solution is required.
    RankDeficient(String),
    /// Iterative estimation failed to converge (reported, never panicked).
    NonConvergence(String),
    DegenerateVariance(String),
    /// A requested data split leaves some cluster without rows in a partition.
    InvalidSplit(String),
    /// File-format violation: missing/duplicate columns, wrong column count.
    Schema(String),
    /// A requested outcome protein is not among the protein columns.
    UnknownProtein(String),
    /// Unparseable cell; names the row and column.
    Parse { row: usize, col: String, msg: String },
    /// No rows survive filtering (missing-value removal, role selection).
    EmptyAfterFiltering(String),
    Io(std::io::Error),
    Json(serde_json::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::LengthMismatch(m) => write!(f, "length mismatch: {m}"),
            Error::UnknownLabel(m) => write!(f, "unknown cluster label: {m}"),
            Error::EmptyCluster(m) => write!(f, "empty cluster: {m}"),
            Error::InvalidInput(m) => write!(f, "invalid input: {m}"),
            Error::SingularSystem(m) => write!(f, "singular system: {m}"),
            Error::BudgetOutOfRange(m) => write!(f, "budget out of range: {m}"),
            Error::TooLarge(m) => write!(f, "problem too large: {m}"),
            Error::RankDeficient(m) => write!(f, "rank-deficient design: {m}"),
            Error::NonConvergence(m) => write!(f, "estimation did not converge: {m}"),
            Error::DegenerateVariance(m) => write!(f, "degenerate variance: {m}"),
            Error::InvalidSplit(m) => write!(f, "invalid split: {m}"),
            Error::Schema(m) => write!(f, "schema error: {m}"),
            Error::UnknownProtein(m) => write!(f, "unknown protein: {m}"),
            Error::Parse { row, col, msg } => {
                write!(f, "parse error at data row {row}, column '{col}': {msg}")
            }
            Error::EmptyAfterFiltering(m) => write!(f, "no rows left: {m}"),
            Error::Io(e) => write!(f, "io error: {e}"),
            Error::Json(e) => write!(f, "json error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            Error::Json(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e)
    }
}
