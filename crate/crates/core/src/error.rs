use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {what} is {got_rows}x{got_cols}, expected {want_rows}x{want_cols}")]
    Dimension {
        what: &'static str,
        got_rows: usize,
        got_cols: usize,
        want_rows: usize,
        want_cols: usize,
    },

    #[error("m must divide n (n = {n}, m = {m})")]
    Divisibility { n: usize, m: usize },

    #[error("A is not symmetric: ||A - A^T||_F = {gap:.3e} exceeds {tol:.3e}")]
    Asymmetric { gap: f64, tol: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("negative entry {value:.3e} at ({row}, {col}); the l1/2 term is defined on X >= 0")]
    NegativeEntry { row: usize, col: usize, value: f64 },

    #[error("indicator of {0} is +inf at this point")]
    Indicator(&'static str),

    #[error("NaN produced during {0}")]
    NumericalBreakdown(&'static str),

    #[error("matrix is not an assignment matrix: {0}")]
    Infeasible(String),

    #[error("enumeration refused: n = {n} exceeds cap {cap} ({count} feasible assignments)")]
    TooLarge { n: usize, cap: usize, count: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid problem file: {0}")]
    Parse(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
