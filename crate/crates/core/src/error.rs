use thiserror::Error;

use crate::solver::Trajectory;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("field has {got} samples, grid expects {expected}")]
    LengthMismatch { got: usize, expected: usize },

    #[error("derivative order must be positive, got {0}")]
    InvalidOrder(i32),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("mollification scale eps = {0} must lie in (0, 1]")]
    InvalidEps(f64),

    #[error("mollification scale eps = {eps} is under-resolved, need eps >= 2h = {min}")]
    Unresolved { eps: f64, min: f64 },

    #[error("box half-width L = {0} too small, the kernel support B(0,1) needs L >= 2")]
    BoxTooSmall(f64),

    #[error("exponential overflow: max |a*Y| = {0} exceeds 700")]
    Overflow(f64),

    #[error("grid with N = {0} is too coarse for three dyadic blocks")]
    PartitionTooCoarse(usize),

    #[error("Littlewood-Paley block {j} out of range -1..={j_max}")]
    BlockOutOfRange { j: i32, j_max: i32 },

    #[error("invalid norm request: {0}")]
    InvalidNorm(String),

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("numerical abort at t = {t}: {reason}")]
    NumericAbort {
        t: f64,
        reason: String,
        partial: Box<Trajectory>,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
