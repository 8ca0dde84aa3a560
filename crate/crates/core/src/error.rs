use std::io;

use thiserror::Error;

/// Errors raised by the automaton library.
#[derive(Debug, Error)]
pub enum CpaError {
    #[error("value {value} in dimension {dim} lies outside the domain [{lower}, {upper}]")]
    DomainViolation {
        dim: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("symbol {symbol} is not valid for a partition with {count} symbols")]
    InvalidSymbol { symbol: usize, count: usize },

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("invalid interval {{{lo}, .., {hi}}}")]
    InvalidInterval { lo: i64, hi: i64 },

    #[error("window mismatch: expected {expected}, found {found}")]
    WindowMismatch { expected: String, found: String },

    #[error("pattern space too large: {base}^{len} does not fit in 64 bits")]
    PatternSpaceOverflow { base: usize, len: usize },

    #[error("density has zero total mass")]
    ZeroMass,

    #[error("invalid weight {0}: weights must be finite and nonnegative")]
    InvalidWeight(f64),

    #[error("de Bruijn density is not extendable at site {site}")]
    NonExtendable { site: i64 },

    #[error("preimage pattern {code} was never explored by the local function{}", location(*site, *step))]
    UnexploredPreimage {
        code: u64,
        site: Option<i64>,
        step: Option<usize>,
    },

    #[error("invalid automaton geometry: {0}")]
    Geometry(String),

    #[error("state space of {states} global states exceeds the limit of {limit}")]
    StateSpaceTooLarge { states: u128, limit: u128 },

    #[error("model instability at fine substep {substep}: non-finite state")]
    ModelInstability { substep: usize },

    #[error("invalid model parameters: {0}")]
    InvalidParameters(String),

    #[error("table format error: {0}")]
    Format(String),

    #[error("table does not match: {0}")]
    Mismatch(String),

    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("threshold {0} outside [0, 1)")]
    InvalidThreshold(f64),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn location(site: Option<i64>, step: Option<usize>) -> String {
    match (site, step) {
        (Some(i), Some(n)) => format!(" (site {i}, step {n})"),
        (Some(i), None) => format!(" (site {i})"),
        (None, Some(n)) => format!(" (step {n})"),
        (None, None) => String::new(),
    }
}

pub type Result<T, E = CpaError> = std::result::Result<T, E>;
