pub mod automaton;
pub mod cli;
pub mod debruijn;
pub mod densities;
pub mod error;
pub mod models;
pub mod oracle;
pub mod partition;
pub mod translator;

pub use error::{CpaError, Result};
