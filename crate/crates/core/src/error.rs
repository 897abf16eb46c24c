use thiserror::Error;

use crate::address::Family;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("line {line}: cannot parse {text:?} as an address")]
    Parse { line: usize, text: String },

    #[error("line {line}: expected an {expected} address")]
    FamilyMismatch { line: usize, expected: Family },

    #[error("invalid prefix {0:?}")]
    InvalidPrefix(String),

    #[error("invalid universe: {0}")]
    InvalidUniverse(String),

    #[error("range start is above range end")]
    InvertedRange,

    #[error("address set is empty")]
    EmptySet,

    #[error("level {level} is outside the tree range {min}..={max}")]
    LevelOutOfRange { level: u32, min: u32, max: u32 },

    #[error("cannot split {mass} addresses into children of capacity {left} and {right}")]
    InfeasibleSplit { mass: u64, left: u128, right: u128 },

    #[error("{requested} addresses exceed the available capacity of {capacity}")]
    OverCapacity { requested: u64, capacity: u128 },

    #[error("degenerate generator: {0}")]
    DegenerateGenerator(&'static str),

    #[error("quadrature did not converge (achieved relative error {achieved:.3e})")]
    Quadrature { achieved: f64 },

    #[error("h(q) has no sign change for {side} q within |q| <= {limit}")]
    NoCriticalRoot { side: &'static str, limit: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("level {0} has no prefix with two or more addresses")]
    UnusableLevel(u32),

    #[error("q = {0} is not on the estimate's grid")]
    MissingQ(f64),

    #[error("pooled variance is zero at q = {0}")]
    DegenerateTest(f64),

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
