use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("integration diverged at step {step:?}: state entry {entry} became {value}")]
    Diverged {
        step: Option<usize>,
        entry: usize,
        value: f64,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite {what} at x = {x:?}")]
    Evaluation { what: &'static str, x: Vec<f64> },

    #[error("relative-degree violation: control enters the generator of b_{level} at x = {x:?} (|c1| = {magnitude:e})")]
    RelativeDegree {
        level: usize,
        x: Vec<f64>,
        magnitude: f64,
    },

    #[error("estimation error: {0}")]
    Estimation(String),

    #[error("initial state outside level set {level}: b_{level}(ξ) = {value}")]
    InvalidInitialState { level: usize, value: f64 },

    #[error("degenerate control pair in channel {channel}: |u2 - u1| = {gap:e}")]
    DegeneratePair { channel: usize, gap: f64 },

    #[error("ill-posed regression: {0}")]
    IllPosed(String),

    #[error("infeasible QP: row {row} violated by {violation:e}")]
    Infeasible { row: usize, violation: f64 },

    #[error("{0}")]
    Unsupported(String),
}
