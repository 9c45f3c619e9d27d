//! Error type shared by all modules.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("non-finite field")]
    NonFiniteField,

    #[error("kernel not PSD: {0}")]
    KernelNotPsd(String),

    #[error("initial condition not nonnegative")]
    NotNonnegative,

    #[error("not in the positive cone")]
    NotInPositiveCone,

    #[error("kernel positivity violated at ({row}, {col}): {value:e}; refine dt")]
    KernelPositivityViolated { row: usize, col: usize, value: f64 },

    #[error("positivity lost at t = {0}")]
    PositivityLost(f64),

    #[error("eta above admissible threshold: eta = {eta}, eta0 = {eta0}")]
    EtaAboveThreshold { eta: f64, eta0: f64 },

    #[error("ensemble unreliable: {excluded} of {total} paths excluded")]
    EnsembleUnreliable { excluded: usize, total: usize },

    #[error("no contraction observed: fitted rate {0}")]
    NoContractionObserved(f64),

    #[error("stopping cascade: {segments} segments before t = {time}; retune eps")]
    StoppingCascade { segments: usize, time: f64 },

    #[error("unknown experiment name: {0}")]
    UnknownExperiment(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("nondeterminism detected: artifact {0} differs between runs")]
    Nondeterminism(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl LabError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        LabError::Io { path: path.into(), source }
    }
}
