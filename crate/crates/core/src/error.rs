use thiserror::Error;

use crate::hardware::Tier;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid dimension {name}={value}: {reason}")]
    InvalidDimension {
        name: &'static str,
        value: u64,
        reason: &'static str,
    },
    #[error("unsupported conv chain: {0}")]
    UnsupportedConvChain(String),
    #[error("unknown preset '{0}'")]
    UnknownPreset(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid device profile: {}", .0.join("; "))]
    InvalidProfile(Vec<String>),
    #[error("cluster of {blocks} blocks exceeds device limit {limit}")]
    ClusterTooLarge { blocks: u64, limit: u64 },
    #[error("infeasible cluster ({m},{n},{k},{l}): {reason}")]
    InfeasibleCluster {
        m: u64,
        n: u64,
        k: u64,
        l: u64,
        reason: &'static str,
    },
    #[error("invalid plan: {}", .0.join("; "))]
    InvalidPlan(Vec<String>),
    #[error("tensor {tensor} needs {needed} bytes below its spill floor {floor}")]
    CapacityExceeded {
        tensor: String,
        floor: Tier,
        needed: u64,
    },
    #[error("io_traffic is defined for input/output tensors, {0} is an intermediate")]
    WrongTensorClass(String),
    #[error("search space is empty after {stage}")]
    EmptySpace { stage: String },
    #[error("problem needs {needed} bytes, simulator budget is {budget} bytes")]
    SimulationTooLarge { needed: u64, budget: u64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("{0}")]
    Usage(String),
    #[error("json: {0}")]
    Json(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e.to_string())
    }
}
