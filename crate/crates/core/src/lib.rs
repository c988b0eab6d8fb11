//! Cluster-aware fusion planning for two-GEMM operator chains.
//!
//! The crate enumerates, prunes and costs fusion plans for chains of the form
//! `E = act(A·B)·D` (and the gated variant), and replays any plan at tile
//! granularity on real matrices to check numerics and per-tier byte counts.
//!
//! Numeric code is generic over [`Scalar`] (`f32`, `f64`); the aliases below
//! fix the common instantiations.

pub mod analyzer;
pub mod error;
pub mod hardware;
pub mod matrix;
pub mod plan;
pub mod scalar;
pub mod search;
pub mod simulator;
pub mod workload;

pub use error::{Error, Result};
pub use hardware::{DeviceModel, Tier};
pub use matrix::Matrix;
pub use plan::{ClusterConfig, FusionPlan, GatedLowering, LoopSchedule, TileSizes};
pub use scalar::Scalar;
pub use workload::{Activation, ChainGraph, ChainKind, Dim, DimMap, DimensionSpec};

pub type MatrixF32 = Matrix<f32>;
pub type MatrixF64 = Matrix<f64>;
