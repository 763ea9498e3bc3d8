//! Laboratory for hidden-layer representation characteristics of small MLPs.
//!
//! The crate is organized bottom-up:
//!
//! - [`linalg`]: dense matrices, Jacobi SVD, symmetric eigendecomposition,
//!   whitening, PCA and rank measures.
//! - [`data`]: IDX ingestion, the synthetic d-factor generator, PCA-controlled
//!   datasets, splits and minibatches.
//! - [`network`]: the trainable MLP (dropout, batch norm, three optimizers,
//!   checkpoints).
//! - [`regularize`]: the nine penalty losses and their gradients.
//! - [`metrics`]: amplitude, covariance, correlation, sparsity, dead units
//!   and rank of a captured layer.
//! - [`ion`]: output-preserving weight rewrites and comparable-performance
//!   search.
//! - [`mi`]: pairwise-divergence bounds on mixture entropy and mutual
//!   information.
//! - [`harness`]: experiment configs, runs, sweeps and CSV emission.
//!
//! Layers are numbered from 1 (first hidden layer) to `L` (output layer);
//! layer 0 denotes the input.

pub mod data;
pub mod error;
pub mod harness;
pub mod ion;
pub mod linalg;
pub mod metrics;
pub mod mi;
pub mod network;
pub mod regularize;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
pub use linalg::{EigResult, Matrix, SvdResult};

pub use data::{Dataset, SplitSpec};
pub use network::{
    Activation, ActivationCapture, LayerSpec, Mode, Network, OptimizerConfig, OptimizerKind,
    TrainConfig,
};
pub use regularize::{RegKind, RegularizerConfig};
pub use metrics::CharacteristicsReport;

pub use harness::{ExperimentConfig, Method, Preset, RunReport, SweepSpec};
