//! Dual-subspace audio-visual cross-modal retrieval.
//!
//! Four MLP branches map audio and visual features into an explicit subspace
//! (trained for pairwise canonical correlation) and an implicit subspace
//! (trained to regress category labels), with an orthogonality penalty
//! between the two. A closed-form CCA layer fuses both subspaces into the
//! final retrieval embedding.
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the scalar for the common cases.

pub mod baselines;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod fusion;
pub mod io;
pub mod losses;
pub mod network;
pub mod numerics;
pub mod pipeline;
pub mod preprocess;
pub mod retrieval;
pub mod scalar;
pub mod trainer;

pub use error::{Error, ErrorKind, Result};
pub use scalar::Real;

pub type Matrix = numerics::Mat<f64>;
pub type Matrix32 = numerics::Mat<f32>;
pub type Dataset64 = dataset::Dataset<f64>;
pub type Dataset32 = dataset::Dataset<f32>;
pub type ModelParams64 = network::ModelParams<f64>;
pub type ModelParams32 = network::ModelParams<f32>;
pub type Model64 = pipeline::Model<f64>;
pub type Model32 = pipeline::Model<f32>;
pub type FusionTransform64 = fusion::FusionTransform<f64>;
