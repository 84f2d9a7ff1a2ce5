//! curricuids: curriculum-trained intrusion detection for IoT flow data.
//!
//! The crate trains a compact recurrent/attention binary classifier in
//! difficulty-ordered stages, prunes its feature set with LIME-based
//! un-learning, compresses the result for edge deployment, and stacks it
//! with tree ensembles. Core numerics are generic over the scalar type
//! ([`Scalar`]): training runs in `f64`, compressed inference in `f32`.

pub mod ablation;
pub mod autodiff;
pub mod cli;
pub mod compress;
pub mod curriculum;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod xai;
pub mod optim;
pub mod params;
pub mod pipeline;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Training-precision tensor.
pub type Tensor64 = tensor::Tensor<f64>;
/// Deployment-precision tensor.
pub type Tensor32 = tensor::Tensor<f32>;
/// Training-precision model (gradient checks need f64).
pub type IdsModel64 = model::IdsModel<f64>;
/// Deployment-precision model (dequantized checkpoints run in f32).
pub type IdsModel32 = model::IdsModel<f32>;
