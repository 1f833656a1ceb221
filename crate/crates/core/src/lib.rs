//! Group-recognition machinery for transformer-based social group activity
//! recognition: group queries, divided self-attention, deformable decoding,
//! set-matching losses, member identification and evaluation metrics.
//!
//! Numeric kernels are generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the scalar for the common cases. Scene data and losses work in
//! `f64`.

pub mod assignment;
pub mod bench;
pub mod converge;
pub mod decoder;
pub mod error;
pub mod members;
pub mod metrics;
pub mod query;
pub mod rng;
pub mod scalar;
pub mod scene;
pub mod synth;
pub mod tensor;
pub mod weights;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Matrix = tensor::Matrix2D<f64>;
pub type MatrixF32 = tensor::Matrix2D<f32>;
pub type FeatureMap = tensor::FeatureMap<f64>;
pub type FeatureMapF32 = tensor::FeatureMap<f32>;
pub type FeatureMapSet = tensor::FeatureMapSet<f64>;
pub type FeatureMapSetF32 = tensor::FeatureMapSet<f32>;
pub type GroupQuerySet = query::GroupQuerySet<f64>;
pub type GroupFeatureSet = decoder::GroupFeatureSet<f64>;
pub type Model = decoder::Model<f64>;
pub type ModelF32 = decoder::Model<f32>;
