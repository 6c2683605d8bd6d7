//! Refinement of photogrammetric digital surface models with a conditional
//! adversarial network that fuses a height raster with a panchromatic image.
//!
//! The crate covers the whole pipeline: synthetic scene generation
//! ([`synthcity`]), patch sampling and stitching ([`tiling`]), a small
//! reverse-mode tensor library ([`tensor`]), the generator and discriminator
//! variants ([`network`]), the training objective ([`objective`]),
//! alternating adversarial training and full-scene inference ([`trainer`]),
//! and height-error metrics ([`evalmetrics`]).
//!
//! Numeric code is generic over [`Scalar`]; training uses `f32` and
//! gradient verification uses `f64`.

pub mod error;
pub mod evalmetrics;
pub mod network;
pub mod objective;
pub mod raster;
pub mod scalar;
pub mod synthcity;
pub mod tensor;
pub mod tiling;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Single-precision tensor used for training and inference.
pub type Tensor32 = tensor::Tensor<f32>;
/// Double-precision tensor used for gradient checks.
pub type Tensor64 = tensor::Tensor<f64>;
pub type Graph32 = tensor::Graph<f32>;
pub type Graph64 = tensor::Graph<f64>;
pub type ParamStore32 = tensor::ParamStore<f32>;
pub type ParamStore64 = tensor::ParamStore<f64>;
