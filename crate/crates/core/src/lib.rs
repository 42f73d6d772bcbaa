//! Point-cloud completion with proxy features and a missing-part sensitive
//! transformer.
//!
//! The core is generic over the scalar type ([`Real`], implemented for `f32`
//! and `f64`); aliases below fix the common choices.

pub mod data;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Real;

pub type PointCloud64 = geometry::PointCloud<f64>;
pub type PointCloud32 = geometry::PointCloud<f32>;
pub type Tensor64 = nn::Tensor<f64>;
pub type Tensor32 = nn::Tensor<f32>;
pub type Graph64 = nn::Graph<f64>;
pub type Graph32 = nn::Graph<f32>;
pub type ParameterStore64 = nn::ParameterStore<f64>;
pub type ParameterStore32 = nn::ParameterStore<f32>;
