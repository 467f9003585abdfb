//! Contextual attention for hand detection, at desk scale.
//!
//! The crate bundles a small reverse-mode autodiff engine ([`tensor`]), the
//! contextual attention module ([`attention`]), the wrap-aware orientation
//! loss ([`orientation`]), keypoint-based hand annotation derivation
//! ([`annotation`]), VOC-style evaluation ([`evaluation`]) and a toy dense
//! detector trained on synthetic scenes ([`detector`]).
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the double-precision instantiation used everywhere a tolerance
//! is checked.

pub mod annotation;
pub mod attention;
pub mod checks;
pub mod detector;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod orientation;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = tensor::Tensor<f64>;
pub type Tape64 = tensor::Tape<f64>;
pub type FeatureMap64 = attention::FeatureMap<f64>;
pub type AttentionParams64 = attention::AttentionParams<f64>;
pub type DistanceTable64 = attention::DistanceTable<f64>;
pub type Angle64 = orientation::Angle<f64>;
pub type Point64 = geometry::Point2<f64>;
pub type AxisBox64 = geometry::AxisBox<f64>;
pub type Quad64 = geometry::Quad<f64>;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tape32 = tensor::Tape<f32>;
pub type AttentionParams32 = attention::AttentionParams<f32>;
