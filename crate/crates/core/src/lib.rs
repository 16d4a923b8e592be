//! Boosted cascades of Haar-feature stumps: training, multi-scale
//! detection, and counting moving objects across a virtual line.
//!
//! All real-valued math is generic over [`Scalar`] (`f32` or `f64`); the
//! `*64`/`*32` aliases below pin the common choices.

// `!(a < b)` is used on purpose so NaN falls on the rejecting side.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod boosting;
pub mod cascade;
pub mod cli;
pub mod dataset;
pub mod detector;
pub mod features;
pub mod imaging;
pub mod scalar;
pub mod tracking;
pub mod window;

pub use scalar::Scalar;

pub type HaarFeature64 = features::HaarFeature<f64>;
pub type HaarFeature32 = features::HaarFeature<f32>;
pub type StrongClassifier64 = boosting::StrongClassifier<f64>;
pub type StrongClassifier32 = boosting::StrongClassifier<f32>;
pub type Cascade64 = cascade::Cascade<f64>;
pub type Cascade32 = cascade::Cascade<f32>;
pub type Detection64 = detector::Detection<f64>;
pub type Detection32 = detector::Detection<f32>;
pub type Track64 = tracking::Track<f64>;
pub type Track32 = tracking::Track<f32>;
pub type Pipeline64 = tracking::Pipeline<f64>;
pub type Pipeline32 = tracking::Pipeline<f32>;
