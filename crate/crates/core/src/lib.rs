//! Hybrid LiDAR domain adaptation on range-view images.
//!
//! The crate covers the full desk-scale pipeline: spherical projection of
//! point clouds into range-view images, a synthetic two-domain LiDAR corpus,
//! an image-to-image translation engine with alternating skip connections,
//! an encoder-decoder segmentation network trained by a hybrid of
//! self-supervision, semi-supervision and unsupervised learning on translated
//! fakes, and the evaluation harness (confusion matrix, per-class IoU, mIoU,
//! domain-statistics comparisons).
//!
//! All numeric kernels are generic over the scalar type through [`Scalar`];
//! the shipped pipeline instantiates them at [`PipelineScalar`] while tests
//! and gradient checks run the same code at `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

pub mod config;
pub mod datasets;
pub mod domainstats;
pub mod error;
pub mod evaluate;
pub mod formats;
pub mod nn;
pub mod optim;
pub mod rangeview;
pub mod rng;
pub mod segmentation;
pub mod synthlidar;
pub mod tape;
pub mod tensor;
pub mod trainer;
pub mod translation;

pub use domainstats::DomainStats;
pub use error::{HyldaError, Result};
pub use rangeview::{LabelMap, NormStats, PointCloud, RangeImage, SensorModel};
pub use tensor::Tensor;

/// Floating-point scalar the numeric core is generic over: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssignOps + Sum + Default + Debug + Display + Send + Sync + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Casts an `f64` constant into the active scalar type.
pub fn scalar<S: Scalar>(x: f64) -> S {
    S::from_f64(x).expect("f64 constant representable in scalar type")
}

/// Scalar type the shipped pipeline (CLI, file formats) runs at.
pub type PipelineScalar = f32;

/// Range image at pipeline precision.
pub type RangeImage32 = rangeview::RangeImage<f32>;
/// Point cloud at pipeline precision.
pub type PointCloud32 = rangeview::PointCloud<f32>;
/// Normalization bounds at pipeline precision.
pub type NormStats32 = rangeview::NormStats<f32>;
/// Domain statistics at pipeline precision.
pub type DomainStats32 = domainstats::DomainStats<f32>;
/// Dense tensor at pipeline precision.
pub type Tensor32 = tensor::Tensor<f32>;
