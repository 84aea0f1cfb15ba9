//! Progressive face aging toolkit.
//!
//! The generator is a chain of gated residual sub-networks, each learning the
//! aging effects between two adjacent age groups; a binary gate vector selects
//! which sub-networks participate in a mapping. Training is adversarial
//! (least-squares objectives, conditioned patch discriminator) with an
//! expectation-based age loss from a frozen pre-trained estimator and a mixed
//! pixel/SSIM/feature identity-consistency loss. The evaluation suite covers
//! per-group age estimation error, Pearson-correlation aging smoothness,
//! inception score, and embedding-based identity preservation.
//!
//! All numeric code is generic over [`scalar::Scalar`] (`f32` or `f64`);
//! training uses `f32`, verification code paths use `f64`.

pub mod age;
pub mod ckpt;
pub mod cond;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod gates;
pub mod image;
pub mod loss;
pub mod metrics;
pub mod nets;
pub mod nn;
pub mod scalar;
pub mod train;

pub use age::AgeGroupPartition;
pub use cond::ConditionTensor;
pub use error::{Error, Result};
pub use gates::GateVector;
pub use image::ImageBatch;
pub use scalar::Scalar;

/// Element type used for training and inference.
pub type Real = f32;
/// Element type used by gradient checks and other high-precision verification.
pub type Precise = f64;

/// Image batches at the two standard precisions.
pub type ImageBatchR = ImageBatch<Real>;
pub type TensorR = ndarray::Array4<Real>;
