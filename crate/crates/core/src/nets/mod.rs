//! The parametric networks: gated progressive generator, conditioned patch
//! discriminator, multi-task age estimator, and the frozen feature nets.

pub mod discriminator;
pub mod estimator;
pub mod features;
pub mod progressive;
pub mod subgen;

pub use discriminator::PatchDiscriminator;
pub use estimator::{dex_expected_age, softmax_rows, AgeEstimator, AGE_OUTPUTS};
pub use features::{FeatureNet, IdentityEmbedder};
pub use progressive::ProgressiveGenerator;
pub use subgen::{subgen_step, SubGenerator};
