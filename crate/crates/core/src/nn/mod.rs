//! Neural network building blocks with hand-written backward passes.

pub mod act;
pub mod adam;
pub mod conv;
pub mod gradcheck;
pub mod init;
pub mod linear;
pub mod norm;
pub mod param;
pub mod spectral;

pub use act::LeakyRelu;
pub use adam::Adam;
pub use conv::{Conv2d, ConvTranspose2d, PadMode};
pub use linear::Linear;
pub use norm::{BatchNorm2d, InstanceNorm2d};
pub use param::{HasParams, ParamKind, ParamMut, ParamRef};
pub use spectral::SpectralConv2d;
