//! Scalar abstraction over the element type of every tensor in the crate.
//!
//! All numeric code is generic over [`Scalar`], which is only implemented for
//! `f32` and `f64`. Training runs in `f32`; gradient checks and other
//! high-precision verification run the same code paths in `f64`.

use std::iter::Sum;

use ndarray::NdFloat;

/// Floating-point element type for tensors, parameters, and losses.
///
/// `NdFloat` brings in `num_traits::Float`, the assign ops, `ScalarOperand`
/// and `LinalgScalar`, so matrix products through
/// `ndarray::linalg::general_mat_mul` hit the fast `matrixmultiply` kernels
/// for both implementors.
pub trait Scalar: NdFloat + Sum + Default {
    /// Tag recorded in checkpoint headers.
    const DTYPE: &'static str;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    /// Size of one element in serialized form.
    const BYTES: usize;
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";
    const BYTES: usize = 4;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().expect("4 bytes"))
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";
    const BYTES: usize = 8;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
    }
}

/// Shorthand for lifting an `f64` constant into the active scalar type.
#[inline]
pub fn sc<S: Scalar>(v: f64) -> S {
    S::from_f64(v)
}
