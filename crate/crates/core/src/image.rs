//! Image batch type: rank-4 `(batch, 3, h, w)` arrays in `[-1, 1]`.
//!
//! The range contract holds at module boundaries (data loading, metric and
//! display inputs). Raw network outputs may exceed it and are clipped only at
//! inference and metric boundaries, never inside the loss path.

use ndarray::Array4;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const SUPPORTED_SIZES: [usize; 3] = [64, 128, 256];

/// A batch of normalized RGB images.
#[derive(Debug, Clone)]
pub struct ImageBatch<S: Scalar>(pub Array4<S>);

impl<S: Scalar> ImageBatch<S> {
    /// Wrap an array after checking the boundary contract: 3 channels,
    /// square spatial dims of a supported size, values within `[-1, 1]`.
    pub fn new(data: Array4<S>) -> Result<Self> {
        let (_, c, h, w) = data.dim();
        if c != 3 {
            return Err(Error::invalid(format!("expected 3 channels, got {c}")));
        }
        if h != w || !SUPPORTED_SIZES.contains(&h) {
            return Err(Error::invalid(format!(
                "expected square images of size 64/128/256, got {h}x{w}"
            )));
        }
        let lo = sc_neg_one::<S>();
        let hi = S::one();
        if data.iter().any(|&v| v < lo || v > hi || !v.is_finite()) {
            return Err(Error::invalid(
                "image values must lie in [-1, 1] at module boundaries",
            ));
        }
        Ok(ImageBatch(data))
    }

    pub fn len(&self) -> usize {
        self.0.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn size(&self) -> usize {
        self.0.dim().2
    }
}

fn sc_neg_one<S: Scalar>() -> S {
    -S::one()
}

/// Clip raw network outputs into the displayable `[-1, 1]` range.
pub fn clip_unit<S: Scalar>(x: &Array4<S>) -> Array4<S> {
    let lo = -S::one();
    let hi = S::one();
    x.mapv(|v| v.max(lo).min(hi))
}
