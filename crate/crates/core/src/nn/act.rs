//! Elementwise activations with cached slopes for the backward pass.

use ndarray::Array4;

use crate::scalar::{sc, Scalar};

/// Leaky rectifier `y = x` for `x > 0`, `y = slope * x` otherwise.
/// `slope = 0` gives the plain rectifier.
#[derive(Debug, Clone)]
pub struct LeakyRelu<S: Scalar> {
    pub slope: S,
    cache: Option<Array4<S>>, // per-element derivative
}

impl<S: Scalar> LeakyRelu<S> {
    pub fn new(slope: f64) -> Self {
        LeakyRelu {
            slope: sc(slope),
            cache: None,
        }
    }

    pub fn relu() -> Self {
        Self::new(0.0)
    }

    pub fn forward(&mut self, x: &Array4<S>, train: bool) -> Array4<S> {
        let slope = self.slope;
        if train {
            let factors = x.mapv(|v| if v > S::zero() { S::one() } else { slope });
            self.cache = Some(factors);
        }
        x.mapv(|v| if v > S::zero() { v } else { v * slope })
    }

    pub fn backward(&mut self, dy: &Array4<S>) -> Array4<S> {
        let factors = self.cache.take().expect("activation backward without forward");
        dy * &factors
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    #[test]
    fn forward_and_backward_use_the_same_slope() {
        let x = Array4::from_shape_vec((1, 1, 1, 4), vec![-2.0f64, -0.5, 0.5, 2.0]).unwrap();
        let mut act = LeakyRelu::new(0.2);
        let y = act.forward(&x, true);
        assert_eq!(
            y.as_slice().unwrap(),
            &[-0.4, -0.1, 0.5, 2.0]
        );
        let dy = Array4::from_elem((1, 1, 1, 4), 1.0);
        let dx = act.backward(&dy);
        assert_eq!(dx.as_slice().unwrap(), &[0.2, 0.2, 1.0, 1.0]);
    }
}
