//! Spatially tiled one-hot condition tensors.
//!
//! A target group `t` among `N` groups is encoded as an `N x h x w` tensor
//! whose channel `t-1` is all ones and whose other channels are all zeros.
//! The discriminator concatenates this onto its feature maps; the single-step
//! conditional generator concatenates it onto the input image.

use ndarray::{Array3, Array4, Axis};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One-hot condition plane stack for one sample.
#[derive(Debug, Clone)]
pub struct ConditionTensor<S: Scalar> {
    data: Array3<S>,
    group: usize,
}

impl<S: Scalar> ConditionTensor<S> {
    /// Encode target group `t` (1-based) among `n` groups at `h x w`.
    pub fn new(t: usize, n: usize, h: usize, w: usize) -> Result<Self> {
        if t < 1 || t > n {
            return Err(Error::invalid(format!(
                "target group {t} out of range 1..={n}"
            )));
        }
        let mut data = Array3::zeros((n, h, w));
        data.index_axis_mut(Axis(0), t - 1).fill(S::one());
        Ok(ConditionTensor { data, group: t })
    }

    pub fn data(&self) -> &Array3<S> {
        &self.data
    }

    pub fn group(&self) -> usize {
        self.group
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[0]
    }
}

/// Batched condition tensor: one one-hot plane stack per sample.
pub fn condition_batch<S: Scalar>(
    groups: &[usize],
    n: usize,
    h: usize,
    w: usize,
) -> Result<Array4<S>> {
    let mut out = Array4::zeros((groups.len(), n, h, w));
    for (b, &t) in groups.iter().enumerate() {
        if t < 1 || t > n {
            return Err(Error::invalid(format!(
                "target group {t} out of range 1..={n}"
            )));
        }
        out.index_axis_mut(Axis(0), b)
            .index_axis_mut(Axis(0), t - 1)
            .fill(S::one());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_hot_planes() {
        let c = ConditionTensor::<f32>::new(1, 4, 8, 8).unwrap();
        assert_eq!(c.data().index_axis(Axis(0), 0).sum(), 64.0);
        for ch in 1..4 {
            assert_eq!(c.data().index_axis(Axis(0), ch).sum(), 0.0);
        }

        let c = ConditionTensor::<f32>::new(4, 4, 8, 8).unwrap();
        assert_eq!(c.data().index_axis(Axis(0), 3).sum(), 64.0);
    }

    #[test]
    fn channel_sums_are_partition_of_unity() {
        for t in 1..=4 {
            let c = ConditionTensor::<f64>::new(t, 4, 5, 7).unwrap();
            let summed = c.data().sum_axis(Axis(0));
            assert!(summed.iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn rejects_out_of_range_group() {
        assert!(ConditionTensor::<f32>::new(0, 4, 8, 8).is_err());
        assert!(ConditionTensor::<f32>::new(5, 4, 8, 8).is_err());
    }

    #[test]
    fn batch_layout_matches_per_sample_layout() {
        let batch = condition_batch::<f32>(&[2, 4], 4, 3, 3).unwrap();
        let single = ConditionTensor::<f32>::new(2, 4, 3, 3).unwrap();
        assert_eq!(batch.index_axis(Axis(0), 0), single.data().view());
        assert_eq!(batch[[1, 3, 0, 0]], 1.0);
        assert_eq!(batch[[1, 1, 0, 0]], 0.0);
    }
}
