//! Multi-task age estimation network.
//!
//! Six 4x4 stride-2 convolutions (widths 64/128/256/512/512/512, batch norm
//! and rectifier on each) feed a linear head with 101 outputs, one logit per
//! whole-year age from 0 to 100. A second linear head maps those 101 logits
//! to `N` age-group logits for the classification task. The estimated age is
//! the softmax expected value over the 101 logits.

use ndarray::{Array1, Array2, Array4};
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::param::{join, HasParams, ParamMut, ParamRef};
use crate::nn::{BatchNorm2d, Conv2d, LeakyRelu, Linear, PadMode};
use crate::scalar::{sc, Scalar};

pub const AGE_OUTPUTS: usize = 101;

/// Row-wise softmax.
pub fn softmax_rows<S: Scalar>(logits: &Array2<S>) -> Array2<S> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(S::neg_infinity(), S::max);
        let mut sum = S::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    out
}

/// Softmax expected value over per-year logits: one age in `[0, 100]` per row.
pub fn dex_expected_age<S: Scalar>(age_logits: &Array2<S>) -> Array1<S> {
    let probs = softmax_rows(age_logits);
    let mut out = Array1::zeros(probs.dim().0);
    for (i, row) in probs.rows().into_iter().enumerate() {
        let mut acc = S::zero();
        for (year, &p) in row.iter().enumerate() {
            acc += sc::<S>(year as f64) * p;
        }
        out[i] = acc;
    }
    out
}

#[derive(Clone)]
struct ConvBlock<S: Scalar> {
    conv: Conv2d<S>,
    norm: BatchNorm2d<S>,
    act: LeakyRelu<S>,
}

impl<S: Scalar> ConvBlock<S> {
    fn new<R: Rng>(rng: &mut R, in_c: usize, out_c: usize) -> Self {
        ConvBlock {
            conv: Conv2d::new(rng, in_c, out_c, 4, 2, 1, PadMode::Zero),
            norm: BatchNorm2d::new(out_c),
            act: LeakyRelu::relu(),
        }
    }

    fn forward(&mut self, x: &Array4<S>, train: bool) -> Array4<S> {
        // Caches are always kept so that input gradients can flow through
        // the frozen estimator during generator updates (eval-mode stats).
        let h = self.conv.forward(x, true);
        let h = self.norm.forward(&h, train);
        self.act.forward(&h, true)
    }

    fn backward(&mut self, dy: &Array4<S>, want_dx: bool, want_dw: bool) -> Option<Array4<S>> {
        let d = self.act.backward(dy);
        let d = self.norm.backward(&d, want_dw);
        self.conv.backward(&d, want_dx, want_dw)
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(ParamMut<'_, S>)) {
        self.conv.visit_mut(&join(prefix, "conv"), f);
        self.norm.visit_mut(&join(prefix, "norm"), f);
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(ParamRef<'_, S>)) {
        self.conv.visit(&join(prefix, "conv"), f);
        self.norm.visit(&join(prefix, "norm"), f);
    }
}

#[derive(Clone)]
pub struct AgeEstimator<S: Scalar> {
    blocks: Vec<ConvBlock<S>>,
    fc_age: Linear<S>,
    fc_group: Linear<S>,
    image_size: usize,
    n_groups: usize,
    feat_dim: usize,
}

impl<S: Scalar> AgeEstimator<S> {
    pub fn new<R: Rng>(rng: &mut R, image_size: usize, n_groups: usize) -> Result<Self> {
        if image_size % 64 != 0 || image_size < 64 {
            return Err(Error::invalid(format!(
                "age estimator needs an image size that is a multiple of 64, got {image_size}"
            )));
        }
        let widths = [64usize, 128, 256, 512, 512, 512];
        let mut blocks = Vec::with_capacity(6);
        let mut in_c = 3;
        for &w in &widths {
            blocks.push(ConvBlock::new(rng, in_c, w));
            in_c = w;
        }
        let spatial = image_size / 64;
        let feat_dim = 512 * spatial * spatial;
        Ok(AgeEstimator {
            blocks,
            fc_age: Linear::new(rng, feat_dim, AGE_OUTPUTS),
            fc_group: Linear::new(rng, AGE_OUTPUTS, n_groups),
            image_size,
            n_groups,
            feat_dim,
        })
    }

    pub fn image_size(&self) -> usize {
        self.image_size
    }

    pub fn n_groups(&self) -> usize {
        self.n_groups
    }

    /// Age logits (per-year) and group logits. `train` selects batch-norm
    /// batch statistics; the frozen estimator runs with `train = false`.
    pub fn forward(&mut self, x: &Array4<S>, train: bool) -> Result<(Array2<S>, Array2<S>)> {
        let (b, c, h, w) = x.dim();
        if c != 3 || h != self.image_size || w != self.image_size {
            return Err(Error::invalid(format!(
                "age estimator expects (b, 3, {0}, {0}), got ({b}, {c}, {h}, {w})",
                self.image_size
            )));
        }
        let mut f = x.clone();
        for block in &mut self.blocks {
            f = block.forward(&f, train);
        }
        let flat = f
            .into_shape_with_order((b, self.feat_dim))
            .expect("contiguous features");
        let age_logits = self.fc_age.forward(&flat, true);
        let group_logits = self.fc_group.forward(&age_logits, true);
        Ok((age_logits, group_logits))
    }

    /// Backward from gradients on both heads. The group head feeds from the
    /// age logits, so its gradient flows into the age head as well.
    pub fn backward(
        &mut self,
        d_age_logits: &Array2<S>,
        d_group_logits: &Array2<S>,
        want_dx: bool,
        want_dw: bool,
    ) -> Option<Array4<S>> {
        let b = d_age_logits.dim().0;
        let d_from_group = self
            .fc_group
            .backward(d_group_logits, true, want_dw)
            .expect("dx requested");
        let d_age_total = d_age_logits + &d_from_group;
        let d_flat = self
            .fc_age
            .backward(&d_age_total, true, want_dw)
            .expect("dx requested");
        let spatial = self.image_size / 64;
        let mut d = d_flat
            .into_shape_with_order((b, 512, spatial, spatial))
            .expect("contiguous features");
        for (i, block) in self.blocks.iter_mut().enumerate().rev() {
            let dx_wanted = want_dx || i > 0;
            match block.backward(&d, dx_wanted, want_dw) {
                Some(next) => d = next,
                None => return None,
            }
        }
        Some(d)
    }

    /// Expected age, per-year logits, and group logits for a batch.
    pub fn estimate(&mut self, x: &Array4<S>) -> Result<(Array1<S>, Array2<S>, Array2<S>)> {
        let (age_logits, group_logits) = self.forward(x, false)?;
        Ok((dex_expected_age(&age_logits), age_logits, group_logits))
    }

    /// Gradient of the expected age with respect to the age logits:
    /// `d(expected)/d(logit_j) = p_j (j - expected)`.
    pub fn expected_age_grad(age_logits: &Array2<S>, upstream: &Array1<S>) -> Array2<S> {
        let probs = softmax_rows(age_logits);
        let expected = dex_expected_age(age_logits);
        let mut out = probs;
        for (i, mut row) in out.rows_mut().into_iter().enumerate() {
            let e = expected[i];
            let u = upstream[i];
            for (year, v) in row.iter_mut().enumerate() {
                *v = u * *v * (sc::<S>(year as f64) - e);
            }
        }
        out
    }
}

impl<S: Scalar> HasParams<S> for AgeEstimator<S> {
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(ParamMut<'_, S>)) {
        for (i, block) in self.blocks.iter_mut().enumerate() {
            block.visit_mut(&join(prefix, &format!("block{}", i + 1)), f);
        }
        self.fc_age.visit_mut(&join(prefix, "fc_age"), f);
        self.fc_group.visit_mut(&join(prefix, "fc_group"), f);
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(ParamRef<'_, S>)) {
        for (i, block) in self.blocks.iter().enumerate() {
            block.visit(&join(prefix, &format!("block{}", i + 1)), f);
        }
        self.fc_age.visit(&join(prefix, "fc_age"), f);
        self.fc_group.visit(&join(prefix, "fc_group"), f);
    }
}
