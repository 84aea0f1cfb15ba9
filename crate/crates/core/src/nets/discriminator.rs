//! Conditioned patch discriminator.
//!
//! Six 4x4 convolutions with widths 64/128/256/512/512/1 and strides
//! 2/2/2/2/1/1. Spectral normalization and the 0.2-slope leaky rectifier sit
//! on layers 2-5; the first and last layers carry neither. The one-hot age
//! condition is concatenated onto the feature maps after the first layer's
//! activation, at half the input resolution. The output is an unsquashed
//! patch score map.

use ndarray::{s, Array4};
use rand::Rng;

use crate::cond::condition_batch;
use crate::error::{Error, Result};
use crate::nn::param::{join, HasParams, ParamMut, ParamRef};
use crate::nn::{Conv2d, LeakyRelu, PadMode, SpectralConv2d};
use crate::scalar::Scalar;

const SLOPE: f64 = 0.2;

#[derive(Debug, Clone)]
pub struct PatchDiscriminator<S: Scalar> {
    conv1: Conv2d<S>,
    a1: LeakyRelu<S>,
    conv2: SpectralConv2d<S>,
    a2: LeakyRelu<S>,
    conv3: SpectralConv2d<S>,
    a3: LeakyRelu<S>,
    conv4: SpectralConv2d<S>,
    a4: LeakyRelu<S>,
    conv5: SpectralConv2d<S>,
    a5: LeakyRelu<S>,
    conv6: Conv2d<S>,
    n_groups: usize,
}

impl<S: Scalar> PatchDiscriminator<S> {
    pub fn new<R: Rng>(rng: &mut R, n_groups: usize) -> Self {
        PatchDiscriminator {
            conv1: Conv2d::new(rng, 3, 64, 4, 2, 1, PadMode::Zero),
            a1: LeakyRelu::new(SLOPE),
            conv2: SpectralConv2d::new(rng, 64 + n_groups, 128, 4, 2, 1, PadMode::Zero),
            a2: LeakyRelu::new(SLOPE),
            conv3: SpectralConv2d::new(rng, 128, 256, 4, 2, 1, PadMode::Zero),
            a3: LeakyRelu::new(SLOPE),
            conv4: SpectralConv2d::new(rng, 256, 512, 4, 2, 1, PadMode::Zero),
            a4: LeakyRelu::new(SLOPE),
            conv5: SpectralConv2d::new(rng, 512, 512, 4, 1, 1, PadMode::Zero),
            a5: LeakyRelu::new(SLOPE),
            conv6: Conv2d::new(rng, 512, 1, 4, 1, 1, PadMode::Zero),
            n_groups,
        }
    }

    pub fn n_groups(&self) -> usize {
        self.n_groups
    }

    /// Spatial size of the score map for a given input size.
    pub fn score_size(input: usize) -> usize {
        let mut h = input;
        for _ in 0..4 {
            h = (h + 2 - 4) / 2 + 1;
        }
        h = (h + 2 - 4) + 1;
        (h + 2 - 4) + 1
    }

    /// One power-iteration update on every spectrally normalized layer,
    /// called once per optimization step.
    pub fn power_iterate(&mut self) {
        self.conv2.power_iterate();
        self.conv3.power_iterate();
        self.conv4.power_iterate();
        self.conv5.power_iterate();
    }

    /// Score a batch against an explicit condition tensor built at the
    /// post-layer-1 feature resolution (half the input resolution).
    pub fn forward_with_cond(
        &mut self,
        x: &Array4<S>,
        cond: &Array4<S>,
        train: bool,
    ) -> Result<Array4<S>> {
        let (b, c, h, w) = x.dim();
        if c != 3 {
            return Err(Error::invalid(format!(
                "discriminator expects 3-channel images, got {c}"
            )));
        }
        if h != w || h % 16 != 0 || h < 48 {
            return Err(Error::invalid(format!(
                "discriminator needs square inputs with size a multiple of 16 (>= 48), got {h}x{w}"
            )));
        }
        let hf = h / 2;
        let (cb, cc, ch, cw) = cond.dim();
        if cb != b || cc != self.n_groups || ch != hf || cw != hf {
            return Err(Error::invalid(format!(
                "condition shape ({cb},{cc},{ch},{cw}) does not match features \
                 ({b},{},{hf},{hf})",
                self.n_groups
            )));
        }
        let f = self.conv1.forward(x, train);
        let f = self.a1.forward(&f, train);
        let fc = ndarray::concatenate(ndarray::Axis(1), &[f.view(), cond.view()])
            .expect("concat feature maps with condition");
        let f = self.conv2.forward(&fc, train);
        let f = self.a2.forward(&f, train);
        let f = self.conv3.forward(&f, train);
        let f = self.a3.forward(&f, train);
        let f = self.conv4.forward(&f, train);
        let f = self.a4.forward(&f, train);
        let f = self.conv5.forward(&f, train);
        let f = self.a5.forward(&f, train);
        Ok(self.conv6.forward(&f, train))
    }

    /// Score a batch conditioned on per-sample target groups.
    pub fn forward(&mut self, x: &Array4<S>, groups: &[usize], train: bool) -> Result<Array4<S>> {
        let (b, _, h, _) = x.dim();
        if groups.len() != b {
            return Err(Error::invalid(format!(
                "expected {b} target groups, got {}",
                groups.len()
            )));
        }
        let cond = condition_batch::<S>(groups, self.n_groups, h / 2, h / 2)?;
        self.forward_with_cond(x, &cond, train)
    }

    /// Backward pass from score-map gradients to the input-image gradient.
    pub fn backward(&mut self, dscores: &Array4<S>, want_dx: bool, want_dw: bool) -> Option<Array4<S>> {
        let d = self.conv6.backward(dscores, true, want_dw).expect("dx requested");
        let d = self.a5.backward(&d);
        let d = self.conv5.backward(&d, true, want_dw).expect("dx requested");
        let d = self.a4.backward(&d);
        let d = self.conv4.backward(&d, true, want_dw).expect("dx requested");
        let d = self.a3.backward(&d);
        let d = self.conv3.backward(&d, true, want_dw).expect("dx requested");
        let d = self.a2.backward(&d);
        let d = self.conv2.backward(&d, true, want_dw).expect("dx requested");
        // Drop the condition channels, keep the image-feature part.
        let d_img = d.slice(s![.., 0..64, .., ..]).to_owned();
        let d = self.a1.backward(&d_img);
        self.conv1.backward(&d, want_dx, want_dw)
    }
}

impl<S: Scalar> HasParams<S> for PatchDiscriminator<S> {
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(ParamMut<'_, S>)) {
        self.conv1.visit_mut(&join(prefix, "conv1"), f);
        self.conv2.visit_mut(&join(prefix, "conv2"), f);
        self.conv3.visit_mut(&join(prefix, "conv3"), f);
        self.conv4.visit_mut(&join(prefix, "conv4"), f);
        self.conv5.visit_mut(&join(prefix, "conv5"), f);
        self.conv6.visit_mut(&join(prefix, "conv6"), f);
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(ParamRef<'_, S>)) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
        self.conv3.visit(&join(prefix, "conv3"), f);
        self.conv4.visit(&join(prefix, "conv4"), f);
        self.conv5.visit(&join(prefix, "conv5"), f);
        self.conv6.visit(&join(prefix, "conv6"), f);
    }
}
