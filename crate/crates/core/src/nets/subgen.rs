//! Residual encoder-decoder sub-network producing aging effects.
//!
//! Layout: 9x9 stride-1 conv, two 4x4 stride-2 convs, four residual blocks,
//! two 4x4 stride-2 transposed convs, and a final 9x9 stride-1 conv back to
//! 3 channels. Instance normalization and a 0.2-slope leaky rectifier follow
//! every convolution except the last, which has no normalization and no
//! activation so the residual chain stays unbounded during training.
//! 9x9 and 3x3 convolutions use reflection padding, strided 4x4 ones zero
//! padding.

use ndarray::Array4;
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::param::{join, HasParams, ParamMut, ParamRef};
use crate::nn::{Conv2d, ConvTranspose2d, InstanceNorm2d, LeakyRelu, PadMode};
use crate::scalar::{sc, Scalar};

const SLOPE: f64 = 0.2;

/// Two 3x3 convolutions with an identity skip; instance norm on both,
/// activation only after the first, none after the addition.
#[derive(Debug, Clone)]
struct ResidualBlock<S: Scalar> {
    conv1: Conv2d<S>,
    norm1: InstanceNorm2d<S>,
    act1: LeakyRelu<S>,
    conv2: Conv2d<S>,
    norm2: InstanceNorm2d<S>,
}

impl<S: Scalar> ResidualBlock<S> {
    fn new<R: Rng>(rng: &mut R, channels: usize) -> Self {
        ResidualBlock {
            conv1: Conv2d::new(rng, channels, channels, 3, 1, 1, PadMode::Reflect),
            norm1: InstanceNorm2d::new(),
            act1: LeakyRelu::new(SLOPE),
            conv2: Conv2d::new(rng, channels, channels, 3, 1, 1, PadMode::Reflect),
            norm2: InstanceNorm2d::new(),
        }
    }

    fn forward(&mut self, x: &Array4<S>, train: bool) -> Array4<S> {
        let h = self.conv1.forward(x, train);
        let h = self.norm1.forward(&h, train);
        let h = self.act1.forward(&h, train);
        let h = self.conv2.forward(&h, train);
        let h = self.norm2.forward(&h, train);
        x + &h
    }

    fn backward(&mut self, dy: &Array4<S>, want_dw: bool) -> Array4<S> {
        let dh = self.norm2.backward(dy);
        let dh = self.conv2.backward(&dh, true, want_dw).expect("dx requested");
        let dh = self.act1.backward(&dh);
        let dh = self.norm1.backward(&dh);
        let dx = self.conv1.backward(&dh, true, want_dw).expect("dx requested");
        dy + &dx
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(ParamMut<'_, S>)) {
        self.conv1.visit_mut(&join(prefix, "conv1"), f);
        self.conv2.visit_mut(&join(prefix, "conv2"), f);
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(ParamRef<'_, S>)) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
    }
}

/// The aging-effects branch `G_i`. Its output is added onto the input by the
/// gated residual step, so the branch itself maps to 3 channels at the input
/// resolution.
#[derive(Debug, Clone)]
pub struct SubGenerator<S: Scalar> {
    enc1: Conv2d<S>,
    n1: InstanceNorm2d<S>,
    a1: LeakyRelu<S>,
    enc2: Conv2d<S>,
    n2: InstanceNorm2d<S>,
    a2: LeakyRelu<S>,
    enc3: Conv2d<S>,
    n3: InstanceNorm2d<S>,
    a3: LeakyRelu<S>,
    res: Vec<ResidualBlock<S>>,
    dec1: ConvTranspose2d<S>,
    n4: InstanceNorm2d<S>,
    a4: LeakyRelu<S>,
    dec2: ConvTranspose2d<S>,
    n5: InstanceNorm2d<S>,
    a5: LeakyRelu<S>,
    out: Conv2d<S>,
    in_channels: usize,
}

impl<S: Scalar> SubGenerator<S> {
    /// `in_channels` is 3 for chain sub-generators and `3 + N` for the
    /// single-step conditional variant that consumes a stacked condition.
    pub fn new<R: Rng>(rng: &mut R, in_channels: usize) -> Self {
        SubGenerator {
            enc1: Conv2d::new(rng, in_channels, 32, 9, 1, 4, PadMode::Reflect),
            n1: InstanceNorm2d::new(),
            a1: LeakyRelu::new(SLOPE),
            enc2: Conv2d::new(rng, 32, 64, 4, 2, 1, PadMode::Zero),
            n2: InstanceNorm2d::new(),
            a2: LeakyRelu::new(SLOPE),
            enc3: Conv2d::new(rng, 64, 128, 4, 2, 1, PadMode::Zero),
            n3: InstanceNorm2d::new(),
            a3: LeakyRelu::new(SLOPE),
            res: (0..4).map(|_| ResidualBlock::new(rng, 128)).collect(),
            dec1: ConvTranspose2d::new(rng, 128, 64, 4, 2, 1),
            n4: InstanceNorm2d::new(),
            a4: LeakyRelu::new(SLOPE),
            dec2: ConvTranspose2d::new(rng, 64, 32, 4, 2, 1),
            n5: InstanceNorm2d::new(),
            a5: LeakyRelu::new(SLOPE),
            out: Conv2d::new(rng, 32, 3, 9, 1, 4, PadMode::Reflect),
            in_channels,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn check_input(&self, x: &Array4<S>) -> Result<()> {
        let (_, c, h, w) = x.dim();
        if c != self.in_channels {
            return Err(Error::invalid(format!(
                "sub-generator expects {} channels, got {c}",
                self.in_channels
            )));
        }
        if h != w || h % 4 != 0 || h < 8 {
            return Err(Error::invalid(format!(
                "sub-generator needs square inputs with size a multiple of 4 (>= 8), got {h}x{w}"
            )));
        }
        Ok(())
    }

    /// Aging-effects branch `G_i(x)`: 3-channel output at input resolution.
    pub fn forward(&mut self, x: &Array4<S>, train: bool) -> Array4<S> {
        let h = self.enc1.forward(x, train);
        let h = self.n1.forward(&h, train);
        let h = self.a1.forward(&h, train);
        let h = self.enc2.forward(&h, train);
        let h = self.n2.forward(&h, train);
        let h = self.a2.forward(&h, train);
        let h = self.enc3.forward(&h, train);
        let h = self.n3.forward(&h, train);
        let mut h = self.a3.forward(&h, train);
        for block in &mut self.res {
            h = block.forward(&h, train);
        }
        let h = self.dec1.forward(&h, train);
        let h = self.n4.forward(&h, train);
        let h = self.a4.forward(&h, train);
        let h = self.dec2.forward(&h, train);
        let h = self.n5.forward(&h, train);
        let h = self.a5.forward(&h, train);
        self.out.forward(&h, train)
    }

    /// Backpropagate through the branch; returns the input gradient.
    pub fn backward(&mut self, dy: &Array4<S>, want_dx: bool, want_dw: bool) -> Option<Array4<S>> {
        let d = self.out.backward(dy, true, want_dw).expect("dx requested");
        let d = self.a5.backward(&d);
        let d = self.n5.backward(&d);
        let d = self.dec2.backward(&d, true, want_dw).expect("dx requested");
        let d = self.a4.backward(&d);
        let d = self.n4.backward(&d);
        let mut d = self.dec1.backward(&d, true, want_dw).expect("dx requested");
        for block in self.res.iter_mut().rev() {
            d = block.backward(&d, want_dw);
        }
        let d = self.a3.backward(&d);
        let d = self.n3.backward(&d);
        let d = self.enc3.backward(&d, true, want_dw).expect("dx requested");
        let d = self.a2.backward(&d);
        let d = self.n2.backward(&d);
        let d = self.enc2.backward(&d, true, want_dw).expect("dx requested");
        let d = self.a1.backward(&d);
        let d = self.n1.backward(&d);
        self.enc1.backward(&d, want_dx, want_dw)
    }
}

impl<S: Scalar> HasParams<S> for SubGenerator<S> {
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(ParamMut<'_, S>)) {
        self.enc1.visit_mut(&join(prefix, "enc1"), f);
        self.enc2.visit_mut(&join(prefix, "enc2"), f);
        self.enc3.visit_mut(&join(prefix, "enc3"), f);
        for (i, block) in self.res.iter_mut().enumerate() {
            block.visit_mut(&join(prefix, &format!("res{i}")), f);
        }
        self.dec1.visit_mut(&join(prefix, "dec1"), f);
        self.dec2.visit_mut(&join(prefix, "dec2"), f);
        self.out.visit_mut(&join(prefix, "out"), f);
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(ParamRef<'_, S>)) {
        self.enc1.visit(&join(prefix, "enc1"), f);
        self.enc2.visit(&join(prefix, "enc2"), f);
        self.enc3.visit(&join(prefix, "enc3"), f);
        for (i, block) in self.res.iter().enumerate() {
            block.visit(&join(prefix, &format!("res{i}")), f);
        }
        self.dec1.visit(&join(prefix, "dec1"), f);
        self.dec2.visit(&join(prefix, "dec2"), f);
        self.out.visit(&join(prefix, "out"), f);
    }
}

/// One gated residual step: `x + gate * G(x)`. A zero gate skips the branch
/// entirely, which also blocks gradient flow into the bypassed sub-network.
pub fn subgen_step<S: Scalar>(
    x: &Array4<S>,
    g: &mut SubGenerator<S>,
    gate: u8,
) -> Result<Array4<S>> {
    if gate == 0 {
        return Ok(x.clone());
    }
    g.check_input(x)?;
    let branch = g.forward(x, false);
    Ok(x + &branch)
}

/// Scale helper used by callers mixing gates into gradients.
pub fn scaled<S: Scalar>(x: &Array4<S>, k: f64) -> Array4<S> {
    x.mapv(|v| v * sc::<S>(k))
}
