//! Frozen convolutional feature maps.
//!
//! [`FeatureNet`] is the pluggable extractor behind the feature-level
//! identity loss: a seeded, randomly initialized stack of ten 3x3
//! convolutions, tapped at the activation output of the last layer. Being
//! deterministic and frozen, identical inputs always yield identical
//! features; a pretrained checkpoint can be loaded over the random weights
//! through the usual checkpoint machinery.
//!
//! [`IdentityEmbedder`] turns the same kind of stack into a face embedding
//! for the identity-preservation metric: inputs are high-pass filtered (a
//! local-mean subtraction, so global illumination shifts do not register as
//! identity changes), pooled over space and L2-normalized, with cosine
//! similarity as the verification score.

use ndarray::{Array1, Array2, Array4, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::nn::param::{join, HasParams, ParamMut, ParamRef};
use crate::nn::{Conv2d, LeakyRelu, PadMode};
use crate::scalar::{sc, Scalar};

const SLOPE: f64 = 0.2;

#[derive(Debug, Clone)]
pub struct FeatureNet<S: Scalar> {
    layers: Vec<(Conv2d<S>, LeakyRelu<S>)>,
}

impl<S: Scalar> FeatureNet<S> {
    /// The default ten-layer extractor, reproducible from `seed`.
    pub fn from_seed(seed: u64) -> Self {
        let widths = [16usize, 16, 32, 32, 64, 64, 64, 64, 64, 64];
        let strides = [2usize, 1, 2, 1, 2, 1, 1, 1, 1, 1];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(widths.len());
        let mut in_c = 3;
        for (&w, &s) in widths.iter().zip(&strides) {
            layers.push((
                Conv2d::new(&mut rng, in_c, w, 3, s, 1, PadMode::Zero),
                LeakyRelu::new(SLOPE),
            ));
            in_c = w;
        }
        FeatureNet { layers }
    }

    pub fn forward(&mut self, x: &Array4<S>, train: bool) -> Array4<S> {
        let mut f = x.clone();
        for (conv, act) in &mut self.layers {
            f = conv.forward(&f, train);
            f = act.forward(&f, train);
        }
        f
    }

    /// Input gradient only; the extractor itself is frozen.
    pub fn backward_input(&mut self, dfeat: &Array4<S>) -> Array4<S> {
        let mut d = dfeat.clone();
        for (i, (conv, act)) in self.layers.iter_mut().enumerate().rev() {
            d = act.backward(&d);
            d = conv
                .backward(&d, true, false)
                .expect("dx requested");
            let _ = i;
        }
        d
    }
}

impl<S: Scalar> HasParams<S> for FeatureNet<S> {
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(ParamMut<'_, S>)) {
        for (i, (conv, _)) in self.layers.iter_mut().enumerate() {
            conv.visit_mut(&join(prefix, &format!("conv{}", i + 1)), f);
        }
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(ParamRef<'_, S>)) {
        for (i, (conv, _)) in self.layers.iter().enumerate() {
            conv.visit(&join(prefix, &format!("conv{}", i + 1)), f);
        }
    }
}

/// Subtract a 5x5 local mean (reflect-padded box filter) from every channel.
pub fn highpass<S: Scalar>(x: &Array4<S>) -> Array4<S> {
    let k = 5usize;
    let p = k / 2;
    let xp = crate::nn::conv::pad4(x, p, PadMode::Reflect);
    let (b, c, h, w) = x.dim();
    let inv = sc::<S>(1.0 / (k * k) as f64);
    let mut out = x.clone();
    for bi in 0..b {
        for ci in 0..c {
            for i in 0..h {
                for j in 0..w {
                    let mut acc = S::zero();
                    for a in 0..k {
                        for bb in 0..k {
                            acc += xp[[bi, ci, i + a, j + bb]];
                        }
                    }
                    out[[bi, ci, i, j]] = x[[bi, ci, i, j]] - acc * inv;
                }
            }
        }
    }
    out
}

/// Frozen face embedder: high-pass input, feature stack, global average
/// pooling, L2 normalization.
#[derive(Debug, Clone)]
pub struct IdentityEmbedder<S: Scalar> {
    net: FeatureNet<S>,
}

impl<S: Scalar> IdentityEmbedder<S> {
    pub fn from_seed(seed: u64) -> Self {
        IdentityEmbedder {
            net: FeatureNet::from_seed(seed),
        }
    }

    /// One L2-normalized embedding row per sample.
    pub fn embed(&mut self, x: &Array4<S>) -> Array2<S> {
        let hp = highpass(x);
        let f = self.net.forward(&hp, false);
        let (b, c, fh, fw) = f.dim();
        let inv_area = sc::<S>(1.0 / (fh * fw) as f64);
        let mut out = Array2::zeros((b, c));
        for bi in 0..b {
            for ci in 0..c {
                let plane = f.index_axis(Axis(0), bi);
                out[[bi, ci]] = plane.index_axis(Axis(0), ci).sum() * inv_area;
            }
        }
        for mut row in out.rows_mut() {
            let norm = row.iter().map(|&v| v * v).sum::<S>().sqrt() + sc::<S>(1e-12);
            row.mapv_inplace(|v| v / norm);
        }
        out
    }

    /// Cosine similarity between paired rows of two embedding matrices.
    pub fn cosine(a: &Array2<S>, b: &Array2<S>) -> Array1<S> {
        assert_eq!(a.dim(), b.dim());
        let mut out = Array1::zeros(a.dim().0);
        for (i, (ra, rb)) in a.rows().into_iter().zip(b.rows()).enumerate() {
            out[i] = ra.iter().zip(rb.iter()).map(|(&x, &y)| x * y).sum();
        }
        out
    }
}
