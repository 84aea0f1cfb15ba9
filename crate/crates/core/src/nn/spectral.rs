//! Spectral normalization for convolution weights.
//!
//! The effective weight is `W / sigma(W)` where `sigma` is the largest
//! singular value of the weight viewed as an `(out_c, in_c*k*k)` matrix,
//! estimated with a persistent power-iteration vector `u`. The vector is
//! advanced once per training step via [`SpectralConv2d::power_iterate`];
//! the forward/backward passes treat the current `u` as a constant, under
//! which the gradient of `sigma` is exactly the outer product `u v^T`.

use ndarray::{Array1, Array2, Array4};
use rand::Rng;

use super::conv::{Conv2d, PadMode};
use super::init::standard_normal;
use super::param::{join, HasParams, ParamKind, ParamMut, ParamRef};
use crate::scalar::{sc, Scalar};

const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct SpectralConv2d<S: Scalar> {
    pub conv: Conv2d<S>,
    pub u: Array1<S>,
    snapshot: Option<Snapshot<S>>,
}

#[derive(Debug, Clone)]
struct Snapshot<S: Scalar> {
    w_norm: Array4<S>,
    v: Array1<S>,
    sigma: S,
}

fn l2_normalize<S: Scalar>(v: &mut Array1<S>) -> S {
    let norm = v.mapv(|x| x * x).sum().sqrt() + sc::<S>(NORM_EPS);
    v.mapv_inplace(|x| x / norm);
    norm
}

impl<S: Scalar> SpectralConv2d<S> {
    pub fn new<R: Rng>(
        rng: &mut R,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        pad: usize,
        mode: PadMode,
    ) -> Self {
        let conv = Conv2d::new(rng, in_c, out_c, k, stride, pad, mode);
        let mut u = Array1::from_shape_simple_fn(out_c, || sc::<S>(standard_normal(rng)));
        l2_normalize(&mut u);
        SpectralConv2d {
            conv,
            u,
            snapshot: None,
        }
    }

    fn flat_weight(&self) -> Array2<S> {
        let (oc, ic, k, _) = self.conv.w.dim();
        self.conv
            .w
            .view()
            .into_shape_with_order((oc, ic * k * k))
            .expect("weight contiguous")
            .to_owned()
    }

    /// One power-iteration update of `u`. Called once per optimization step.
    pub fn power_iterate(&mut self) {
        let w2 = self.flat_weight();
        let mut v = w2.t().dot(&self.u);
        l2_normalize(&mut v);
        let mut u = w2.dot(&v);
        l2_normalize(&mut u);
        self.u = u;
    }

    /// `sigma` and the normalized weight for the current `u`.
    fn normalized(&self) -> Snapshot<S> {
        let w2 = self.flat_weight();
        let mut v = w2.t().dot(&self.u);
        let sigma = l2_normalize(&mut v); // ||W^T u|| = u^T W v
        let w_norm = self.conv.w.mapv(|x| x / sigma);
        Snapshot { w_norm, v, sigma }
    }

    pub fn sigma(&self) -> S {
        self.normalized().sigma
    }

    pub fn forward(&mut self, x: &Array4<S>, train: bool) -> Array4<S> {
        let snap = self.normalized();
        let y = self.conv.forward_with(x, &snap.w_norm, train);
        if train {
            self.snapshot = Some(snap);
        }
        y
    }

    pub fn backward(&mut self, dy: &Array4<S>, want_dx: bool, want_dw: bool) -> Option<Array4<S>> {
        let snap = self
            .snapshot
            .take()
            .expect("spectral backward without forward");

        if !want_dw {
            return self.conv.backward_with(dy, &snap.w_norm, want_dx, None);
        }
        let mut g_eff = Array4::zeros(self.conv.w.raw_dim());
        let dx = self
            .conv
            .backward_with(dy, &snap.w_norm, want_dx, Some(&mut g_eff));

        // dL/dW = (G - <G, W_norm> u v^T) / sigma for G = dL/dW_norm.
        let dot = (&g_eff * &snap.w_norm).sum();
        let (oc, ic, k, _) = self.conv.w.dim();
        let mut gw = g_eff;
        {
            let mut gw2 = gw
                .view_mut()
                .into_shape_with_order((oc, ic * k * k))
                .expect("gw contiguous");
            for o in 0..oc {
                let uo = self.u[o] * dot;
                let mut row = gw2.row_mut(o);
                row.zip_mut_with(&snap.v, |g, &vv| *g = (*g - uo * vv) / snap.sigma);
            }
        }
        self.conv.gw += &gw;
        dx
    }
}

impl<S: Scalar> HasParams<S> for SpectralConv2d<S> {
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(ParamMut<'_, S>)) {
        self.conv.visit_mut(prefix, f);
        f(ParamMut {
            name: join(prefix, "u"),
            kind: ParamKind::Buffer,
            value: self.u.view_mut().into_dyn(),
            grad: None,
        });
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(ParamRef<'_, S>)) {
        self.conv.visit(prefix, f);
        f(ParamRef {
            name: join(prefix, "u"),
            kind: ParamKind::Buffer,
            value: self.u.view().into_dyn(),
            grad: None,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn power_iteration_converges_to_largest_singular_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut layer = SpectralConv2d::<f64>::new(&mut rng, 2, 3, 3, 1, 1, PadMode::Zero);
        for _ in 0..200 {
            layer.power_iterate();
        }
        let sigma = layer.sigma();

        // Oracle: sigma(W)^2 is the largest eigenvalue of W W^T, found by
        // dense power iteration on the 3x3 Gram matrix.
        let w2 = layer.flat_weight();
        let gram = w2.dot(&w2.t());
        let mut v = Array1::from_elem(3, 1.0);
        for _ in 0..500 {
            v = gram.dot(&v);
            l2_normalize(&mut v);
        }
        let lambda = v.dot(&gram.dot(&v));
        assert!((sigma * sigma - lambda).abs() < 1e-8, "{} vs {}", sigma * sigma, lambda);
    }

    #[test]
    fn normalized_weight_has_unit_spectral_norm_estimate() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut layer = SpectralConv2d::<f64>::new(&mut rng, 3, 4, 4, 2, 1, PadMode::Zero);
        for _ in 0..100 {
            layer.power_iterate();
        }
        let snap = layer.normalized();
        let w2 = snap
            .w_norm
            .view()
            .into_shape_with_order((4, 3 * 16))
            .unwrap()
            .to_owned();
        let mut v = w2.t().dot(&layer.u);
        let sigma_n = l2_normalize(&mut v);
        assert!((sigma_n - 1.0).abs() < 1e-10);
    }
}
