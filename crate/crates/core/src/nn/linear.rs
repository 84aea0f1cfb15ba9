//! Fully connected layer.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2};
use rand::Rng;

use super::init::he_normal;
use super::param::{join, HasParams, ParamKind, ParamMut, ParamRef};
use crate::scalar::Scalar;

/// `y = x W^T + b` with `W` of shape `(out, in)`.
#[derive(Debug, Clone)]
pub struct Linear<S: Scalar> {
    pub w: Array2<S>,
    pub b: Array1<S>,
    pub gw: Array2<S>,
    pub gb: Array1<S>,
    cache: Option<Array2<S>>,
}

impl<S: Scalar> Linear<S> {
    pub fn new<R: Rng>(rng: &mut R, in_dim: usize, out_dim: usize) -> Self {
        Linear {
            w: he_normal(rng, (out_dim, in_dim), in_dim),
            b: Array1::zeros(out_dim),
            gw: Array2::zeros((out_dim, in_dim)),
            gb: Array1::zeros(out_dim),
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Array2<S>, train: bool) -> Array2<S> {
        let (bs, _) = x.dim();
        let out = self.w.dim().0;
        let mut y = Array2::zeros((bs, out));
        general_mat_mul(S::one(), x, &self.w.t(), S::zero(), &mut y);
        for mut row in y.rows_mut() {
            row += &self.b;
        }
        if train {
            self.cache = Some(x.clone());
        }
        y
    }

    pub fn backward(&mut self, dy: &Array2<S>, want_dx: bool, want_dw: bool) -> Option<Array2<S>> {
        let x = self.cache.take().expect("linear backward without forward");
        if want_dw {
            general_mat_mul(S::one(), &dy.t(), &x, S::one(), &mut self.gw);
            for row in dy.rows() {
                self.gb += &row;
            }
        }
        want_dx.then(|| {
            let mut dx = Array2::zeros(x.raw_dim());
            general_mat_mul(S::one(), dy, &self.w, S::zero(), &mut dx);
            dx
        })
    }
}

impl<S: Scalar> HasParams<S> for Linear<S> {
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(ParamMut<'_, S>)) {
        f(ParamMut {
            name: join(prefix, "w"),
            kind: ParamKind::Weight,
            value: self.w.view_mut().into_dyn(),
            grad: Some(self.gw.view_mut().into_dyn()),
        });
        f(ParamMut {
            name: join(prefix, "b"),
            kind: ParamKind::Weight,
            value: self.b.view_mut().into_dyn(),
            grad: Some(self.gb.view_mut().into_dyn()),
        });
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(ParamRef<'_, S>)) {
        f(ParamRef {
            name: join(prefix, "w"),
            kind: ParamKind::Weight,
            value: self.w.view().into_dyn(),
            grad: Some(self.gw.view().into_dyn()),
        });
        f(ParamRef {
            name: join(prefix, "b"),
            kind: ParamKind::Weight,
            value: self.b.view().into_dyn(),
            grad: Some(self.gb.view().into_dyn()),
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn forward_matches_hand_computation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut lin = Linear::<f64>::new(&mut rng, 2, 3);
        lin.w = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        lin.b = array![0.5, -0.5, 0.0];
        let x = array![[1.0, -1.0]];
        let y = lin.forward(&x, false);
        assert_eq!(y, array![[-0.5, -1.5, -1.0]]);
    }

    #[test]
    fn backward_produces_expected_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut lin = Linear::<f64>::new(&mut rng, 2, 2);
        lin.w = array![[1.0, 0.0], [0.0, 1.0]];
        let x = array![[2.0, 3.0]];
        lin.forward(&x, true);
        let dy = array![[1.0, -1.0]];
        let dx = lin.backward(&dy, true, true).unwrap();
        assert_eq!(dx, array![[1.0, -1.0]]);
        assert_eq!(lin.gw, array![[2.0, 3.0], [-2.0, -3.0]]);
        assert_eq!(lin.gb, array![1.0, -1.0]);
    }
}
