//! Instance and batch normalization.

use ndarray::{Array1, Array4, Axis};

use super::param::{join, HasParams, ParamKind, ParamMut, ParamRef};
use crate::scalar::{sc, Scalar};

const EPS: f64 = 1e-5;

/// Instance normalization without learned affine parameters: each
/// `(sample, channel)` plane is standardized over its spatial extent.
#[derive(Debug, Clone, Default)]
pub struct InstanceNorm2d<S: Scalar> {
    cache: Option<(Array4<S>, Vec<S>)>, // normalized activations, inv-std per (b, c)
}

impl<S: Scalar> InstanceNorm2d<S> {
    pub fn new() -> Self {
        InstanceNorm2d { cache: None }
    }

    pub fn forward(&mut self, x: &Array4<S>, train: bool) -> Array4<S> {
        let (b, c, h, w) = x.dim();
        let n = sc::<S>((h * w) as f64);
        let eps = sc::<S>(EPS);
        let mut y = x.clone();
        let mut inv_stds = Vec::with_capacity(b * c);
        for bi in 0..b {
            for ci in 0..c {
                let mut plane = y.index_axis_mut(Axis(0), bi);
                let mut plane = plane.index_axis_mut(Axis(0), ci);
                let data = plane.as_slice_mut().expect("plane contiguous");
                let mut sum = S::zero();
                let mut sq = S::zero();
                for &v in data.iter() {
                    sum += v;
                    sq += v * v;
                }
                let mean = sum / n;
                let var = sq / n - mean * mean;
                let istd = (var + eps).sqrt().recip();
                for v in data.iter_mut() {
                    *v = (*v - mean) * istd;
                }
                inv_stds.push(istd);
            }
        }
        if train {
            self.cache = Some((y.clone(), inv_stds));
        }
        y
    }

    pub fn backward(&mut self, dy: &Array4<S>) -> Array4<S> {
        let (xhat, inv_stds) = self.cache.take().expect("norm backward without forward");
        let (b, c, h, w) = dy.dim();
        let n = sc::<S>((h * w) as f64);
        let mut dx = dy.clone();
        for bi in 0..b {
            for ci in 0..c {
                let istd = inv_stds[bi * c + ci];
                let xh = xhat.index_axis(Axis(0), bi);
                let xh = xh.index_axis(Axis(0), ci);
                let xh = xh.as_slice().expect("plane contiguous");
                let mut plane = dx.index_axis_mut(Axis(0), bi);
                let mut plane = plane.index_axis_mut(Axis(0), ci);
                let g = plane.as_slice_mut().expect("plane contiguous");
                let mut gsum = S::zero();
                let mut gdot = S::zero();
                for (gv, xv) in g.iter().zip(xh) {
                    gsum += *gv;
                    gdot += *gv * *xv;
                }
                let gmean = gsum / n;
                let gdot_mean = gdot / n;
                for (gv, xv) in g.iter_mut().zip(xh) {
                    *gv = istd * (*gv - gmean - *xv * gdot_mean);
                }
            }
        }
        dx
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BnMode {
    Train,
    Eval,
}

/// Batch normalization with affine parameters and running statistics.
///
/// Training mode normalizes with batch statistics and updates the running
/// estimates; eval mode (used by the frozen age estimator inside GAN
/// training) normalizes with the stored running statistics only.
#[derive(Debug, Clone)]
pub struct BatchNorm2d<S: Scalar> {
    pub gamma: Array1<S>,
    pub beta: Array1<S>,
    pub g_gamma: Array1<S>,
    pub g_beta: Array1<S>,
    pub running_mean: Array1<S>,
    pub running_var: Array1<S>,
    pub momentum: S,
    cache: Option<(Array4<S>, Vec<S>, BnMode)>,
}

impl<S: Scalar> BatchNorm2d<S> {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            g_gamma: Array1::zeros(channels),
            g_beta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            momentum: sc(0.1),
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Array4<S>, train: bool) -> Array4<S> {
        let (b, c, h, w) = x.dim();
        let n = sc::<S>((b * h * w) as f64);
        let eps = sc::<S>(EPS);
        let mut xhat = x.clone();
        let mut inv_stds = Vec::with_capacity(c);
        let mode = if train { BnMode::Train } else { BnMode::Eval };
        for ci in 0..c {
            let (mean, istd) = match mode {
                BnMode::Train => {
                    let mut sum = S::zero();
                    let mut sq = S::zero();
                    for bi in 0..b {
                        let plane = x.index_axis(Axis(0), bi);
                        let plane = plane.index_axis(Axis(0), ci);
                        for &v in plane.iter() {
                            sum += v;
                            sq += v * v;
                        }
                    }
                    let mean = sum / n;
                    let var = sq / n - mean * mean;
                    let count = (b * h * w) as f64;
                    let unbiased = var * sc::<S>(count / (count - 1.0).max(1.0));
                    self.running_mean[ci] =
                        (S::one() - self.momentum) * self.running_mean[ci] + self.momentum * mean;
                    self.running_var[ci] = (S::one() - self.momentum) * self.running_var[ci]
                        + self.momentum * unbiased;
                    (mean, (var + eps).sqrt().recip())
                }
                BnMode::Eval => (
                    self.running_mean[ci],
                    (self.running_var[ci] + eps).sqrt().recip(),
                ),
            };
            for bi in 0..b {
                let mut plane = xhat.index_axis_mut(Axis(0), bi);
                let mut plane = plane.index_axis_mut(Axis(0), ci);
                for v in plane.iter_mut() {
                    *v = (*v - mean) * istd;
                }
            }
            inv_stds.push(istd);
        }
        let mut y = xhat.clone();
        for ci in 0..c {
            let (g, bt) = (self.gamma[ci], self.beta[ci]);
            for bi in 0..b {
                let mut plane = y.index_axis_mut(Axis(0), bi);
                let mut plane = plane.index_axis_mut(Axis(0), ci);
                for v in plane.iter_mut() {
                    *v = *v * g + bt;
                }
            }
        }
        self.cache = Some((xhat, inv_stds, mode));
        y
    }

    pub fn backward(&mut self, dy: &Array4<S>, want_dw: bool) -> Array4<S> {
        let (xhat, inv_stds, mode) = self.cache.take().expect("norm backward without forward");
        let (b, c, h, w) = dy.dim();
        let n = sc::<S>((b * h * w) as f64);
        let mut dx = Array4::zeros(dy.raw_dim());
        for ci in 0..c {
            let istd = inv_stds[ci];
            let g = self.gamma[ci];
            let mut dsum = S::zero();
            let mut ddot = S::zero();
            for bi in 0..b {
                let dplane = dy.index_axis(Axis(0), bi);
                let dplane = dplane.index_axis(Axis(0), ci);
                let xplane = xhat.index_axis(Axis(0), bi);
                let xplane = xplane.index_axis(Axis(0), ci);
                for (dv, xv) in dplane.iter().zip(xplane.iter()) {
                    dsum += *dv;
                    ddot += *dv * *xv;
                }
            }
            if want_dw {
                self.g_gamma[ci] += ddot;
                self.g_beta[ci] += dsum;
            }
            match mode {
                BnMode::Train => {
                    // Batch statistics depend on the input.
                    let gmean = dsum * g / n;
                    let gdot_mean = ddot * g / n;
                    for bi in 0..b {
                        let dplane = dy.index_axis(Axis(0), bi);
                        let dplane = dplane.index_axis(Axis(0), ci);
                        let xplane = xhat.index_axis(Axis(0), bi);
                        let xplane = xplane.index_axis(Axis(0), ci);
                        let mut out = dx.index_axis_mut(Axis(0), bi);
                        let mut out = out.index_axis_mut(Axis(0), ci);
                        for ((o, dv), xv) in out.iter_mut().zip(dplane.iter()).zip(xplane.iter()) {
                            *o = istd * (*dv * g - gmean - *xv * gdot_mean);
                        }
                    }
                }
                BnMode::Eval => {
                    // Running statistics are constants.
                    let scale = g * istd;
                    for bi in 0..b {
                        let dplane = dy.index_axis(Axis(0), bi);
                        let dplane = dplane.index_axis(Axis(0), ci);
                        let mut out = dx.index_axis_mut(Axis(0), bi);
                        let mut out = out.index_axis_mut(Axis(0), ci);
                        for (o, dv) in out.iter_mut().zip(dplane.iter()) {
                            *o = *dv * scale;
                        }
                    }
                }
            }
        }
        dx
    }
}

impl<S: Scalar> HasParams<S> for BatchNorm2d<S> {
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(ParamMut<'_, S>)) {
        f(ParamMut {
            name: join(prefix, "gamma"),
            kind: ParamKind::Weight,
            value: self.gamma.view_mut().into_dyn(),
            grad: Some(self.g_gamma.view_mut().into_dyn()),
        });
        f(ParamMut {
            name: join(prefix, "beta"),
            kind: ParamKind::Weight,
            value: self.beta.view_mut().into_dyn(),
            grad: Some(self.g_beta.view_mut().into_dyn()),
        });
        f(ParamMut {
            name: join(prefix, "running_mean"),
            kind: ParamKind::Buffer,
            value: self.running_mean.view_mut().into_dyn(),
            grad: None,
        });
        f(ParamMut {
            name: join(prefix, "running_var"),
            kind: ParamKind::Buffer,
            value: self.running_var.view_mut().into_dyn(),
            grad: None,
        });
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(ParamRef<'_, S>)) {
        f(ParamRef {
            name: join(prefix, "gamma"),
            kind: ParamKind::Weight,
            value: self.gamma.view().into_dyn(),
            grad: Some(self.g_gamma.view().into_dyn()),
        });
        f(ParamRef {
            name: join(prefix, "beta"),
            kind: ParamKind::Weight,
            value: self.beta.view().into_dyn(),
            grad: Some(self.g_beta.view().into_dyn()),
        });
        f(ParamRef {
            name: join(prefix, "running_mean"),
            kind: ParamKind::Buffer,
            value: self.running_mean.view().into_dyn(),
            grad: None,
        });
        f(ParamRef {
            name: join(prefix, "running_var"),
            kind: ParamKind::Buffer,
            value: self.running_var.view().into_dyn(),
            grad: None,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    #[test]
    fn instance_norm_standardizes_each_plane() {
        let x = Array4::from_shape_fn((2, 3, 4, 4), |(b, c, i, j)| {
            (b * 31 + c * 7 + i * 3 + j) as f64 * 0.173 - 1.0
        });
        let mut norm = InstanceNorm2d::new();
        let y = norm.forward(&x, false);
        for bi in 0..2 {
            for ci in 0..3 {
                let plane = y.index_axis(Axis(0), bi);
                let plane = plane.index_axis(Axis(0), ci);
                let m = plane.mean().unwrap();
                let v = plane.mapv(|a| a * a).mean().unwrap() - m * m;
                assert!(m.abs() < 1e-12);
                assert!((v - 1.0).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn batch_norm_eval_uses_running_stats() {
        let mut bn = BatchNorm2d::<f64>::new(2);
        bn.running_mean[0] = 1.0;
        bn.running_var[0] = 4.0;
        let x = Array4::from_elem((1, 2, 2, 2), 3.0);
        let y = bn.forward(&x, false);
        let expected = (3.0 - 1.0) / (4.0f64 + EPS).sqrt();
        assert!((y[[0, 0, 0, 0]] - expected).abs() < 1e-12);
    }

    #[test]
    fn batch_norm_train_updates_running_stats() {
        let mut bn = BatchNorm2d::<f64>::new(1);
        let x = Array4::from_elem((2, 1, 2, 2), 5.0);
        bn.forward(&x, true);
        assert!((bn.running_mean[0] - 0.5).abs() < 1e-12); // 0.9 * 0 + 0.1 * 5
    }
}
