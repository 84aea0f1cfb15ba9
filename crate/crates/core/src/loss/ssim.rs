//! Differentiable structural similarity.
//!
//! Gaussian-weighted SSIM over valid window positions, averaged over
//! channels, windows and batch. Window: 11x11, sigma 1.5, shrunk to the
//! image size when the image is smaller than the window (an 8x8 image uses
//! one 8x8 window). Stabilizers use dynamic range 2 (images in `[-1, 1]`):
//! `C1 = (0.01 * 2)^2`, `C2 = (0.03 * 2)^2`.

use ndarray::{Array2, Array4, Axis};

use crate::error::{Error, Result};
use crate::scalar::{sc, Scalar};

#[derive(Debug, Clone, Copy)]
pub struct SsimSettings {
    pub window: usize,
    pub sigma: f64,
}

impl Default for SsimSettings {
    fn default() -> Self {
        SsimSettings {
            window: 11,
            sigma: 1.5,
        }
    }
}

pub const DYNAMIC_RANGE: f64 = 2.0;

fn c1<S: Scalar>() -> S {
    sc((0.01 * DYNAMIC_RANGE) * (0.01 * DYNAMIC_RANGE))
}

fn c2<S: Scalar>() -> S {
    sc((0.03 * DYNAMIC_RANGE) * (0.03 * DYNAMIC_RANGE))
}

pub fn gaussian_kernel<S: Scalar>(k: usize, sigma: f64) -> Vec<S> {
    let center = (k as f64 - 1.0) / 2.0;
    let mut g: Vec<f64> = (0..k)
        .map(|i| (-((i as f64 - center).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= sum);
    g.into_iter().map(sc).collect()
}

/// Separable Gaussian-weighted sum over valid windows of one plane:
/// `(h, w) -> (h-k+1, w-k+1)`.
fn blur_valid<S: Scalar>(x: &Array2<S>, g: &[S]) -> Array2<S> {
    let (h, w) = x.dim();
    let k = g.len();
    let (hv, wv) = (h - k + 1, w - k + 1);
    let mut t = Array2::<S>::zeros((h, wv));
    for i in 0..h {
        for j in 0..wv {
            let mut acc = S::zero();
            for (b, &gb) in g.iter().enumerate() {
                acc += gb * x[[i, j + b]];
            }
            t[[i, j]] = acc;
        }
    }
    let mut y = Array2::<S>::zeros((hv, wv));
    for i in 0..hv {
        for j in 0..wv {
            let mut acc = S::zero();
            for (a, &ga) in g.iter().enumerate() {
                acc += ga * t[[i + a, j]];
            }
            y[[i, j]] = acc;
        }
    }
    y
}

/// Adjoint of [`blur_valid`]: spread window-space values back to pixels.
fn spread_full<S: Scalar>(d: &Array2<S>, g: &[S], h: usize, w: usize) -> Array2<S> {
    let (hv, wv) = d.dim();
    let mut t = Array2::<S>::zeros((h, wv));
    for i in 0..hv {
        for j in 0..wv {
            let v = d[[i, j]];
            for (a, &ga) in g.iter().enumerate() {
                t[[i + a, j]] += ga * v;
            }
        }
    }
    let mut out = Array2::<S>::zeros((h, w));
    for i in 0..h {
        for j in 0..wv {
            let v = t[[i, j]];
            for (b, &gb) in g.iter().enumerate() {
                out[[i, j + b]] += gb * v;
            }
        }
    }
    out
}

fn check_pair<S: Scalar>(x: &Array4<S>, y: &Array4<S>) -> Result<usize> {
    if x.dim() != y.dim() {
        return Err(Error::invalid(format!(
            "image shapes differ: {:?} vs {:?}",
            x.dim(),
            y.dim()
        )));
    }
    let (_, _, h, w) = x.dim();
    if h < 2 || w < 2 {
        return Err(Error::invalid("images too small for windowed similarity"));
    }
    Ok(h.min(w))
}

/// Mean SSIM between two batches (per-channel, valid windows).
pub fn ssim<S: Scalar>(x: &Array4<S>, y: &Array4<S>, st: &SsimSettings) -> Result<S> {
    ssim_impl(x, y, st, false).map(|(v, _)| v)
}

/// Mean SSIM plus its gradient with respect to `x`.
pub fn ssim_with_grad<S: Scalar>(
    x: &Array4<S>,
    y: &Array4<S>,
    st: &SsimSettings,
) -> Result<(S, Array4<S>)> {
    ssim_impl(x, y, st, true).map(|(v, g)| (v, g.expect("gradient requested")))
}

fn ssim_impl<S: Scalar>(
    x: &Array4<S>,
    y: &Array4<S>,
    st: &SsimSettings,
    want_grad: bool,
) -> Result<(S, Option<Array4<S>>)> {
    let min_side = check_pair(x, y)?;
    let k = st.window.min(min_side);
    let g = gaussian_kernel::<S>(k, st.sigma);
    let (bs, cs, h, w) = x.dim();
    let (hv, wv) = (h - k + 1, w - k + 1);
    let window_count = (bs * cs * hv * wv) as f64;
    let u = sc::<S>(1.0 / window_count);
    let (c1, c2) = (c1::<S>(), c2::<S>());

    let mut total = S::zero();
    let mut grad = want_grad.then(|| Array4::<S>::zeros(x.raw_dim()));
    let two = sc::<S>(2.0);
    for bi in 0..bs {
        for ci in 0..cs {
            let xp = x
                .index_axis(Axis(0), bi)
                .index_axis(Axis(0), ci)
                .to_owned();
            let yp = y
                .index_axis(Axis(0), bi)
                .index_axis(Axis(0), ci)
                .to_owned();
            let mu_x = blur_valid(&xp, &g);
            let mu_y = blur_valid(&yp, &g);
            let sxx = blur_valid(&(&xp * &xp), &g);
            let syy = blur_valid(&(&yp * &yp), &g);
            let sxy = blur_valid(&(&xp * &yp), &g);

            let mut d_mu = want_grad.then(|| Array2::<S>::zeros((hv, wv)));
            let mut d_sxx = want_grad.then(|| Array2::<S>::zeros((hv, wv)));
            let mut d_sxy = want_grad.then(|| Array2::<S>::zeros((hv, wv)));

            for i in 0..hv {
                for j in 0..wv {
                    let (mx, my) = (mu_x[[i, j]], mu_y[[i, j]]);
                    let var_x = sxx[[i, j]] - mx * mx;
                    let var_y = syy[[i, j]] - my * my;
                    let cov = sxy[[i, j]] - mx * my;
                    let a1 = two * mx * my + c1;
                    let a2 = two * cov + c2;
                    let b1 = mx * mx + my * my + c1;
                    let b2 = var_x + var_y + c2;
                    let denom = b1 * b2;
                    let s = a1 * a2 / denom;
                    total += s;

                    if let (Some(dm), Some(dxx), Some(dxy)) =
                        (d_mu.as_mut(), d_sxx.as_mut(), d_sxy.as_mut())
                    {
                        let ds_da1 = a2 / denom;
                        let ds_da2 = a1 / denom;
                        let ds_db1 = -s / b1;
                        let ds_db2 = -s / b2;
                        // sigma terms as functions of the raw window sums
                        let d_varx = ds_db2;
                        let d_cov = two * ds_da2;
                        let d_mx =
                            two * my * ds_da1 + two * mx * ds_db1 - two * mx * d_varx - my * d_cov;
                        dm[[i, j]] = u * d_mx;
                        dxx[[i, j]] = u * d_varx;
                        dxy[[i, j]] = u * d_cov;
                    }
                }
            }

            if let (Some(grad), Some(dm), Some(dxx), Some(dxy)) =
                (grad.as_mut(), d_mu.as_ref(), d_sxx.as_ref(), d_sxy.as_ref())
            {
                let t1 = spread_full(dm, &g, h, w);
                let t2 = spread_full(dxx, &g, h, w);
                let t3 = spread_full(dxy, &g, h, w);
                let mut gplane = grad.index_axis_mut(Axis(0), bi);
                let mut gplane = gplane.index_axis_mut(Axis(0), ci);
                for i in 0..h {
                    for j in 0..w {
                        gplane[[i, j]] = t1[[i, j]]
                            + two * xp[[i, j]] * t2[[i, j]]
                            + yp[[i, j]] * t3[[i, j]];
                    }
                }
            }
        }
    }
    Ok((total * u, grad))
}
