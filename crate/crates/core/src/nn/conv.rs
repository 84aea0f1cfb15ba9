//! 2-D convolution and transposed convolution with explicit backward passes.
//!
//! Convolutions are lowered to matrix products: `im2col` unrolls kernel
//! windows into a `(in_c*kh*kw, samples*out_h*out_w)` matrix and the
//! products go through `ndarray::linalg::general_mat_mul`, which uses the
//! fast `matrixmultiply` kernels for f32/f64. Samples are packed into one
//! GEMM (chunked under a memory budget) so deep layers with small spatial
//! extents still run wide matrix products. The transposed convolution
//! reuses the same building blocks with input/output roles swapped, making
//! it the exact adjoint of a strided convolution.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Array4, Axis};
use rand::Rng;

use super::init::he_normal;
use super::param::{join, HasParams, ParamKind, ParamMut, ParamRef};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PadMode {
    Zero,
    Reflect,
}

/// Upper bound on the unrolled-window buffer, which caps how many samples
/// share one GEMM.
const COLS_BUDGET_BYTES: usize = 96 << 20;

fn chunk_len(batch: usize, kdim: usize, p: usize, elem_bytes: usize) -> usize {
    let per_sample = kdim * p * elem_bytes;
    (COLS_BUDGET_BYTES / per_sample.max(1)).clamp(1, batch.max(1))
}

/// Reflected source index for a coordinate `q` that may lie outside `0..n`
/// by at most `n-1` (mirror without repeating the edge sample).
#[inline]
fn reflect(q: isize, n: usize) -> usize {
    if q < 0 {
        (-q) as usize
    } else if q as usize >= n {
        2 * n - 2 - q as usize
    } else {
        q as usize
    }
}

/// Pad spatial dims of a `(b, c, h, w)` array by `p` on every side.
pub fn pad4<S: Scalar>(x: &Array4<S>, p: usize, mode: PadMode) -> Array4<S> {
    let (b, c, h, w) = x.dim();
    if p == 0 {
        return x.clone();
    }
    let mut out = Array4::zeros((b, c, h + 2 * p, w + 2 * p));
    match mode {
        PadMode::Zero => {
            out.slice_mut(s![.., .., p..p + h, p..p + w]).assign(x);
        }
        PadMode::Reflect => {
            assert!(p < h && p < w, "reflect padding {p} too large for {h}x{w}");
            let (wp, hp) = (w + 2 * p, h + 2 * p);
            let xstd = x.as_standard_layout();
            let xs = xstd.as_slice().expect("standard layout");
            let os = out.as_slice_mut().expect("contiguous");
            for plane in 0..b * c {
                let src_base = plane * h * w;
                let dst_base = plane * hp * wp;
                for i in 0..hp {
                    let si = reflect(i as isize - p as isize, h);
                    let src = &xs[src_base + si * w..src_base + si * w + w];
                    let drow = &mut os[dst_base + i * wp..dst_base + (i + 1) * wp];
                    drow[p..p + w].copy_from_slice(src);
                    for j in 0..p {
                        drow[j] = src[p - j];
                        drow[p + w + j] = src[w - 2 - j];
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`pad4`]: fold gradients at padded positions back onto their
/// source pixels.
pub fn unpad_fold4<S: Scalar>(dxp: &Array4<S>, p: usize, mode: PadMode) -> Array4<S> {
    let (b, c, hp, wp) = dxp.dim();
    if p == 0 {
        return dxp.clone();
    }
    let (h, w) = (hp - 2 * p, wp - 2 * p);
    match mode {
        PadMode::Zero => dxp.slice(s![.., .., p..p + h, p..p + w]).to_owned(),
        PadMode::Reflect => {
            let mut dx = Array4::zeros((b, c, h, w));
            let gs = dxp.as_slice().expect("contiguous");
            let ds = dx.as_slice_mut().expect("contiguous");
            for plane in 0..b * c {
                let src_base = plane * hp * wp;
                let dst_base = plane * h * w;
                for i in 0..hp {
                    let si = reflect(i as isize - p as isize, h);
                    let grow = &gs[src_base + i * wp..src_base + (i + 1) * wp];
                    let drow = &mut ds[dst_base + si * w..dst_base + si * w + w];
                    for (dv, &gv) in drow.iter_mut().zip(&grow[p..p + w]) {
                        *dv += gv;
                    }
                    for j in 0..p {
                        drow[p - j] += grow[j];
                        drow[w - 2 - j] += grow[p + w + j];
                    }
                }
            }
            dx
        }
    }
}

/// Unroll one padded sample `(c, hp, wp)` into the column block starting at
/// `col_offset` of a `(c*k*k, row_len)` matrix stored row-major in `out`.
#[allow(clippy::too_many_arguments)]
fn im2col_into<S: Scalar>(
    xs: &[S],
    c: usize,
    hp: usize,
    wp: usize,
    k: usize,
    stride: usize,
    oh: usize,
    ow: usize,
    row_len: usize,
    col_offset: usize,
    out: &mut [S],
) {
    let p = oh * ow;
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let r = (ci * k + ki) * k + kj;
                let dst = &mut out[r * row_len + col_offset..r * row_len + col_offset + p];
                for oy in 0..oh {
                    let src_base = ci * hp * wp + (oy * stride + ki) * wp + kj;
                    let drow = &mut dst[oy * ow..(oy + 1) * ow];
                    if stride == 1 {
                        drow.copy_from_slice(&xs[src_base..src_base + ow]);
                    } else {
                        for (ox, d) in drow.iter_mut().enumerate() {
                            *d = xs[src_base + ox * stride];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col_into`]: scatter-add one column block back into a
/// padded sample.
#[allow(clippy::too_many_arguments)]
fn col2im_from<S: Scalar>(
    cols: &[S],
    c: usize,
    hp: usize,
    wp: usize,
    k: usize,
    stride: usize,
    oh: usize,
    ow: usize,
    row_len: usize,
    col_offset: usize,
    xs: &mut [S],
) {
    let p = oh * ow;
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let r = (ci * k + ki) * k + kj;
                let srow = &cols[r * row_len + col_offset..r * row_len + col_offset + p];
                for oy in 0..oh {
                    let dst_base = ci * hp * wp + (oy * stride + ki) * wp + kj;
                    let sseg = &srow[oy * ow..(oy + 1) * ow];
                    if stride == 1 {
                        for (ox, &v) in sseg.iter().enumerate() {
                            xs[dst_base + ox] += v;
                        }
                    } else {
                        for (ox, &v) in sseg.iter().enumerate() {
                            xs[dst_base + ox * stride] += v;
                        }
                    }
                }
            }
        }
    }
}

pub fn conv_out_size(h: usize, k: usize, stride: usize, pad: usize) -> usize {
    (h + 2 * pad - k) / stride + 1
}

/// Few-output-channel stride-1 convolutions (the 3-channel image heads) run
/// as direct row AXPY/dot loops; the im2col GEMM degenerates there.
const DIRECT_OC_LIMIT: usize = 8;

fn conv2d_forward_direct<S: Scalar>(
    xp: &Array4<S>,
    w: &Array4<S>,
    b: &Array1<S>,
) -> Array4<S> {
    let (bs, c, hp, wp) = xp.dim();
    let (oc, _, k, _) = w.dim();
    let (oh, ow) = (hp - k + 1, wp - k + 1);
    let mut y = Array4::<S>::zeros((bs, oc, oh, ow));
    let xs = xp.as_slice().expect("contiguous");
    let ys = y.as_slice_mut().expect("contiguous");
    for s in 0..bs {
        for o in 0..oc {
            let yrow_base = (s * oc + o) * oh * ow;
            for ci in 0..c {
                for ki in 0..k {
                    for kj in 0..k {
                        let wv = w[[o, ci, ki, kj]];
                        for oy in 0..oh {
                            let src = (s * c + ci) * hp * wp + (oy + ki) * wp + kj;
                            let dst = yrow_base + oy * ow;
                            let (xrow, yrow) =
                                (&xs[src..src + ow], &mut ys[dst..dst + ow]);
                            for (yv, &xv) in yrow.iter_mut().zip(xrow) {
                                *yv += wv * xv;
                            }
                        }
                    }
                }
            }
            let bias = b[o];
            for v in ys[yrow_base..yrow_base + oh * ow].iter_mut() {
                *v += bias;
            }
        }
    }
    y
}

fn conv2d_backward_direct<S: Scalar>(
    xp: &Array4<S>,
    w: &Array4<S>,
    dy: &Array4<S>,
    want_dx: bool,
    mut gw: Option<&mut Array4<S>>,
    mut gb: Option<&mut Array1<S>>,
) -> Option<Array4<S>> {
    let (bs, c, hp, wp) = xp.dim();
    let (oc, _, k, _) = w.dim();
    let (_, _, oh, ow) = dy.dim();
    let xs = xp.as_slice().expect("contiguous");
    let dys = dy.as_slice().expect("contiguous");
    if let Some(gb) = gb.as_deref_mut() {
        for o in 0..oc {
            gb[o] += dy.slice(s![.., o, .., ..]).sum();
        }
    }
    if let Some(gw) = gw.as_deref_mut() {
        for s in 0..bs {
            for o in 0..oc {
                let dyrow_base = (s * oc + o) * oh * ow;
                for ci in 0..c {
                    for ki in 0..k {
                        for kj in 0..k {
                            // Eight independent accumulators so the row dot
                            // products vectorize.
                            let mut lanes = [S::zero(); 8];
                            let mut tail = S::zero();
                            for oy in 0..oh {
                                let src = (s * c + ci) * hp * wp + (oy + ki) * wp + kj;
                                let dyo = dyrow_base + oy * ow;
                                let (dyrow, xrow) =
                                    (&dys[dyo..dyo + ow], &xs[src..src + ow]);
                                let mut di = dyrow.chunks_exact(8);
                                let mut xi = xrow.chunks_exact(8);
                                for (dc, xc) in (&mut di).zip(&mut xi) {
                                    for l in 0..8 {
                                        lanes[l] += dc[l] * xc[l];
                                    }
                                }
                                for (&dv, &xv) in di.remainder().iter().zip(xi.remainder()) {
                                    tail += dv * xv;
                                }
                            }
                            let acc = lanes.iter().copied().sum::<S>() + tail;
                            gw[[o, ci, ki, kj]] += acc;
                        }
                    }
                }
            }
        }
    }
    let mut dxp = want_dx.then(|| Array4::<S>::zeros((bs, c, hp, wp)));
    if let Some(dxp) = dxp.as_mut() {
        let dxs = dxp.as_slice_mut().expect("contiguous");
        for s in 0..bs {
            for o in 0..oc {
                let dyrow_base = (s * oc + o) * oh * ow;
                for ci in 0..c {
                    for ki in 0..k {
                        for kj in 0..k {
                            let wv = w[[o, ci, ki, kj]];
                            for oy in 0..oh {
                                let src = (s * c + ci) * hp * wp + (oy + ki) * wp + kj;
                                let dyo = dyrow_base + oy * ow;
                                let dyrow = &dys[dyo..dyo + ow];
                                let drow = &mut dxs[src..src + ow];
                                for (dxv, &dv) in drow.iter_mut().zip(dyrow) {
                                    *dxv += wv * dv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    dxp
}

pub fn deconv_out_size(h: usize, k: usize, stride: usize, pad: usize) -> usize {
    (h - 1) * stride + k - 2 * pad
}

/// Gather `(b, c, h, w)` rows of a chunk into a `(c, chunk*p)` matrix with
/// per-sample column blocks.
fn gather_perm<S: Scalar>(src: &Array4<S>, start: usize, count: usize, out: &mut Array2<S>) {
    let (_, c, h, w) = src.dim();
    let p = h * w;
    let row_len = count * p;
    let o = out.as_slice_mut().expect("contiguous");
    let sstd = src.as_standard_layout();
    let sflat = sstd.as_slice().expect("standard layout");
    for ci in 0..c {
        for si in 0..count {
            let src_off = (start + si) * c * p + ci * p;
            let dst_off = ci * row_len + si * p;
            o[dst_off..dst_off + p].copy_from_slice(&sflat[src_off..src_off + p]);
        }
    }
}

/// Inverse of [`gather_perm`]: scatter a `(c, chunk*p)` matrix back into
/// `(b, c, h, w)` rows.
fn scatter_perm<S: Scalar>(src: &Array2<S>, start: usize, count: usize, out: &mut Array4<S>) {
    let (_, c, h, w) = out.dim();
    let p = h * w;
    let row_len = count * p;
    let sflat = src.as_slice().expect("contiguous");
    let o = out.as_slice_mut().expect("contiguous");
    for ci in 0..c {
        for si in 0..count {
            let dst_off = (start + si) * c * p + ci * p;
            let src_off = ci * row_len + si * p;
            o[dst_off..dst_off + p].copy_from_slice(&sflat[src_off..src_off + p]);
        }
    }
}

/// Convolution forward on padded input. `w` is `(out_c, in_c, k, k)`.
pub(crate) fn conv2d_forward_padded<S: Scalar>(
    xp: &Array4<S>,
    w: &Array4<S>,
    b: &Array1<S>,
    stride: usize,
) -> Array4<S> {
    let (bs, c, hp, wp) = xp.dim();
    let (oc, ic, k, _) = w.dim();
    assert_eq!(c, ic, "input channels {c} != weight in_c {ic}");
    if oc <= DIRECT_OC_LIMIT && stride == 1 {
        return conv2d_forward_direct(xp, w, b);
    }
    let oh = (hp - k) / stride + 1;
    let ow = (wp - k) / stride + 1;
    let kdim = ic * k * k;
    let p = oh * ow;
    let chunk = chunk_len(bs, kdim, p, S::BYTES);

    let w2 = w
        .view()
        .into_shape_with_order((oc, kdim))
        .expect("weight contiguous");
    let mut y = Array4::<S>::zeros((bs, oc, oh, ow));

    let mut start = 0usize;
    while start < bs {
        let count = chunk.min(bs - start);
        let row_len = count * p;
        let mut cols = Array2::<S>::zeros((kdim, row_len));
        let mut y_tmp = Array2::<S>::zeros((oc, row_len));
        let cols_slice = cols.as_slice_mut().expect("contiguous");
        for si in 0..count {
            let xs = xp.index_axis(Axis(0), start + si);
            im2col_into(
                xs.as_slice().expect("sample contiguous"),
                c,
                hp,
                wp,
                k,
                stride,
                oh,
                ow,
                row_len,
                si * p,
                cols_slice,
            );
        }
        general_mat_mul(S::one(), &w2, &cols, S::zero(), &mut y_tmp);
        for o in 0..oc {
            let bias = b[o];
            y_tmp.row_mut(o).mapv_inplace(|v| v + bias);
        }
        scatter_perm(&y_tmp, start, count, &mut y);
        start += count;
    }
    y
}

/// Convolution backward on padded input. Accumulates into `gw`/`gb` when
/// given and returns the padded input gradient when `want_dx`.
pub(crate) fn conv2d_backward_padded<S: Scalar>(
    xp: &Array4<S>,
    w: &Array4<S>,
    dy: &Array4<S>,
    stride: usize,
    want_dx: bool,
    mut gw: Option<&mut Array4<S>>,
    mut gb: Option<&mut Array1<S>>,
) -> Option<Array4<S>> {
    let (bs, c, hp, wp) = xp.dim();
    let (oc, ic, k, _) = w.dim();
    let (_, doc, oh, ow) = dy.dim();
    assert_eq!(doc, oc);
    if oc <= DIRECT_OC_LIMIT && stride == 1 {
        return conv2d_backward_direct(xp, w, dy, want_dx, gw, gb);
    }
    let kdim = ic * k * k;
    let p = oh * ow;
    let chunk = chunk_len(bs, kdim, p, S::BYTES);

    let w2 = w
        .view()
        .into_shape_with_order((oc, kdim))
        .expect("weight contiguous");
    let mut dxp = want_dx.then(|| Array4::<S>::zeros((bs, c, hp, wp)));

    if let Some(gb) = gb.as_deref_mut() {
        for o in 0..oc {
            *gb.get_mut(o).expect("bias index") += dy.slice(s![.., o, .., ..]).sum();
        }
    }

    let mut start = 0usize;
    while start < bs {
        let count = chunk.min(bs - start);
        let row_len = count * p;
        let mut dy_perm = Array2::<S>::zeros((oc, row_len));
        gather_perm(dy, start, count, &mut dy_perm);
        let mut cols = Array2::<S>::zeros((kdim, row_len));

        if gw.is_some() || want_dx {
            if gw.is_some() {
                let cols_slice = cols.as_slice_mut().expect("contiguous");
                for si in 0..count {
                    let xs = xp.index_axis(Axis(0), start + si);
                    im2col_into(
                        xs.as_slice().expect("sample contiguous"),
                        c,
                        hp,
                        wp,
                        k,
                        stride,
                        oh,
                        ow,
                        row_len,
                        si * p,
                        cols_slice,
                    );
                }
                let mut gw2 = gw
                    .as_deref_mut()
                    .expect("checked above")
                    .view_mut()
                    .into_shape_with_order((oc, kdim))
                    .expect("gw contiguous");
                general_mat_mul(S::one(), &dy_perm, &cols.t(), S::one(), &mut gw2);
            }
            if let Some(dxp) = dxp.as_mut() {
                general_mat_mul(S::one(), &w2.t(), &dy_perm, S::zero(), &mut cols);
                let dcols_slice = cols.as_slice().expect("contiguous");
                for si in 0..count {
                    let mut dxs = dxp.index_axis_mut(Axis(0), start + si);
                    col2im_from(
                        dcols_slice,
                        c,
                        hp,
                        wp,
                        k,
                        stride,
                        oh,
                        ow,
                        row_len,
                        si * p,
                        dxs.as_slice_mut().expect("sample contiguous"),
                    );
                }
            }
        }
        start += count;
    }
    dxp
}

/// Convolution layer with cached padded input for the backward pass.
#[derive(Debug, Clone)]
pub struct Conv2d<S: Scalar> {
    pub w: Array4<S>,
    pub b: Array1<S>,
    pub gw: Array4<S>,
    pub gb: Array1<S>,
    pub stride: usize,
    pub pad: usize,
    pub mode: PadMode,
    cache: Option<Array4<S>>,
}

impl<S: Scalar> Conv2d<S> {
    pub fn new<R: Rng>(
        rng: &mut R,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        pad: usize,
        mode: PadMode,
    ) -> Self {
        let fan_in = in_c * k * k;
        Conv2d {
            w: he_normal(rng, (out_c, in_c, k, k), fan_in),
            b: Array1::zeros(out_c),
            gw: Array4::zeros((out_c, in_c, k, k)),
            gb: Array1::zeros(out_c),
            stride,
            pad,
            mode,
            cache: None,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.w.dim().0
    }

    pub fn forward(&mut self, x: &Array4<S>, train: bool) -> Array4<S> {
        let xp = pad4(x, self.pad, self.mode);
        let y = conv2d_forward_padded(&xp, &self.w, &self.b, self.stride);
        if train {
            self.cache = Some(xp);
        }
        y
    }

    /// Forward with an externally supplied effective weight (spectral norm).
    pub(crate) fn forward_with(&mut self, x: &Array4<S>, w: &Array4<S>, train: bool) -> Array4<S> {
        let xp = pad4(x, self.pad, self.mode);
        let y = conv2d_forward_padded(&xp, w, &self.b, self.stride);
        if train {
            self.cache = Some(xp);
        }
        y
    }

    pub fn backward(&mut self, dy: &Array4<S>, want_dx: bool, want_dw: bool) -> Option<Array4<S>> {
        let xp = self.cache.take().expect("conv backward without forward");
        let (gw, gb) = if want_dw {
            (Some(&mut self.gw), Some(&mut self.gb))
        } else {
            (None, None)
        };
        let dxp = conv2d_backward_padded(&xp, &self.w, dy, self.stride, want_dx, gw, gb);
        dxp.map(|d| unpad_fold4(&d, self.pad, self.mode))
    }

    /// Backward with an externally supplied effective weight; the fresh
    /// weight gradient (with respect to the effective weight) is written
    /// into `gw_eff` instead of `self.gw`.
    pub(crate) fn backward_with(
        &mut self,
        dy: &Array4<S>,
        w: &Array4<S>,
        want_dx: bool,
        gw_eff: Option<&mut Array4<S>>,
    ) -> Option<Array4<S>> {
        let xp = self.cache.take().expect("conv backward without forward");
        let gb = gw_eff.is_some().then_some(&mut self.gb);
        let dxp = conv2d_backward_padded(&xp, w, dy, self.stride, want_dx, gw_eff, gb);
        dxp.map(|d| unpad_fold4(&d, self.pad, self.mode))
    }
}

impl<S: Scalar> HasParams<S> for Conv2d<S> {
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

/// Transposed convolution (zero padding). `w` is `(in_c, out_c, k, k)`;
/// the forward pass is the exact adjoint of a `(stride, pad)` convolution.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d<S: Scalar> {
    pub w: Array4<S>,
    pub b: Array1<S>,
    pub gw: Array4<S>,
    pub gb: Array1<S>,
    pub stride: usize,
    pub pad: usize,
    cache: Option<Array4<S>>,
}

impl<S: Scalar> ConvTranspose2d<S> {
    pub fn new<R: Rng>(
        rng: &mut R,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let fan_in = in_c * k * k;
        ConvTranspose2d {
            w: he_normal(rng, (in_c, out_c, k, k), fan_in),
            b: Array1::zeros(out_c),
            gw: Array4::zeros((in_c, out_c, k, k)),
            gb: Array1::zeros(out_c),
            stride,
            pad,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Array4<S>, train: bool) -> Array4<S> {
        let (bs, ic, h, w_in) = x.dim();
        let (wic, oc, k, _) = self.w.dim();
        assert_eq!(ic, wic, "input channels {ic} != weight in_c {wic}");
        let oh = deconv_out_size(h, k, self.stride, self.pad);
        let ow = deconv_out_size(w_in, k, self.stride, self.pad);
        let (ohp, owp) = (oh + 2 * self.pad, ow + 2 * self.pad);
        let kdim = oc * k * k;
        let p = h * w_in;
        let chunk = chunk_len(bs, kdim, p, S::BYTES);

        let w2 = self
            .w
            .view()
            .into_shape_with_order((ic, kdim))
            .expect("weight contiguous");
        let mut yp = Array4::<S>::zeros((bs, oc, ohp, owp));

        let mut start = 0usize;
        while start < bs {
            let count = chunk.min(bs - start);
            let row_len = count * p;
            let mut x_perm = Array2::<S>::zeros((ic, row_len));
            gather_perm(x, start, count, &mut x_perm);
            let mut dcols = Array2::<S>::zeros((kdim, row_len));
            general_mat_mul(S::one(), &w2.t(), &x_perm, S::zero(), &mut dcols);
            let dslice = dcols.as_slice().expect("contiguous");
            for si in 0..count {
                let mut ys = yp.index_axis_mut(Axis(0), start + si);
                col2im_from(
                    dslice,
                    oc,
                    ohp,
                    owp,
                    k,
                    self.stride,
                    h,
                    w_in,
                    row_len,
                    si * p,
                    ys.as_slice_mut().expect("sample contiguous"),
                );
            }
            start += count;
        }
        let mut y = unpad_fold4(&yp, self.pad, PadMode::Zero);
        for o in 0..oc {
            let bias = self.b[o];
            y.slice_mut(s![.., o, .., ..]).mapv_inplace(|v| v + bias);
        }
        if train {
            self.cache = Some(x.clone());
        }
        y
    }

    pub fn backward(&mut self, dy: &Array4<S>, want_dx: bool, want_dw: bool) -> Option<Array4<S>> {
        let x = self.cache.take().expect("deconv backward without forward");
        let (bs, ic, h, w_in) = x.dim();
        let (_, oc, k, _) = self.w.dim();
        let kdim = oc * k * k;
        let p = h * w_in;
        let chunk = chunk_len(bs, kdim, p, S::BYTES);

        let dyp = pad4(dy, self.pad, PadMode::Zero);
        let (_, _, ohp, owp) = dyp.dim();
        let w2 = self
            .w
            .view()
            .into_shape_with_order((ic, kdim))
            .expect("weight contiguous");
        let mut dx = want_dx.then(|| Array4::<S>::zeros((bs, ic, h, w_in)));

        let mut start = 0usize;
        while start < bs {
            let count = chunk.min(bs - start);
            let row_len = count * p;
            let mut cols = Array2::<S>::zeros((kdim, row_len));
            {
                let cols_slice = cols.as_slice_mut().expect("contiguous");
                for si in 0..count {
                    let dys = dyp.index_axis(Axis(0), start + si);
                    im2col_into(
                        dys.as_slice().expect("sample contiguous"),
                        oc,
                        ohp,
                        owp,
                        k,
                        self.stride,
                        h,
                        w_in,
                        row_len,
                        si * p,
                        cols_slice,
                    );
                }
            }
            if want_dw {
                let mut x_perm = Array2::<S>::zeros((ic, row_len));
                gather_perm(&x, start, count, &mut x_perm);
                let mut gw2 = self
                    .gw
                    .view_mut()
                    .into_shape_with_order((ic, kdim))
                    .expect("gw contiguous");
                general_mat_mul(S::one(), &x_perm, &cols.t(), S::one(), &mut gw2);
            }
            if let Some(dx) = dx.as_mut() {
                let mut dx_perm = Array2::<S>::zeros((ic, row_len));
                general_mat_mul(S::one(), &w2, &cols, S::zero(), &mut dx_perm);
                scatter_perm(&dx_perm, start, count, dx);
            }
            start += count;
        }
        if want_dw {
            for o in 0..oc {
                self.gb[o] += dy.slice(s![.., o, .., ..]).sum();
            }
        }
        dx
    }
}

impl<S: Scalar> HasParams<S> for ConvTranspose2d<S> {
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
