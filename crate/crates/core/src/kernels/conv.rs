//! Direct 3D convolution kernels (cross-correlation, cubic kernels).
//!
//! All three passes (forward, input gradient, weight gradient) walk the same
//! tap/row geometry, so each output element is always reduced in the same
//! order.

use crate::error::{shape_err, Result};
use crate::tensor::{Dims5, Tensor};

/// Output extent of a strided, padded window along one axis.
pub fn out_extent(n: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = n + 2 * pad;
    if stride == 0 || padded < k {
        None
    } else {
        Some((padded - k) / stride + 1)
    }
}

/// Output positions `lo..hi` whose input index `o*stride + tap - pad` lies in
/// `[0, n_in)`.
fn tap_range(tap: usize, n_in: usize, n_out: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if pad > tap { (pad - tap).div_ceil(stride) } else { 0 };
    let top = n_in + pad;
    if top <= tap {
        return (0, 0);
    }
    let hi = ((top - 1 - tap) / stride + 1).min(n_out);
    (lo.min(hi), hi)
}

#[derive(Clone, Copy, Debug)]
struct Geom {
    k: usize,
    stride: usize,
    pad: usize,
    inp: [usize; 3],
    out: [usize; 3],
}

impl Geom {
    fn in_plane(&self) -> usize {
        self.inp.iter().product()
    }

    fn out_plane(&self) -> usize {
        self.out.iter().product()
    }

    /// Calls `f(out_offset, in_offset, len)` for every contiguous output row
    /// touched by tap `(kd, kh, kw)`. Input elements advance by `stride`.
    /// Restricted to output depths in `slab`.
    #[inline]
    fn rows(&self, slab: (usize, usize), kd: usize, kh: usize, kw: usize, mut f: impl FnMut(usize, usize, usize)) {
        let [id_n, ih_n, iw_n] = self.inp;
        let [od_n, oh_n, ow_n] = self.out;
        let s = self.stride;
        let p = self.pad;
        let (d0, d1) = tap_range(kd, id_n, od_n, s, p);
        let (d0, d1) = (d0.max(slab.0), d1.min(slab.1));
        let (h0, h1) = tap_range(kh, ih_n, oh_n, s, p);
        let (w0, w1) = tap_range(kw, iw_n, ow_n, s, p);
        if w0 >= w1 {
            return;
        }
        let len = w1 - w0;
        let iw0 = w0 * s + kw - p;
        for od in d0..d1 {
            let id = od * s + kd - p;
            for oh in h0..h1 {
                let ih = oh * s + kh - p;
                let o = (od * oh_n + oh) * ow_n + w0;
                let i = (id * ih_n + ih) * iw_n + iw0;
                f(o, i, len);
            }
        }
    }

    /// Output-depth ranges covering about `SLAB` output elements each, so a
    /// slab of one output plane stays cache resident across channels.
    fn slabs(&self) -> impl Iterator<Item = (usize, usize)> {
        const SLAB: usize = 8192;
        let [od_n, oh_n, ow_n] = self.out;
        let step = (SLAB / (oh_n * ow_n)).max(1);
        (0..od_n).step_by(step).map(move |lo| (lo, (lo + step).min(od_n)))
    }

    fn taps(&self) -> impl Iterator<Item = (usize, usize, usize)> {
        let k = self.k;
        (0..k).flat_map(move |a| (0..k).flat_map(move |b| (0..k).map(move |c| (a, b, c))))
    }
}

#[inline]
fn axpy_strided(out: &mut [f64], inp: &[f64], wv: f64, stride: usize) {
    if stride == 1 {
        for (o, &x) in out.iter_mut().zip(inp) {
            *o += wv * x;
        }
    } else {
        for (j, o) in out.iter_mut().enumerate() {
            *o += wv * inp[j * stride];
        }
    }
}

#[inline]
fn scatter_strided(gin: &mut [f64], gout: &[f64], wv: f64, stride: usize) {
    if stride == 1 {
        for (g, &x) in gin.iter_mut().zip(gout) {
            *g += wv * x;
        }
    } else {
        for (j, &x) in gout.iter().enumerate() {
            gin[j * stride] += wv * x;
        }
    }
}

#[inline]
fn dot_strided(gout: &[f64], inp: &[f64], stride: usize) -> f64 {
    if stride == 1 {
        gout.iter().zip(inp).map(|(a, b)| a * b).sum()
    } else {
        gout.iter().enumerate().map(|(j, a)| a * inp[j * stride]).sum()
    }
}

fn geometry(x: &Dims5, k: usize, stride: usize, pad: usize, op: &'static str) -> Result<Geom> {
    let ext = |n| {
        out_extent(n, k, stride, pad).ok_or_else(|| {
            shape_err(op, format!("extent {n} with padding {pad} smaller than kernel {k}"))
        })
    };
    Ok(Geom {
        k,
        stride,
        pad,
        inp: [x.d, x.h, x.w],
        out: [ext(x.d)?, ext(x.h)?, ext(x.w)?],
    })
}

fn kernel_size(w: &Tensor, lead: usize, op: &'static str) -> Result<usize> {
    let dims = w.dims();
    if dims.len() != lead + 3 || dims[lead] != dims[lead + 1] || dims[lead] != dims[lead + 2] {
        return Err(shape_err(op, format!("expected cubic kernel, got {:?}", w.shape())));
    }
    Ok(dims[lead])
}

fn check_bias(b: Option<&Tensor>, c: usize, op: &'static str) -> Result<()> {
    match b {
        Some(b) if b.dims() != [c] => Err(shape_err(op, format!("bias {:?} for {c} channels", b.shape()))),
        _ => Ok(()),
    }
}

/// Validated geometry of a dense convolution.
#[derive(Clone, Copy, Debug)]
pub struct Conv3dSpec {
    x: Dims5,
    cout: usize,
    g: Geom,
}

impl Conv3dSpec {
    pub fn new(x: &Tensor, w: &Tensor, b: Option<&Tensor>, stride: usize, pad: usize) -> Result<Self> {
        const OP: &str = "conv3d";
        let xd = Dims5::of(x, OP)?;
        let k = kernel_size(w, 2, OP)?;
        let (cout, cin) = (w.dims()[0], w.dims()[1]);
        if cin != xd.c {
            return Err(shape_err(OP, format!("weight expects {cin} input channels, got {}", xd.c)));
        }
        check_bias(b, cout, OP)?;
        Ok(Conv3dSpec { x: xd, cout, g: geometry(&xd, k, stride, pad, OP)? })
    }

    pub fn out_dims(&self) -> Vec<usize> {
        let [d, h, w] = self.g.out;
        vec![self.x.b, self.cout, d, h, w]
    }
}

pub fn conv3d(x: &Tensor, w: &Tensor, b: Option<&Tensor>, stride: usize, pad: usize) -> Result<Tensor> {
    let spec = Conv3dSpec::new(x, w, b, stride, pad)?;
    Ok(conv3d_with(&spec, x, w, b))
}

pub(crate) fn conv3d_with(spec: &Conv3dSpec, x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Tensor {
    let g = spec.g;
    let (bn, cin, cout) = (spec.x.b, spec.x.c, spec.cout);
    let (ip, op) = (g.in_plane(), g.out_plane());
    let k3 = g.k * g.k * g.k;
    let mut out = vec![0.0; bn * cout * op];
    let (xd, wd) = (x.data(), w.data());
    for bi in 0..bn {
        for o in 0..cout {
            let plane = &mut out[(bi * cout + o) * op..][..op];
            if let Some(b) = b {
                plane.fill(b.data()[o]);
            }
            for slab in g.slabs() {
                for i in 0..cin {
                    let inp = &xd[(bi * cin + i) * ip..][..ip];
                    let wk = &wd[(o * cin + i) * k3..][..k3];
                    for (t, (kd, kh, kw)) in g.taps().enumerate() {
                        let wv = wk[t];
                        g.rows(slab, kd, kh, kw, |oo, io, len| {
                            axpy_strided(&mut plane[oo..oo + len], &inp[io..], wv, g.stride);
                        });
                    }
                }
            }
        }
    }
    Tensor::from_vec(spec.out_dims(), out).expect("conv3d output shape")
}

/// Gradient of a dense convolution with respect to its input.
pub(crate) fn conv3d_grad_input(spec: &Conv3dSpec, w: &Tensor, gout: &[f64]) -> Vec<f64> {
    let g = spec.g;
    let (bn, cin, cout) = (spec.x.b, spec.x.c, spec.cout);
    let (ip, op) = (g.in_plane(), g.out_plane());
    let k3 = g.k * g.k * g.k;
    let mut gin = vec![0.0; bn * cin * ip];
    let wd = w.data();
    for bi in 0..bn {
        for i in 0..cin {
            let gi = &mut gin[(bi * cin + i) * ip..][..ip];
            for slab in g.slabs() {
                for o in 0..cout {
                    let go = &gout[(bi * cout + o) * op..][..op];
                    let wk = &wd[(o * cin + i) * k3..][..k3];
                    for (t, (kd, kh, kw)) in g.taps().enumerate() {
                        let wv = wk[t];
                        g.rows(slab, kd, kh, kw, |oo, io, len| {
                            scatter_strided(&mut gi[io..], &go[oo..oo + len], wv, g.stride);
                        });
                    }
                }
            }
        }
    }
    gin
}

/// Gradient of a dense convolution with respect to its weight.
pub(crate) fn conv3d_grad_weight(spec: &Conv3dSpec, x: &Tensor, gout: &[f64]) -> Vec<f64> {
    let g = spec.g;
    let (bn, cin, cout) = (spec.x.b, spec.x.c, spec.cout);
    let (ip, op) = (g.in_plane(), g.out_plane());
    let k3 = g.k * g.k * g.k;
    let mut gw = vec![0.0; cout * cin * k3];
    let xd = x.data();
    for o in 0..cout {
        for i in 0..cin {
            let gk = &mut gw[(o * cin + i) * k3..][..k3];
            for bi in 0..bn {
                let inp = &xd[(bi * cin + i) * ip..][..ip];
                let go = &gout[(bi * cout + o) * op..][..op];
                for slab in g.slabs() {
                    for (t, (kd, kh, kw)) in g.taps().enumerate() {
                        let mut acc = 0.0;
                        g.rows(slab, kd, kh, kw, |oo, io, len| {
                            acc += dot_strided(&go[oo..oo + len], &inp[io..], g.stride);
                        });
                        gk[t] += acc;
                    }
                }
            }
        }
    }
    gw
}

/// Per-channel sums of an output gradient laid out as `[B, C, spatial]`.
pub(crate) fn channel_sums(gout: &[f64], b: usize, c: usize, spatial: usize) -> Vec<f64> {
    let mut gb = vec![0.0; c];
    for bi in 0..b {
        for (ci, acc) in gb.iter_mut().enumerate() {
            *acc += gout[(bi * c + ci) * spatial..][..spatial].iter().sum::<f64>();
        }
    }
    gb
}

/// Validated geometry of a depthwise convolution.
#[derive(Clone, Copy, Debug)]
pub struct DepthwiseSpec {
    x: Dims5,
    g: Geom,
}

impl DepthwiseSpec {
    pub fn new(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Result<Self> {
        const OP: &str = "depthwise_conv3d";
        let xd = Dims5::of(x, OP)?;
        let k = kernel_size(w, 1, OP)?;
        if w.dims()[0] != xd.c {
            return Err(shape_err(OP, format!("{} filters for {} channels", w.dims()[0], xd.c)));
        }
        Ok(DepthwiseSpec { x: xd, g: geometry(&xd, k, stride, pad, OP)? })
    }

    pub fn out_dims(&self) -> Vec<usize> {
        let [d, h, w] = self.g.out;
        vec![self.x.b, self.x.c, d, h, w]
    }
}

pub fn depthwise_conv3d(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let spec = DepthwiseSpec::new(x, w, stride, pad)?;
    Ok(depthwise_with(&spec, x, w))
}

pub(crate) fn depthwise_with(spec: &DepthwiseSpec, x: &Tensor, w: &Tensor) -> Tensor {
    let g = spec.g;
    let (bn, c) = (spec.x.b, spec.x.c);
    let (ip, op) = (g.in_plane(), g.out_plane());
    let k3 = g.k * g.k * g.k;
    let mut out = vec![0.0; bn * c * op];
    for bi in 0..bn {
        for ci in 0..c {
            let plane = &mut out[(bi * c + ci) * op..][..op];
            let inp = &x.data()[(bi * c + ci) * ip..][..ip];
            let wk = &w.data()[ci * k3..][..k3];
            for (t, (kd, kh, kw)) in g.taps().enumerate() {
                let wv = wk[t];
                g.rows((0, usize::MAX), kd, kh, kw, |oo, io, len| {
                    axpy_strided(&mut plane[oo..oo + len], &inp[io..], wv, g.stride);
                });
            }
        }
    }
    Tensor::from_vec(spec.out_dims(), out).expect("depthwise output shape")
}

pub(crate) fn depthwise_grads(
    spec: &DepthwiseSpec,
    x: &Tensor,
    w: &Tensor,
    gout: &[f64],
    need_input: bool,
    need_weight: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let g = spec.g;
    let (bn, c) = (spec.x.b, spec.x.c);
    let (ip, op) = (g.in_plane(), g.out_plane());
    let k3 = g.k * g.k * g.k;
    let mut gin = need_input.then(|| vec![0.0; bn * c * ip]);
    let mut gw = need_weight.then(|| vec![0.0; c * k3]);
    for bi in 0..bn {
        for ci in 0..c {
            let go = &gout[(bi * c + ci) * op..][..op];
            let wk = &w.data()[ci * k3..][..k3];
            if let Some(gin) = gin.as_mut() {
                let gi = &mut gin[(bi * c + ci) * ip..][..ip];
                for (t, (kd, kh, kw)) in g.taps().enumerate() {
                    let wv = wk[t];
                    g.rows((0, usize::MAX), kd, kh, kw, |oo, io, len| {
                        scatter_strided(&mut gi[io..], &go[oo..oo + len], wv, g.stride);
                    });
                }
            }
            if let Some(gw) = gw.as_mut() {
                let inp = &x.data()[(bi * c + ci) * ip..][..ip];
                let gk = &mut gw[ci * k3..][..k3];
                for slab in g.slabs() {
                    for (t, (kd, kh, kw)) in g.taps().enumerate() {
                        let mut acc = 0.0;
                        g.rows(slab, kd, kh, kw, |oo, io, len| {
                            acc += dot_strided(&go[oo..oo + len], &inp[io..], g.stride);
                        });
                        gk[t] += acc;
                    }
                }
            }
        }
    }
    (gin, gw)
}

/// Validated geometry of a 1x1x1 channel mixing over `[B, Cin, ...]`.
#[derive(Clone, Copy, Debug)]
pub struct PointwiseSpec {
    pub b: usize,
    pub cin: usize,
    pub cout: usize,
    pub spatial: usize,
}

impl PointwiseSpec {
    pub fn new(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Self> {
        const OP: &str = "pointwise_conv3d";
        let xd = x.dims();
        if xd.len() < 2 {
            return Err(shape_err(OP, format!("input needs [B, C, ...], got {:?}", x.shape())));
        }
        let [cout, cin] = *w.dims() else {
            return Err(shape_err(OP, format!("weight must be [Cout, Cin], got {:?}", w.shape())));
        };
        if cin != xd[1] {
            return Err(shape_err(OP, format!("weight expects {cin} input channels, got {}", xd[1])));
        }
        check_bias(b, cout, OP)?;
        Ok(PointwiseSpec { b: xd[0], cin, cout, spatial: x.shape().spatial_numel() })
    }
}

pub fn pointwise_conv3d(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    let spec = PointwiseSpec::new(x, w, b)?;
    let mut dims = x.dims().to_vec();
    dims[1] = spec.cout;
    Ok(Tensor::from_vec(dims, pointwise_with(&spec, x.data(), w.data(), b.map(|b| b.data())))?)
}

/// Spatial chunk kept cache resident while channels are mixed.
const CHUNK: usize = 4096;

fn chunks(s: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..s).step_by(CHUNK).map(move |lo| (lo, (lo + CHUNK).min(s)))
}

pub(crate) fn pointwise_with(spec: &PointwiseSpec, x: &[f64], w: &[f64], b: Option<&[f64]>) -> Vec<f64> {
    let PointwiseSpec { b: bn, cin, cout, spatial: s } = *spec;
    let mut out = vec![0.0; bn * cout * s];
    for bi in 0..bn {
        for (lo, hi) in chunks(s) {
            for o in 0..cout {
                let row = &mut out[(bi * cout + o) * s..][lo..hi];
                if let Some(b) = b {
                    row.fill(b[o]);
                }
                for i in 0..cin {
                    axpy_strided(row, &x[(bi * cin + i) * s..][lo..hi], w[o * cin + i], 1);
                }
            }
        }
    }
    out
}

pub(crate) fn pointwise_grad_input(spec: &PointwiseSpec, w: &[f64], gout: &[f64]) -> Vec<f64> {
    let PointwiseSpec { b: bn, cin, cout, spatial: s } = *spec;
    let mut gin = vec![0.0; bn * cin * s];
    for bi in 0..bn {
        for (lo, hi) in chunks(s) {
            for i in 0..cin {
                let row = &mut gin[(bi * cin + i) * s..][lo..hi];
                for o in 0..cout {
                    axpy_strided(row, &gout[(bi * cout + o) * s..][lo..hi], w[o * cin + i], 1);
                }
            }
        }
    }
    gin
}

pub(crate) fn pointwise_grad_weight(spec: &PointwiseSpec, x: &[f64], gout: &[f64]) -> Vec<f64> {
    let PointwiseSpec { b: bn, cin, cout, spatial: s } = *spec;
    let mut gw = vec![0.0; cout * cin];
    for bi in 0..bn {
        for (lo, hi) in chunks(s) {
            for o in 0..cout {
                let go = &gout[(bi * cout + o) * s..][lo..hi];
                for i in 0..cin {
                    gw[o * cin + i] += dot_strided(go, &x[(bi * cin + i) * s..][lo..hi], 1);
                }
            }
        }
    }
    gw
}

/// Geometry of the kernel-2, stride-2 transposed convolution, expressed as
/// the adjoint of the strided convolution it inverts.
#[derive(Clone, Copy, Debug)]
pub struct TransposedSpec {
    /// Strided convolution mapping the (upsampled) output back to the input.
    adjoint: Conv3dSpec,
    x: Dims5,
    cout: usize,
}

impl TransposedSpec {
    pub fn new(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Self> {
        const OP: &str = "transposed_conv3d";
        let xd = Dims5::of(x, OP)?;
        let [cin, cout, 2, 2, 2] = *w.dims() else {
            return Err(shape_err(OP, format!("weight must be [Cin, Cout, 2, 2, 2], got {:?}", w.shape())));
        };
        if cin != xd.c {
            return Err(shape_err(OP, format!("weight expects {cin} input channels, got {}", xd.c)));
        }
        check_bias(b, cout, OP)?;
        let up = Dims5 { b: xd.b, c: cout, d: 2 * xd.d, h: 2 * xd.h, w: 2 * xd.w };
        let adjoint = Conv3dSpec { x: up, cout: cin, g: geometry(&up, 2, 2, 0, OP)? };
        Ok(TransposedSpec { adjoint, x: xd, cout })
    }

    pub fn out_dims(&self) -> Vec<usize> {
        self.adjoint.x.to_vec()
    }
}

pub fn transposed_conv3d(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    let spec = TransposedSpec::new(x, w, b)?;
    Ok(transposed_with(&spec, x, w, b))
}

pub(crate) fn transposed_with(spec: &TransposedSpec, x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Tensor {
    let mut out = conv3d_grad_input(&spec.adjoint, w, x.data());
    if let Some(b) = b {
        let s = spec.adjoint.x.spatial();
        for bi in 0..spec.x.b {
            for (o, &bv) in b.data().iter().enumerate() {
                out[(bi * spec.cout + o) * s..][..s].iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    Tensor::from_vec(spec.out_dims(), out).expect("transposed output shape")
}

pub(crate) fn transposed_grad_input(spec: &TransposedSpec, w: &Tensor, gout: &Tensor) -> Vec<f64> {
    conv3d_with(&spec.adjoint, gout, w, None).into_data()
}

pub(crate) fn transposed_grad_weight(spec: &TransposedSpec, x: &Tensor, gout: &Tensor) -> Vec<f64> {
    // weight gradient of the adjoint convolution with roles of input and
    // output gradient exchanged
    conv3d_grad_weight(&spec.adjoint, gout, x.data())
}
