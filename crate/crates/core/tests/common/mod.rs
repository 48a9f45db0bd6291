//! Shared helpers: seeded generators and nested-loop reference kernels
//! written independently of the library's row/tap machinery.

#![allow(dead_code)]

use dalight::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(dims: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::randn(dims.to_vec(), 1.0, rng)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn idx5(d: &[usize], b: usize, c: usize, z: usize, y: usize, x: usize) -> usize {
    (((b * d[1] + c) * d[2] + z) * d[3] + y) * d[4] + x
}

/// Direct cross-correlation with zero padding.
pub fn conv3d_ref(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, stride: usize, pad: usize) -> Vec<f64> {
    let xd = x.dims();
    let wd = w.dims();
    let (co, ci, k) = (wd[0], wd[1], wd[2]);
    let out_n = |n: usize| (n + 2 * pad - k) / stride + 1;
    let od = [xd[0], co, out_n(xd[2]), out_n(xd[3]), out_n(xd[4])];
    let mut out = vec![0.0; od.iter().product()];
    for b in 0..od[0] {
        for o in 0..co {
            for z in 0..od[2] {
                for y in 0..od[3] {
                    for xx in 0..od[4] {
                        let mut acc = bias.map_or(0.0, |t| t.data()[o]);
                        for i in 0..ci {
                            for a in 0..k {
                                for bb in 0..k {
                                    for c in 0..k {
                                        let zi = (z * stride + a) as isize - pad as isize;
                                        let yi = (y * stride + bb) as isize - pad as isize;
                                        let xi = (xx * stride + c) as isize - pad as isize;
                                        if zi < 0 || yi < 0 || xi < 0 {
                                            continue;
                                        }
                                        let (zi, yi, xi) = (zi as usize, yi as usize, xi as usize);
                                        if zi >= xd[2] || yi >= xd[3] || xi >= xd[4] {
                                            continue;
                                        }
                                        let wv = w.data()[(((o * ci + i) * k + a) * k + bb) * k + c];
                                        acc += wv * x.data()[idx5(xd, b, i, zi, yi, xi)];
                                    }
                                }
                            }
                        }
                        out[idx5(&od, b, o, z, y, xx)] = acc;
                    }
                }
            }
        }
    }
    out
}

/// Per-channel filtering, via the dense reference with a block-diagonal
/// weight.
pub fn block_diagonal(dw: &Tensor) -> Tensor {
    let (c, k) = (dw.dims()[0], dw.dims()[1]);
    let k3 = k * k * k;
    let mut data = vec![0.0; c * c * k3];
    for ch in 0..c {
        data[(ch * c + ch) * k3..][..k3].copy_from_slice(&dw.data()[ch * k3..][..k3]);
    }
    Tensor::from_vec(vec![c, c, k, k, k], data).unwrap()
}

/// Direct depthwise filtering, loop by loop.
pub fn depthwise_ref(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Vec<f64> {
    let xd = x.dims();
    let k = w.dims()[1];
    let out_n = |n: usize| (n + 2 * pad - k) / stride + 1;
    let od = [xd[0], xd[1], out_n(xd[2]), out_n(xd[3]), out_n(xd[4])];
    let mut out = vec![0.0; od.iter().product()];
    for b in 0..od[0] {
        for ch in 0..od[1] {
            for z in 0..od[2] {
                for y in 0..od[3] {
                    for xx in 0..od[4] {
                        let mut acc = 0.0;
                        for a in 0..k {
                            for bb in 0..k {
                                for c in 0..k {
                                    let zi = (z * stride + a) as isize - pad as isize;
                                    let yi = (y * stride + bb) as isize - pad as isize;
                                    let xi = (xx * stride + c) as isize - pad as isize;
                                    let inside = zi >= 0
                                        && yi >= 0
                                        && xi >= 0
                                        && (zi as usize) < xd[2]
                                        && (yi as usize) < xd[3]
                                        && (xi as usize) < xd[4];
                                    if inside {
                                        let wv = w.data()[((ch * k + a) * k + bb) * k + c];
                                        acc += wv * x.data()[idx5(xd, b, ch, zi as usize, yi as usize, xi as usize)];
                                    }
                                }
                            }
                        }
                        out[idx5(&od, b, ch, z, y, xx)] = acc;
                    }
                }
            }
        }
    }
    out
}

/// `out[b, o, v] = bias[o] + sum_i w[o, i] x[b, i, v]`.
pub fn pointwise_ref(x: &Tensor, w: &Tensor, bias: Option<&Tensor>) -> Vec<f64> {
    let (b, ci) = (x.dims()[0], x.dims()[1]);
    let co = w.dims()[0];
    let n = x.numel() / (b * ci);
    let mut out = vec![0.0; b * co * n];
    for bi in 0..b {
        for o in 0..co {
            for v in 0..n {
                let mut acc = bias.map_or(0.0, |t| t.data()[o]);
                for i in 0..ci {
                    acc += w.data()[o * ci + i] * x.data()[(bi * ci + i) * n + v];
                }
                out[(bi * co + o) * n + v] = acc;
            }
        }
    }
    out
}

/// Kernel-2 stride-2 transposed convolution as an explicit scatter:
/// `out[b, o, 2z+a, 2y+c, 2x+e] += x[b, i, z, y, x] w[i, o, a, c, e]`.
pub fn transposed_ref(x: &Tensor, w: &Tensor, bias: Option<&Tensor>) -> Vec<f64> {
    let xd = x.dims();
    let co = w.dims()[1];
    let od = [xd[0], co, 2 * xd[2], 2 * xd[3], 2 * xd[4]];
    let mut out = vec![0.0; od.iter().product()];
    for b in 0..od[0] {
        for o in 0..co {
            for z in 0..od[2] {
                for y in 0..od[3] {
                    for xx in 0..od[4] {
                        out[idx5(&od, b, o, z, y, xx)] = bias.map_or(0.0, |t| t.data()[o]);
                    }
                }
            }
        }
        for i in 0..xd[1] {
            for z in 0..xd[2] {
                for y in 0..xd[3] {
                    for xx in 0..xd[4] {
                        let v = x.data()[idx5(xd, b, i, z, y, xx)];
                        for o in 0..co {
                            for a in 0..2 {
                                for c in 0..2 {
                                    for e in 0..2 {
                                        let wv = w.data()[(((i * co + o) * 2 + a) * 2 + c) * 2 + e];
                                        out[idx5(&od, b, o, 2 * z + a, 2 * y + c, 2 * xx + e)] += v * wv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn uniform_extent(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}
