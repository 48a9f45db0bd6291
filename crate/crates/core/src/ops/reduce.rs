use std::cell::Cell;

use crate::autodiff::{Backward, Tape, Var};
use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

/// `(outer, len, inner)` strides of one axis.
fn axis_layout(dims: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = dims[..axis].iter().product();
    let inner = dims[axis + 1..].iter().product();
    (outer, dims[axis], inner)
}

struct SoftmaxBackward {
    axis: usize,
}

impl Backward for SoftmaxBackward {
    fn name(&self) -> &'static str {
        "softmax"
    }

    fn backward(&self, _inputs: &[&Tensor], output: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (outer, n, inner) = axis_layout(output.dims(), self.axis);
        let p = output.data();
        let mut gz = vec![0.0; p.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                let dot: f64 = (0..n).map(|k| grad[base + k * inner] * p[base + k * inner]).sum();
                for k in 0..n {
                    let j = base + k * inner;
                    gz[j] = p[j] * (grad[j] - dot);
                }
            }
        }
        vec![Some(gz)]
    }
}

/// Softmax along `axis`, with max subtraction.
pub fn softmax_axis(tape: &mut Tape, z: &Var, axis: usize) -> Result<Var> {
    let dims = z.dims();
    if axis >= dims.len() {
        return Err(shape_err("softmax", format!("axis {axis} of {dims:?}")));
    }
    let (outer, n, inner) = axis_layout(dims, axis);
    let zd = z.value().data();
    let mut p = vec![0.0; zd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * n * inner + i;
            let max = (0..n).map(|k| zd[base + k * inner]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for k in 0..n {
                let e = (zd[base + k * inner] - max).exp();
                p[base + k * inner] = e;
                total += e;
            }
            for k in 0..n {
                p[base + k * inner] /= total;
            }
        }
    }
    let y = Tensor::from_vec(dims.to_vec(), p)?.ensure_finite("softmax")?;
    Ok(tape.record(y, &[z], SoftmaxBackward { axis }))
}

/// Class posterior over the channel axis of `[B, K, ...]` logits.
pub fn softmax_channel(tape: &mut Tape, z: &Var) -> Result<Var> {
    softmax_axis(tape, z, 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolMode {
    /// `[B, C, D, H, W] -> [B, C, D]`
    MeanOverHw,
    /// `[B, C, ...] -> [B, C]`
    GlobalMean,
}

struct PoolBackward {
    window: usize,
}

impl Backward for PoolBackward {
    fn name(&self) -> &'static str {
        "pool"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let scale = 1.0 / self.window as f64;
        let mut g = Vec::with_capacity(inputs[0].numel());
        for gv in grad {
            g.extend(std::iter::repeat_n(gv * scale, self.window));
        }
        vec![Some(g)]
    }
}

/// Arithmetic mean over trailing axes.
pub fn pool(tape: &mut Tape, x: &Var, mode: PoolMode) -> Result<Var> {
    let dims = x.dims();
    let keep = match mode {
        PoolMode::MeanOverHw if dims.len() == 5 => 3,
        PoolMode::GlobalMean if dims.len() >= 3 => 2,
        _ => return Err(shape_err("pool", format!("{mode:?} on {dims:?}"))),
    };
    let window: usize = dims[keep..].iter().product();
    let data: Vec<f64> = x
        .value()
        .data()
        .chunks_exact(window)
        .map(|c| c.iter().sum::<f64>() / window as f64)
        .collect();
    let y = Tensor::from_vec(dims[..keep].to_vec(), data)?;
    Ok(tape.record(y, &[x], PoolBackward { window }))
}

/// `(batch, m, n)` view of a rank-2 or rank-3 operand.
fn mat_dims(t: &[usize]) -> Option<(usize, usize, usize)> {
    match *t {
        [m, n] => Some((1, m, n)),
        [b, m, n] => Some((b, m, n)),
        _ => None,
    }
}

fn matmul_raw(a: &[f64], b: &[f64], batch: usize, m: usize, n: usize, p: usize, ta: bool, tb: bool) -> Vec<f64> {
    // out[bi] = op(a[bi]) * op(b[bi]); op = transpose when flagged
    let mut out = vec![0.0; batch * m * p];
    let (sa, sb) = (m * n, n * p);
    for bi in 0..batch {
        let (ab, bb) = (&a[bi * sa..][..sa], &b[bi * sb..][..sb]);
        let ob = &mut out[bi * m * p..][..m * p];
        for i in 0..m {
            for k in 0..n {
                let av = if ta { ab[k * m + i] } else { ab[i * n + k] };
                let row = &mut ob[i * p..][..p];
                if tb {
                    for (j, o) in row.iter_mut().enumerate() {
                        *o += av * bb[j * n + k];
                    }
                } else {
                    for (o, bv) in row.iter_mut().zip(&bb[k * p..][..p]) {
                        *o += av * bv;
                    }
                }
            }
        }
    }
    out
}

struct MatmulBackward {
    batch: usize,
    m: usize,
    n: usize,
    p: usize,
}

impl Backward for MatmulBackward {
    fn name(&self) -> &'static str {
        "matmul"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let MatmulBackward { batch, m, n, p } = *self;
        // dA = G B^T (m x n), dB = A^T G (n x p)
        let ga = matmul_raw(grad, inputs[1].data(), batch, m, p, n, false, true);
        let gb = matmul_raw(inputs[0].data(), grad, batch, n, m, p, true, false);
        vec![Some(ga), Some(gb)]
    }
}

thread_local! {
    static MATMUL_MACS: Cell<u64> = const { Cell::new(0) };
}

/// Running total of forward multiply-accumulates executed by [`matmul`] on
/// this thread.
pub fn matmul_macs() -> u64 {
    MATMUL_MACS.with(Cell::get)
}

/// Matrix product `[m, n] x [n, p]`, or batched `[B, m, n] x [B, n, p]`.
pub fn matmul(tape: &mut Tape, a: &Var, b: &Var) -> Result<Var> {
    let err = || shape_err("matmul", format!("{:?} x {:?}", a.dims(), b.dims()));
    let (ba, m, n) = mat_dims(a.dims()).ok_or_else(err)?;
    let (bb, n2, p) = mat_dims(b.dims()).ok_or_else(err)?;
    if ba != bb || n != n2 || a.dims().len() != b.dims().len() {
        return Err(err());
    }
    let out = matmul_raw(a.value().data(), b.value().data(), ba, m, n, p, false, false);
    MATMUL_MACS.with(|c| c.set(c.get() + (ba * m * n * p) as u64));
    let dims = if a.dims().len() == 2 { vec![m, p] } else { vec![ba, m, p] };
    let y = Tensor::from_vec(dims, out)?;
    Ok(tape.record(y, &[a, b], MatmulBackward { batch: ba, m, n, p }))
}

fn transpose_raw(x: &[f64], batch: usize, m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for bi in 0..batch {
        for i in 0..m {
            for j in 0..n {
                out[bi * m * n + j * m + i] = x[bi * m * n + i * n + j];
            }
        }
    }
    out
}

struct TransposeBackward {
    batch: usize,
    m: usize,
    n: usize,
}

impl Backward for TransposeBackward {
    fn name(&self) -> &'static str {
        "transpose"
    }

    fn backward(&self, _inputs: &[&Tensor], _output: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        vec![Some(transpose_raw(grad, self.batch, self.n, self.m))]
    }
}

/// Swaps the last two axes of a rank-2 or rank-3 tensor.
pub fn transpose(tape: &mut Tape, x: &Var) -> Result<Var> {
    let (batch, m, n) =
        mat_dims(x.dims()).ok_or_else(|| shape_err("transpose", format!("{:?}", x.dims())))?;
    let out = transpose_raw(x.value().data(), batch, m, n);
    let dims = if x.dims().len() == 2 { vec![n, m] } else { vec![batch, n, m] };
    let y = Tensor::from_vec(dims, out)?;
    Ok(tape.record(y, &[x], TransposeBackward { batch, m, n }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_product() {
        let mut tape = Tape::inference();
        let a = tape.constant(Tensor::from_vec(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = tape.constant(Tensor::from_vec(vec![2, 1], vec![5.0, 6.0]).unwrap());
        let c = matmul(&mut tape, &a, &b).unwrap();
        assert_eq!(c.value().data(), &[17.0, 39.0]);
    }

    #[test]
    fn inner_dim_mismatch() {
        let mut tape = Tape::inference();
        let a = tape.constant(Tensor::zeros(vec![2, 3]));
        let b = tape.constant(Tensor::zeros(vec![2, 3]));
        assert!(matmul(&mut tape, &a, &b).is_err());
    }

    #[test]
    fn uniform_softmax() {
        let mut tape = Tape::inference();
        let z = tape.constant(Tensor::zeros(vec![1, 4, 2, 2, 2]));
        let p = softmax_channel(&mut tape, &z).unwrap();
        assert!(p.value().data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn pool_shapes() {
        let mut tape = Tape::inference();
        let x = tape.constant(Tensor::full(vec![1, 2, 3, 4, 4], 1.25));
        let p = pool(&mut tape, &x, PoolMode::MeanOverHw).unwrap();
        assert_eq!(p.dims(), &[1, 2, 3]);
        assert!(p.value().data().iter().all(|&v| v == 1.25));
        let g = pool(&mut tape, &x, PoolMode::GlobalMean).unwrap();
        assert_eq!(g.dims(), &[1, 2]);
        assert!(g.value().data().iter().all(|&v| v == 1.25));
    }
}
