//! Corner-aligned trilinear resizing, applied one axis at a time.

use crate::autodiff::{Backward, Tape, Var};
use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

/// Source taps `(lo, hi, t)` for each output position along one axis.
fn taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    (0..n_out)
        .map(|o| {
            if n_out == 1 || n_in == 1 {
                return (0, 0, 0.0);
            }
            let src = o as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
            let lo = (src.floor() as usize).min(n_in - 1);
            let hi = (lo + 1).min(n_in - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

struct ResizeAxisBackward {
    axis: usize,
    taps: Vec<(usize, usize, f64)>,
}

fn layout(dims: &[usize], axis: usize) -> (usize, usize) {
    (dims[..axis].iter().product(), dims[axis + 1..].iter().product())
}

impl Backward for ResizeAxisBackward {
    fn name(&self) -> &'static str {
        "resize_axis"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let dims = inputs[0].dims();
        let (outer, inner) = layout(dims, self.axis);
        let (n_in, n_out) = (dims[self.axis], self.taps.len());
        let mut g = vec![0.0; inputs[0].numel()];
        for o in 0..outer {
            for (k, &(lo, hi, t)) in self.taps.iter().enumerate() {
                let src = &grad[(o * n_out + k) * inner..][..inner];
                for (j, &gv) in src.iter().enumerate() {
                    g[(o * n_in + lo) * inner + j] += (1.0 - t) * gv;
                    g[(o * n_in + hi) * inner + j] += t * gv;
                }
            }
        }
        vec![Some(g)]
    }
}

fn resize_axis(tape: &mut Tape, x: &Var, axis: usize, n_out: usize) -> Result<Var> {
    let dims = x.dims().to_vec();
    if dims[axis] == n_out {
        return Ok(x.clone());
    }
    let (outer, inner) = layout(&dims, axis);
    let n_in = dims[axis];
    let taps = taps(n_in, n_out);
    let xd = x.value().data();
    let mut out = vec![0.0; outer * n_out * inner];
    for o in 0..outer {
        for (k, &(lo, hi, t)) in taps.iter().enumerate() {
            let a = &xd[(o * n_in + lo) * inner..][..inner];
            let b = &xd[(o * n_in + hi) * inner..][..inner];
            let dst = &mut out[(o * n_out + k) * inner..][..inner];
            for ((d, &av), &bv) in dst.iter_mut().zip(a).zip(b) {
                *d = av + t * (bv - av);
            }
        }
    }
    let mut new_dims = dims;
    new_dims[axis] = n_out;
    let y = Tensor::from_vec(new_dims, out)?;
    Ok(tape.record(y, &[x], ResizeAxisBackward { axis, taps }))
}

/// Resizes the spatial extents of `[B, C, D, H, W]` to `target = [D', H', W']`.
pub fn interpolate_trilinear(tape: &mut Tape, x: &Var, target: [usize; 3]) -> Result<Var> {
    if x.dims().len() != 5 || target.contains(&0) {
        return Err(shape_err("interpolate_trilinear", format!("{:?} -> {target:?}", x.dims())));
    }
    let mut y = x.clone();
    for (i, &n) in target.iter().enumerate() {
        y = resize_axis(tape, &y, 2 + i, n)?;
    }
    Ok(y)
}
