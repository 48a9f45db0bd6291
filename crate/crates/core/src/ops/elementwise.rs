use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::autodiff::{Backward, Tape, Var};
use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    /// Exact form `x * Phi(x)`.
    Gelu,
    Sigmoid,
}

pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

fn gelu_grad_scalar(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
    cdf + x * pdf
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

struct ActivationBackward(Activation);

impl Backward for ActivationBackward {
    fn name(&self) -> &'static str {
        match self.0 {
            Activation::Gelu => "gelu",
            Activation::Sigmoid => "sigmoid",
        }
    }

    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let g = match self.0 {
            Activation::Gelu => inputs[0].data().iter().zip(grad).map(|(&x, g)| g * gelu_grad_scalar(x)).collect(),
            Activation::Sigmoid => output.data().iter().zip(grad).map(|(&s, g)| g * s * (1.0 - s)).collect(),
        };
        vec![Some(g)]
    }
}

pub fn activation(tape: &mut Tape, x: &Var, kind: Activation) -> Var {
    let y = match kind {
        Activation::Gelu => x.value().map(gelu_scalar),
        Activation::Sigmoid => x.value().map(sigmoid_scalar),
    };
    tape.record(y, &[x], ActivationBackward(kind))
}

pub fn gelu(tape: &mut Tape, x: &Var) -> Var {
    activation(tape, x, Activation::Gelu)
}

pub fn sigmoid(tape: &mut Tape, x: &Var) -> Var {
    activation(tape, x, Activation::Sigmoid)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Mul,
}

/// How the right operand maps onto the left one.
#[derive(Clone, Copy, Debug)]
enum Broadcast {
    Same,
    /// Right dims are a leading prefix of the left dims; each right element
    /// covers `inner` consecutive left elements.
    Prefix { inner: usize },
    Scalar,
}

fn broadcast_rule(a: &[usize], b: &[usize]) -> Option<Broadcast> {
    if a == b {
        Some(Broadcast::Same)
    } else if b == [1] {
        Some(Broadcast::Scalar)
    } else if b.len() < a.len() && b.len() >= 2 && a[..b.len()] == *b {
        Some(Broadcast::Prefix { inner: a[b.len()..].iter().product() })
    } else {
        None
    }
}

fn rhs_index(rule: Broadcast, j: usize) -> usize {
    match rule {
        Broadcast::Same => j,
        Broadcast::Prefix { inner } => j / inner,
        Broadcast::Scalar => 0,
    }
}

struct BinaryBackward {
    kind: Binary,
    rule: Broadcast,
}

impl Backward for BinaryBackward {
    fn name(&self) -> &'static str {
        match self.kind {
            Binary::Add => "add",
            Binary::Mul => "mul",
        }
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (a, b) = (inputs[0].data(), inputs[1].data());
        let mut gb = vec![0.0; b.len()];
        let ga = match self.kind {
            Binary::Add => {
                for (j, g) in grad.iter().enumerate() {
                    gb[rhs_index(self.rule, j)] += g;
                }
                grad.to_vec()
            }
            Binary::Mul => grad
                .iter()
                .enumerate()
                .map(|(j, g)| {
                    let k = rhs_index(self.rule, j);
                    gb[k] += g * a[j];
                    g * b[k]
                })
                .collect(),
        };
        vec![Some(ga), Some(gb)]
    }
}

/// Element-wise add or multiply. `b` may equal `a` in shape, be a leading
/// prefix of it (`[B, C]` or `[B, C, D]` against `[B, C, D, H, W]`), or be
/// a one-element scalar.
pub fn elementwise(tape: &mut Tape, a: &Var, b: &Var, kind: Binary) -> Result<Var> {
    let rule = broadcast_rule(a.dims(), b.dims()).ok_or_else(|| {
        shape_err("elementwise", format!("cannot broadcast {:?} onto {:?}", b.dims(), a.dims()))
    })?;
    let (ad, bd) = (a.value().data(), b.value().data());
    let out: Vec<f64> = ad
        .iter()
        .enumerate()
        .map(|(j, &x)| {
            let y = bd[rhs_index(rule, j)];
            match kind {
                Binary::Add => x + y,
                Binary::Mul => x * y,
            }
        })
        .collect();
    let y = Tensor::from_vec(a.dims().to_vec(), out)?;
    Ok(tape.record(y, &[a, b], BinaryBackward { kind, rule }))
}

pub fn add(tape: &mut Tape, a: &Var, b: &Var) -> Result<Var> {
    elementwise(tape, a, b, Binary::Add)
}

pub fn mul(tape: &mut Tape, a: &Var, b: &Var) -> Result<Var> {
    elementwise(tape, a, b, Binary::Mul)
}

struct AffineBackward(f64);

impl Backward for AffineBackward {
    fn name(&self) -> &'static str {
        "affine"
    }

    fn backward(&self, _inputs: &[&Tensor], _output: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        vec![Some(grad.iter().map(|g| g * self.0).collect())]
    }
}

/// `scale * x + shift` with constant coefficients.
pub fn affine(tape: &mut Tape, x: &Var, scale: f64, shift: f64) -> Var {
    let y = x.value().map(|v| scale * v + shift);
    tape.record(y, &[x], AffineBackward(scale))
}

struct ConcatBackward {
    split: usize,
}

impl Backward for ConcatBackward {
    fn name(&self) -> &'static str {
        "concat_channels"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let b = inputs[0].dims()[0];
        let (na, nb) = (inputs[0].numel() / b, inputs[1].numel() / b);
        let mut ga = Vec::with_capacity(inputs[0].numel());
        let mut gb = Vec::with_capacity(inputs[1].numel());
        for chunk in grad.chunks_exact(na + nb) {
            ga.extend_from_slice(&chunk[..self.split]);
            gb.extend_from_slice(&chunk[self.split..]);
        }
        vec![Some(ga), Some(gb)]
    }
}

/// Concatenation along the channel axis; all other extents must agree.
pub fn concat_channels(tape: &mut Tape, a: &Var, b: &Var) -> Result<Var> {
    let (ad, bd) = (a.dims(), b.dims());
    if ad.len() < 2 || ad.len() != bd.len() || ad[0] != bd[0] || ad[2..] != bd[2..] {
        return Err(shape_err("concat_channels", format!("{ad:?} with {bd:?}")));
    }
    let batch = ad[0];
    let (na, nb) = (a.value().numel() / batch, b.value().numel() / batch);
    let mut out = Vec::with_capacity(a.value().numel() + b.value().numel());
    for bi in 0..batch {
        out.extend_from_slice(&a.value().data()[bi * na..][..na]);
        out.extend_from_slice(&b.value().data()[bi * nb..][..nb]);
    }
    let mut dims = ad.to_vec();
    dims[1] += bd[1];
    let y = Tensor::from_vec(dims, out)?;
    Ok(tape.record(y, &[a, b], ConcatBackward { split: na }))
}

struct ReshapeBackward;

impl Backward for ReshapeBackward {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn backward(&self, _inputs: &[&Tensor], _output: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        vec![Some(grad.to_vec())]
    }
}

pub fn reshape(tape: &mut Tape, x: &Var, dims: impl Into<Vec<usize>>) -> Result<Var> {
    let y = x.value().clone().reshape(dims)?;
    Ok(tape.record(y, &[x], ReshapeBackward))
}

struct SelectRowBackward {
    row: usize,
}

impl Backward for SelectRowBackward {
    fn name(&self) -> &'static str {
        "select_row"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let mut g = vec![0.0; inputs[0].numel()];
        let n = grad.len();
        g[self.row * n..][..n].copy_from_slice(grad);
        vec![Some(g)]
    }
}

/// Row `row` of a `[S, C]` table as a `[C]` vector (embedding lookup).
pub fn select_row(tape: &mut Tape, table: &Var, row: usize) -> Result<Var> {
    let [rows, cols] = *table.dims() else {
        return Err(shape_err("select_row", format!("table must be 2-D, got {:?}", table.dims())));
    };
    if row >= rows {
        return Err(shape_err("select_row", format!("row {row} of {rows}")));
    }
    let y = Tensor::from_vec(vec![cols], table.value().data()[row * cols..][..cols].to_vec())?;
    Ok(tape.record(y, &[table], SelectRowBackward { row }))
}

struct SumBackward;

impl Backward for SumBackward {
    fn name(&self) -> &'static str {
        "sum"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        vec![Some(vec![grad[0]; inputs[0].numel()])]
    }
}

/// Sum of all elements as a one-element tensor.
pub fn sum(tape: &mut Tape, x: &Var) -> Var {
    tape.record(Tensor::scalar(x.value().sum()), &[x], SumBackward)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_and_sigmoid_at_zero() {
        assert_eq!(gelu_scalar(0.0), 0.0);
        assert_eq!(sigmoid_scalar(0.0), 0.5);
    }

    #[test]
    fn sigmoid_symmetry() {
        for t in [-30.0, -3.2, -0.1, 0.0, 0.7, 5.0, 40.0] {
            assert!((sigmoid_scalar(t) + sigmoid_scalar(-t) - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn slice_broadcast_fills_fiber() {
        let mut tape = Tape::inference();
        let a = tape.constant(Tensor::zeros(vec![1, 2, 3, 2, 2]));
        let v: Vec<f64> = (0..6).map(f64::from).collect();
        let b = tape.constant(Tensor::from_vec(vec![1, 2, 3], v).unwrap());
        let y = add(&mut tape, &a, &b).unwrap();
        for (j, &val) in y.value().data().iter().enumerate() {
            assert_eq!(val, (j / 4) as f64);
        }
    }

    #[test]
    fn concat_shape_and_rejects_mismatch() {
        let mut tape = Tape::inference();
        let a = tape.constant(Tensor::zeros(vec![1, 3, 2, 2, 2]));
        let b = tape.constant(Tensor::zeros(vec![1, 5, 2, 2, 2]));
        assert_eq!(concat_channels(&mut tape, &a, &b).unwrap().dims(), &[1, 8, 2, 2, 2]);
        let c = tape.constant(Tensor::zeros(vec![1, 5, 2, 2, 3]));
        assert!(concat_channels(&mut tape, &a, &c).is_err());
    }

    #[test]
    fn incompatible_broadcast_is_rejected() {
        let mut tape = Tape::inference();
        let a = tape.constant(Tensor::zeros(vec![1, 2, 3, 2, 2]));
        let b = tape.constant(Tensor::zeros(vec![2, 3]));
        assert!(add(&mut tape, &a, &b).is_err());
    }
}
