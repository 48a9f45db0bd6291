//! Segmentation objective on class posteriors: soft Dice over the tumor
//! classes plus voxel-wise cross-entropy.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Backward, Tape, Var};
use crate::error::{shape_err, Error, Result};
use crate::metrics::TUMOR_CLASSES;
use crate::ops;
use crate::tensor::Tensor;

/// Floor applied to probabilities before the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda_dice: f64,
    pub lambda_ce: f64,
    pub epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { lambda_dice: 1.0, lambda_ce: 0.5, epsilon: 1e-5 }
    }
}

impl LossConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.lambda_dice >= 0.0) {
            out.push(format!("lambda_dice {} must be non-negative", self.lambda_dice));
        }
        if !(self.lambda_ce >= 0.0) {
            out.push(format!("lambda_ce {} must be non-negative", self.lambda_ce));
        }
        if !(self.epsilon > 0.0) {
            out.push(format!("epsilon {} must be positive", self.epsilon));
        }
        out
    }
}

/// `[B, K, ...]` indicator of `labels` (batch-major, one sample's voxels
/// after another).
pub fn one_hot(labels: &[u8], classes: usize, dims: &[usize]) -> Result<Tensor> {
    let (b, spatial) = (dims[0], dims[1..].iter().product::<usize>());
    if b * spatial != labels.len() {
        return Err(shape_err("one_hot", format!("{} labels for batch {b} of {spatial} voxels", labels.len())));
    }
    let mut data = vec![0.0; b * classes * spatial];
    for (j, &l) in labels.iter().enumerate() {
        if l as usize >= classes {
            return Err(Error::LabelOutOfRange { label: l as usize, classes });
        }
        let (bi, v) = (j / spatial, j % spatial);
        data[(bi * classes + l as usize) * spatial + v] = 1.0;
    }
    let mut out = vec![b, classes];
    out.extend_from_slice(&dims[1..]);
    Tensor::from_vec(out, data)
}

fn check_pair(p: &Tensor, y: &Tensor, op: &'static str) -> Result<(usize, usize, usize)> {
    if p.dims() != y.dims() || p.dims().len() < 2 {
        return Err(shape_err(op, format!("probabilities {:?} vs targets {:?}", p.dims(), y.dims())));
    }
    let (b, k) = (p.dims()[0], p.dims()[1]);
    if k <= *TUMOR_CLASSES.iter().max().expect("tumor classes") {
        return Err(shape_err(op, format!("{k} classes cannot hold the tumor classes")));
    }
    Ok((b, k, p.numel() / (b * k)))
}

/// `(sum p, sum y, sum p*y)` per class, pooled over batch and voxels.
fn class_sums(p: &[f64], y: &[f64], b: usize, k: usize, n: usize) -> Vec<(f64, f64, f64)> {
    let mut sums = vec![(0.0, 0.0, 0.0); k];
    for bi in 0..b {
        for (c, s) in sums.iter_mut().enumerate() {
            let at = (bi * k + c) * n;
            for (&pv, &yv) in p[at..at + n].iter().zip(&y[at..at + n]) {
                s.0 += pv;
                s.1 += yv;
                s.2 += pv * yv;
            }
        }
    }
    sums
}

struct DiceBackward {
    eps: f64,
}

impl Backward for DiceBackward {
    fn name(&self) -> &'static str {
        "dice_loss"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (p, y) = (inputs[0], inputs[1]);
        let (b, k, n) = (p.dims()[0], p.dims()[1], p.numel() / (p.dims()[0] * p.dims()[1]));
        let sums = class_sums(p.data(), y.data(), b, k, n);
        let scale = -grad[0] / TUMOR_CLASSES.len() as f64;
        let mut gp = vec![0.0; p.numel()];
        for &c in &TUMOR_CLASSES {
            let (sp, sy, si) = sums[c];
            let den = sp + sy + self.eps;
            let num = 2.0 * si + self.eps;
            for bi in 0..b {
                let at = (bi * k + c) * n;
                for (g, &yv) in gp[at..at + n].iter_mut().zip(&y.data()[at..at + n]) {
                    *g = scale * (2.0 * yv * den - num) / (den * den);
                }
            }
        }
        vec![Some(gp), None]
    }
}

/// `1 - mean_c (2 sum p y + eps) / (sum p + sum y + eps)` over the tumor
/// classes; background is excluded.
pub fn dice_loss(tape: &mut Tape, p: &Var, y: &Var, cfg: &LossConfig) -> Result<Var> {
    let (b, k, n) = check_pair(p.value(), y.value(), "dice_loss")?;
    let sums = class_sums(p.value().data(), y.value().data(), b, k, n);
    let eps = cfg.epsilon;
    let mean = TUMOR_CLASSES
        .iter()
        .map(|&c| {
            let (sp, sy, si) = sums[c];
            (2.0 * si + eps) / (sp + sy + eps)
        })
        .sum::<f64>()
        / TUMOR_CLASSES.len() as f64;
    Ok(tape.record(Tensor::scalar(1.0 - mean), &[p, y], DiceBackward { eps }))
}

struct CeBackward;

impl Backward for CeBackward {
    fn name(&self) -> &'static str {
        "ce_loss"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (p, y) = (inputs[0], inputs[1]);
        let voxels = (p.numel() / p.dims()[1]) as f64;
        let gp = p
            .data()
            .iter()
            .zip(y.data())
            .map(|(&pv, &yv)| if yv != 0.0 && pv > PROB_FLOOR { -grad[0] * yv / (voxels * pv) } else { 0.0 })
            .collect();
        vec![Some(gp), None]
    }
}

/// Mean over voxels of `-sum_c y log max(p, floor)`.
pub fn ce_loss(tape: &mut Tape, p: &Var, y: &Var) -> Result<Var> {
    let (_, k, _) = check_pair(p.value(), y.value(), "ce_loss")?;
    let voxels = (p.value().numel() / k) as f64;
    let total: f64 = p
        .value()
        .data()
        .iter()
        .zip(y.value().data())
        .filter(|(_, &yv)| yv != 0.0)
        .map(|(&pv, &yv)| -yv * pv.max(PROB_FLOOR).ln())
        .sum();
    Ok(tape.record(Tensor::scalar(total / voxels), &[p, y], CeBackward))
}

/// `lambda_dice * dice + lambda_ce * ce`, returning `(total, dice, ce)`.
pub fn total_loss(tape: &mut Tape, p: &Var, y: &Var, cfg: &LossConfig) -> Result<(Var, Var, Var)> {
    let dice = dice_loss(tape, p, y, cfg)?;
    let ce = ce_loss(tape, p, y)?;
    let a = ops::affine(tape, &dice, cfg.lambda_dice, 0.0);
    let b = ops::affine(tape, &ce, cfg.lambda_ce, 0.0);
    let total = ops::add(tape, &a, &b)?;
    Ok((total, dice, ce))
}
