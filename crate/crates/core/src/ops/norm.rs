use crate::autodiff::{Backward, Tape, Var};
use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

struct GroupNormBackward {
    groups: usize,
    xhat: Vec<f64>,
    rstd: Vec<f64>,
}

/// Pre-affine group normalization; returns `(xhat, rstd per (b, g))`.
pub(crate) fn normalize_groups(x: &Tensor, groups: usize, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let d = x.dims();
    let (b, c) = (d[0], d[1]);
    let s = x.shape().spatial_numel();
    let per = c / groups * s;
    let mut xhat = vec![0.0; x.numel()];
    let mut rstds = Vec::with_capacity(b * groups);
    for (chunk, out) in x.data().chunks_exact(per).zip(xhat.chunks_exact_mut(per)) {
        let n = per as f64;
        let mean = chunk.iter().sum::<f64>() / n;
        let var = chunk.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let rstd = 1.0 / (var + eps).sqrt();
        for (o, v) in out.iter_mut().zip(chunk) {
            *o = (v - mean) * rstd;
        }
        rstds.push(rstd);
    }
    (xhat, rstds)
}

impl Backward for GroupNormBackward {
    fn name(&self) -> &'static str {
        "group_norm"
    }

    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let d = output.dims();
        let (b, c) = (d[0], d[1]);
        let s = output.shape().spatial_numel();
        let cpg = c / self.groups;
        let gamma = inputs[1].data();
        let mut gx = vec![0.0; grad.len()];
        let mut ggamma = vec![0.0; c];
        let mut gbeta = vec![0.0; c];
        for bi in 0..b {
            for g in 0..self.groups {
                let start = (bi * c + g * cpg) * s;
                let len = cpg * s;
                let n = len as f64;
                let (mut sum_g, mut sum_gx) = (0.0, 0.0);
                for j in 0..len {
                    let ch = g * cpg + j / s;
                    let gh = grad[start + j] * gamma[ch];
                    sum_g += gh;
                    sum_gx += gh * self.xhat[start + j];
                    ggamma[ch] += grad[start + j] * self.xhat[start + j];
                    gbeta[ch] += grad[start + j];
                }
                let (mg, mgx) = (sum_g / n, sum_gx / n);
                let rstd = self.rstd[bi * self.groups + g];
                for j in 0..len {
                    let ch = g * cpg + j / s;
                    let gh = grad[start + j] * gamma[ch];
                    gx[start + j] = rstd * (gh - mg - self.xhat[start + j] * mgx);
                }
            }
        }
        vec![Some(gx), Some(ggamma), Some(gbeta)]
    }
}

/// Group normalization over `[B, C, ...]` followed by the per-channel affine
/// map `gamma * xhat + beta` with `gamma, beta: [C]`.
pub fn group_norm(tape: &mut Tape, x: &Var, groups: usize, gamma: &Var, beta: &Var, eps: f64) -> Result<Var> {
    const OP: &str = "group_norm";
    let d = x.dims();
    if d.len() < 3 {
        return Err(shape_err(OP, format!("input needs [B, C, ...], got {d:?}")));
    }
    let c = d[1];
    if groups == 0 || c % groups != 0 {
        return Err(shape_err(OP, format!("{groups} groups do not divide {c} channels")));
    }
    if gamma.dims() != [c] || beta.dims() != [c] {
        return Err(shape_err(OP, format!("affine {:?}/{:?} for {c} channels", gamma.dims(), beta.dims())));
    }
    let (xhat, rstd) = normalize_groups(x.value(), groups, eps);
    let s = x.value().shape().spatial_numel();
    let (gm, bt) = (gamma.value().data(), beta.value().data());
    let y: Vec<f64> = xhat
        .iter()
        .enumerate()
        .map(|(j, &v)| {
            let ch = (j / s) % c;
            gm[ch] * v + bt[ch]
        })
        .collect();
    let y = Tensor::from_vec(d.to_vec(), y)?.ensure_finite(OP)?;
    Ok(tape.record(y, &[x, gamma, beta], GroupNormBackward { groups, xhat, rstd }))
}

/// Group count used throughout the network: 8 when it divides `channels`,
/// otherwise the largest divisor not exceeding 8.
pub fn default_groups(channels: usize) -> usize {
    (1..=8.min(channels)).rev().find(|g| channels % g == 0).unwrap_or(1)
}
