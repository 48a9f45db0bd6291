//! Central finite-difference checking of analytic gradients.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::Module;
use crate::tensor::Tensor;

/// Outcome of a gradient check.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// `max |analytic - numeric| / max(|analytic|, |numeric|, DENOM_FLOOR)`.
    pub max_rel_error: f64,
    /// Number of scalar entries compared.
    pub checked: usize,
    /// Location of the worst entry.
    pub worst: String,
}

impl GradCheckReport {
    fn new() -> Self {
        GradCheckReport { max_rel_error: 0.0, checked: 0, worst: String::new() }
    }

    fn compare(&mut self, what: impl FnOnce() -> String, analytic: f64, numeric: f64) {
        let denom = analytic.abs().max(numeric.abs()).max(DENOM_FLOOR);
        let rel = (analytic - numeric).abs() / denom;
        self.checked += 1;
        if rel > self.max_rel_error || self.worst.is_empty() {
            self.max_rel_error = rel;
            self.worst = format!("{} (analytic {analytic:.3e}, numeric {numeric:.3e})", what());
        }
    }
}

/// Gradients smaller than this are compared in absolute terms; parameters
/// whose exact gradient is zero (a bias feeding a normalization) would
/// otherwise compare rounding noise against zero.
pub const DENOM_FLOOR: f64 = 1e-6;

fn scalar_of(v: &Var) -> Result<f64> {
    if v.value().numel() != 1 {
        return Err(Error::NonScalarLoss(v.dims().to_vec()));
    }
    let s = v.value().item();
    if !s.is_finite() {
        return Err(Error::NonFinite("grad_check closure".into()));
    }
    Ok(s)
}

fn perturbation(x: f64, step: f64) -> f64 {
    step * x.abs().max(1.0)
}

/// Fourth-order central difference `(-f(2h) + 8f(h) - 8f(-h) + f(-2h)) / 12h`.
fn stencil(orig: f64, h: f64, mut eval: impl FnMut(f64) -> Result<f64>) -> Result<f64> {
    let p2 = eval(orig + 2.0 * h)?;
    let p1 = eval(orig + h)?;
    let m1 = eval(orig - h)?;
    let m2 = eval(orig - 2.0 * h)?;
    Ok((-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * h))
}

/// Checks the gradient of a scalar closure with respect to every element of
/// every input.
pub fn grad_check<F>(f: F, inputs: &[Tensor], step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::inference();
        let vars: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        scalar_of(&f(&mut tape, &vars)?)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    scalar_of(&loss)?;
    tape.backward(&loss)?;

    let mut report = GradCheckReport::new();
    let mut probe = inputs.to_vec();
    for (ti, var) in vars.iter().enumerate() {
        let analytic = tape.grad(var).expect("leaf gradient");
        for j in 0..probe[ti].numel() {
            let orig = probe[ti].data()[j];
            let h = perturbation(orig, step);
            let numeric = stencil(orig, h, |v| {
                probe[ti].data_mut()[j] = v;
                eval(&probe)
            })?;
            probe[ti].data_mut()[j] = orig;
            report.compare(|| format!("input {ti}[{j}]"), analytic[j], numeric);
        }
    }
    Ok(report)
}

fn perturb_param<M: Module>(module: &mut M, index: usize, elem: usize, value: f64) {
    let mut k = 0;
    module.visit_mut(&mut |p| {
        if k == index {
            p.tensor_mut().data_mut()[elem] = value;
        }
        k += 1;
    });
}

/// Checks gradients of a scalar closure over a module with respect to every
/// learnable parameter element and every input element.
pub fn grad_check_module<M, F>(module: &mut M, inputs: &[Tensor], step: f64, f: F) -> Result<GradCheckReport>
where
    M: Module,
    F: Fn(&M, &mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let loss = f(module, &mut tape, &vars)?;
    scalar_of(&loss)?;
    tape.backward(&loss)?;
    let param_grads = tape.param_grads();
    let input_grads: Vec<Vec<f64>> = vars.iter().map(|v| tape.grad(v).expect("leaf gradient")).collect();
    drop(tape);

    let eval = |m: &M, xs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::inference();
        let vars: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        scalar_of(&f(m, &mut tape, &vars)?)
    };

    let mut report = GradCheckReport::new();
    let mut entries: Vec<(String, Vec<f64>, bool)> = Vec::new();
    module.visit(&mut |p| entries.push((p.name().to_string(), p.tensor().data().to_vec(), p.learnable())));
    for (index, (name, values, learnable)) in entries.iter().enumerate() {
        if !learnable {
            continue;
        }
        let zeros;
        let analytic = match param_grads.get(name) {
            Some(g) => g,
            None => {
                zeros = vec![0.0; values.len()];
                &zeros
            }
        };
        for (j, &orig) in values.iter().enumerate() {
            let h = perturbation(orig, step);
            let numeric = stencil(orig, h, |v| {
                perturb_param(module, index, j, v);
                eval(module, inputs)
            })?;
            perturb_param(module, index, j, orig);
            report.compare(|| format!("{name}[{j}]"), analytic[j], numeric);
        }
    }

    let mut probe = inputs.to_vec();
    for (ti, analytic) in input_grads.iter().enumerate() {
        for j in 0..probe[ti].numel() {
            let orig = probe[ti].data()[j];
            let h = perturbation(orig, step);
            let numeric = stencil(orig, h, |v| {
                probe[ti].data_mut()[j] = v;
                eval(module, &probe)
            })?;
            probe[ti].data_mut()[j] = orig;
            report.compare(|| format!("input {ti}[{j}]"), analytic[j], numeric);
        }
    }
    Ok(report)
}
