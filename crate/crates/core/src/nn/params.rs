use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{Tape, Var};
use crate::hash::fnv1a64;
use crate::tensor::Tensor;

/// A named tensor owned by a layer.
#[derive(Clone, Debug)]
pub struct Param {
    name: String,
    tensor: Tensor,
    learnable: bool,
}

impl Param {
    pub fn new(name: impl Into<String>, tensor: Tensor) -> Self {
        Param { name: name.into(), tensor, learnable: true }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn tensor_mut(&mut self) -> &mut Tensor {
        &mut self.tensor
    }

    pub fn learnable(&self) -> bool {
        self.learnable
    }

    pub fn numel(&self) -> usize {
        self.tensor.numel()
    }

    /// Puts the parameter on the tape as a gradient-tracked leaf.
    pub fn var(&self, tape: &mut Tape) -> Var {
        if self.learnable {
            tape.param(&self.name, &self.tensor)
        } else {
            tape.constant(self.tensor.clone())
        }
    }
}

/// Anything that owns parameters.
pub trait Module {
    /// Visits every parameter exactly once, in a fixed order.
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param));

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param));

    fn layer_params(&self) -> LayerParams {
        let mut entries = Vec::new();
        self.visit(&mut |p| {
            entries.push(ParamEntry {
                name: p.name.clone(),
                dims: p.tensor.dims().to_vec(),
                numel: p.numel(),
                learnable: p.learnable,
            })
        });
        LayerParams { entries }
    }

    /// Total number of learnable scalars.
    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |p| {
            if p.learnable {
                n += p.numel();
            }
        });
        n
    }

    /// Copies gradients from a tape after backward into each parameter's
    /// grad slot. Parameters absent from the tape get zeros.
    fn assign_grads(&mut self, tape: &Tape) {
        let grads = tape.param_grads();
        self.visit_mut(&mut |p| {
            let g = grads.get(&p.name).cloned().unwrap_or_else(|| vec![0.0; p.numel()]);
            p.tensor.set_grad(g).expect("gradient length matches parameter");
        });
    }

    fn zero_grads(&mut self) {
        self.visit_mut(&mut |p| p.tensor.zero_grad());
    }
}

/// Descriptor of one parameter, as reported by [`Module::layer_params`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ParamEntry {
    pub name: String,
    pub dims: Vec<usize>,
    pub numel: usize,
    pub learnable: bool,
}

/// Ordered parameter listing of a layer.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct LayerParams {
    pub entries: Vec<ParamEntry>,
}

impl LayerParams {
    pub fn param_count(&self) -> usize {
        self.entries.iter().filter(|e| e.learnable).map(|e| e.numel).sum()
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.name.as_str()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

/// Hands out parameters under a dotted name prefix. Every random tensor
/// draws from its own stream keyed by `(seed, full name)`, so two models
/// built from one seed agree on every parameter they share by name.
#[derive(Clone, Debug)]
pub struct Init {
    prefix: String,
    seed: u64,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Init { prefix: String::new(), seed }
    }

    /// Child scope `prefix.name`.
    pub fn pp(&mut self, name: &str) -> Init {
        Init { prefix: self.full_name(name), seed: self.seed }
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    /// Zero-mean normal with standard deviation `sqrt(2 / fan_in)`.
    pub fn he_normal(&mut self, name: &str, dims: Vec<usize>, fan_in: usize) -> Param {
        let std = (2.0 / fan_in as f64).sqrt();
        let name = self.full_name(name);
        let mut rng = init_rng(self.seed);
        rng.set_stream(fnv1a64(name.as_bytes()));
        Param::new(name, Tensor::randn(dims, std, &mut rng))
    }

    pub fn zeros(&mut self, name: &str, dims: Vec<usize>) -> Param {
        Param::new(self.full_name(name), Tensor::zeros(dims))
    }

    pub fn ones(&mut self, name: &str, dims: Vec<usize>) -> Param {
        Param::new(self.full_name(name), Tensor::ones(dims))
    }
}

/// Generator used for weight initialization.
pub fn init_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
