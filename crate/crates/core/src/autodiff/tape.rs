//! Reverse-mode automatic differentiation over an explicit operation record.
//!
//! Every primitive executed through a recording [`Tape`] appends one entry
//! holding its output value, handles to its inputs and a backward rule.
//! [`Tape::backward`] replays the record in reverse, accumulating gradients
//! in a fixed order so repeated runs are bit-identical.

use std::collections::BTreeMap;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Backward rule of a recorded primitive.
///
/// Receives the input values, the output value and the upstream gradient
/// and returns one gradient buffer per input (`None` where the input does
/// not need one).
pub trait Backward {
    fn name(&self) -> &'static str;

    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>>;
}

struct Node {
    slot: Option<usize>,
    value: Tensor,
    parents: Vec<Var>,
    rule: Option<Box<dyn Backward>>,
    param: Option<String>,
}

/// Handle to a value produced under a tape.
#[derive(Clone)]
pub struct Var(Rc<Node>);

impl Var {
    pub fn value(&self) -> &Tensor {
        &self.0.value
    }

    pub fn dims(&self) -> &[usize] {
        self.0.value.dims()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.slot.is_some()
    }

    /// Parameter name, for leaves created with [`Tape::param`].
    pub fn param_name(&self) -> Option<&str> {
        self.0.param.as_deref()
    }
}

impl std::fmt::Debug for Var {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("slot", &self.0.slot)
            .field("shape", self.0.value.shape())
            .finish()
    }
}

/// Ordered record of executed primitives.
pub struct Tape {
    recording: bool,
    nodes: Vec<Var>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    /// A tape that records operations for a later backward pass.
    pub fn new() -> Self {
        Tape { recording: true, nodes: Vec::new(), grads: Vec::new(), backward_done: false }
    }

    /// A tape that records nothing; intermediate values are freed as soon as
    /// their handles drop.
    pub fn inference() -> Self {
        Tape { recording: false, ..Self::new() }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    /// Number of recorded entries.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        Var(Rc::new(Node { slot: None, value, parents: Vec::new(), rule: None, param: None }))
    }

    /// A gradient-tracked input that is not a named parameter.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, None)
    }

    /// A named learnable parameter. The tape holds its own copy of the data.
    pub fn param(&mut self, name: &str, value: &Tensor) -> Var {
        let mut v = value.clone();
        v.clear_grad();
        self.push_leaf(v, Some(name.to_string()))
    }

    fn push_leaf(&mut self, value: Tensor, param: Option<String>) -> Var {
        if !self.recording {
            return Var(Rc::new(Node { slot: None, value, parents: Vec::new(), rule: None, param }));
        }
        let slot = self.nodes.len();
        let var = Var(Rc::new(Node { slot: Some(slot), value, parents: Vec::new(), rule: None, param }));
        self.nodes.push(var.clone());
        var
    }

    /// Records the result of a primitive. Inputs that do not require a
    /// gradient are kept only for their values.
    pub fn record(&mut self, value: Tensor, inputs: &[&Var], rule: impl Backward + 'static) -> Var {
        let needs = self.recording && inputs.iter().any(|v| v.requires_grad());
        if !needs {
            return self.constant(value);
        }
        let slot = self.nodes.len();
        let var = Var(Rc::new(Node {
            slot: Some(slot),
            value,
            parents: inputs.iter().map(|v| (*v).clone()).collect(),
            rule: Some(Box::new(rule)),
            param: None,
        }));
        self.nodes.push(var.clone());
        var
    }

    /// Populates gradients of every recorded value with respect to `loss`.
    pub fn backward(&mut self, loss: &Var) -> Result<()> {
        if loss.value().numel() != 1 {
            return Err(Error::NonScalarLoss(loss.dims().to_vec()));
        }
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        self.backward_done = true;
        self.grads = vec![None; self.nodes.len()];
        let Some(root) = loss.0.slot else {
            return Ok(());
        };
        self.grads[root] = Some(vec![1.0]);
        for slot in (0..=root).rev() {
            let node = &self.nodes[slot].0;
            let Some(rule) = node.rule.as_ref() else { continue };
            let Some(grad) = self.grads[slot].take() else { continue };
            let inputs: Vec<&Tensor> = node.parents.iter().map(|p| p.value()).collect();
            let parent_grads = rule.backward(&inputs, &node.value, &grad);
            debug_assert_eq!(parent_grads.len(), node.parents.len(), "{}", rule.name());
            for (parent, pg) in node.parents.iter().zip(parent_grads) {
                let (Some(ps), Some(pg)) = (parent.0.slot, pg) else { continue };
                debug_assert_eq!(pg.len(), parent.value().numel(), "{}", rule.name());
                match &mut self.grads[ps] {
                    Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, g)| *a += g),
                    empty => *empty = Some(pg),
                }
            }
            // keep gradients only on leaves
        }
        Ok(())
    }

    /// Gradient of a leaf after [`Tape::backward`]; zeros when the leaf had
    /// no path to the loss.
    pub fn grad(&self, var: &Var) -> Option<Vec<f64>> {
        let slot = var.0.slot?;
        if !self.backward_done || var.0.rule.is_some() {
            return None;
        }
        Some(match self.grads.get(slot).and_then(|g| g.clone()) {
            Some(g) => g,
            None => vec![0.0; var.value().numel()],
        })
    }

    /// Gradients of all named parameters, summed over repeated uses of the
    /// same name.
    pub fn param_grads(&self) -> BTreeMap<String, Vec<f64>> {
        let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for (slot, var) in self.nodes.iter().enumerate() {
            let Some(name) = var.param_name() else { continue };
            let n = var.value().numel();
            let g = self.grads.get(slot).and_then(|g| g.as_deref());
            let entry = out.entry(name.to_string()).or_insert_with(|| vec![0.0; n]);
            if let Some(g) = g {
                entry.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
        }
        out
    }

    /// Zeroes every gradient slot and allows another backward pass over the
    /// same record.
    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
        self.backward_done = false;
    }

    /// Drops the whole record.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.grads.clear();
        self.backward_done = false;
    }

    /// Names of the recorded primitives, in execution order.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.nodes
            .iter()
            .map(|v| v.0.rule.as_ref().map_or("leaf", |r| r.name()))
            .collect()
    }
}
