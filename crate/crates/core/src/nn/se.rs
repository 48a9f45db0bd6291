use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::nn::layers::{module_fields, Pointwise};
use crate::nn::params::Init;
use crate::ops::{self, PoolMode};

/// Squeeze-and-excitation channel recalibration:
/// `x * sigmoid(W2 gelu(W1 mean(x)))`.
#[derive(Clone, Debug)]
pub struct SqueezeExcite {
    pub reduce: Pointwise,
    pub expand: Pointwise,
}

module_fields!(SqueezeExcite { reduce, expand });

/// Hidden width `max(1, C / r)`.
pub fn se_hidden(channels: usize, reduction: usize) -> usize {
    (channels / reduction.max(1)).max(1)
}

impl SqueezeExcite {
    pub fn new(init: &mut Init, channels: usize, reduction: usize) -> Self {
        let hidden = se_hidden(channels, reduction);
        SqueezeExcite {
            reduce: Pointwise::new(&mut init.pp("reduce"), channels, hidden, true),
            expand: Pointwise::new(&mut init.pp("expand"), hidden, channels, true),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: &Var) -> Result<Var> {
        let squeezed = ops::pool(tape, x, PoolMode::GlobalMean)?;
        let h = self.reduce.forward(tape, &squeezed)?;
        let h = ops::gelu(tape, &h);
        let gate = self.expand.forward(tape, &h)?;
        let gate = ops::sigmoid(tape, &gate);
        ops::mul(tape, x, &gate)
    }
}
