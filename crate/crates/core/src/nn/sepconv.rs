//! Depthwise-separable 3x3x3 convolution.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::nn::layers::{module_fields, Conv3d};
use crate::nn::params::{Init, Module, Param};
use crate::ops;

const K: usize = 3;
const K3: usize = K * K * K;

/// Depthwise 3x3x3 filter (no bias) followed by a pointwise map with bias.
#[derive(Clone, Debug)]
pub struct SepConv {
    pub depthwise: Param,
    pub pointwise: Param,
    pub bias: Param,
}

module_fields!(SepConv { depthwise, pointwise, bias });

impl SepConv {
    pub fn new(init: &mut Init, c_in: usize, c_out: usize) -> Self {
        SepConv {
            depthwise: init.he_normal("depthwise", vec![c_in, K, K, K], K3),
            pointwise: init.he_normal("pointwise", vec![c_out, c_in], c_in),
            bias: init.zeros("bias", vec![c_out]),
        }
    }

    pub fn c_in(&self) -> usize {
        self.pointwise.tensor().dims()[1]
    }

    pub fn c_out(&self) -> usize {
        self.pointwise.tensor().dims()[0]
    }

    pub fn forward(&self, tape: &mut Tape, x: &Var) -> Result<Var> {
        let dw = self.depthwise.var(tape);
        let v = ops::depthwise_conv3d(tape, x, &dw, 1, 1)?;
        let pw = self.pointwise.var(tape);
        let b = self.bias.var(tape);
        ops::pointwise_conv3d(tape, &v, &pw, Some(&b))
    }

    pub fn macs(&self, spatial: [usize; 3]) -> u64 {
        let n: usize = spatial.iter().product();
        (n * (self.c_in() * K3 + self.c_in() * self.c_out())) as u64
    }
}

/// Learnable count of a separable 3x3x3 layer: `Cin*27 + Cin*Cout + Cout`.
pub fn separable_param_count(c_in: usize, c_out: usize) -> usize {
    c_in * K3 + c_in * c_out + c_out
}

/// Learnable count of the dense 3x3x3 equivalent: `Cin*Cout*27 + Cout`.
pub fn dense_param_count(c_in: usize, c_out: usize) -> usize {
    c_in * c_out * K3 + c_out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvKind {
    Dense,
    Separable,
}

/// The 3x3x3 convolution slot of a block.
#[derive(Clone, Debug)]
pub enum ConvUnit {
    Dense(Conv3d),
    Separable(SepConv),
}

impl Module for ConvUnit {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        match self {
            ConvUnit::Dense(c) => c.visit(f),
            ConvUnit::Separable(c) => c.visit(f),
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        match self {
            ConvUnit::Dense(c) => c.visit_mut(f),
            ConvUnit::Separable(c) => c.visit_mut(f),
        }
    }
}

impl ConvUnit {
    pub fn new(init: &mut Init, kind: ConvKind, c_in: usize, c_out: usize) -> Self {
        match kind {
            ConvKind::Dense => ConvUnit::Dense(Conv3d::same(init, c_in, c_out)),
            ConvKind::Separable => ConvUnit::Separable(SepConv::new(init, c_in, c_out)),
        }
    }

    pub fn kind(&self) -> ConvKind {
        match self {
            ConvUnit::Dense(_) => ConvKind::Dense,
            ConvUnit::Separable(_) => ConvKind::Separable,
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: &Var) -> Result<Var> {
        match self {
            ConvUnit::Dense(c) => c.forward(tape, x),
            ConvUnit::Separable(c) => c.forward(tape, x),
        }
    }

    pub fn macs(&self, spatial: [usize; 3]) -> u64 {
        match self {
            ConvUnit::Dense(c) => c.macs(spatial),
            ConvUnit::Separable(c) => c.macs(spatial),
        }
    }
}
