//! Plain convolution, projection and normalization layers.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::params::{Init, Module, Param};
use crate::ops::{self, default_groups};

/// Implements [`Module`] by visiting the listed fields in order.
macro_rules! module_fields {
    ($ty:ty { $($field:ident),* $(,)? }) => {
        impl $crate::nn::Module for $ty {
            fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a $crate::nn::Param)) {
                $( $crate::nn::Module::visit(&self.$field, f); )*
            }

            fn visit_mut(&mut self, f: &mut dyn FnMut(&mut $crate::nn::Param)) {
                $( $crate::nn::Module::visit_mut(&mut self.$field, f); )*
            }
        }
    };
}
pub(crate) use module_fields;

impl Module for Param {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        f(self)
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(self)
    }
}

impl<T: Module> Module for Option<T> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        if let Some(m) = self {
            m.visit(f)
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        if let Some(m) = self {
            m.visit_mut(f)
        }
    }
}

impl<T: Module> Module for Vec<T> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        self.iter().for_each(|m| m.visit(f))
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.iter_mut().for_each(|m| m.visit_mut(f))
    }
}

/// Dense cubic-kernel convolution with bias.
#[derive(Clone, Debug)]
pub struct Conv3d {
    pub weight: Param,
    pub bias: Param,
    pub stride: usize,
    pub padding: usize,
}

module_fields!(Conv3d { weight, bias });

impl Conv3d {
    pub fn new(init: &mut Init, c_in: usize, c_out: usize, k: usize, stride: usize, padding: usize) -> Self {
        Conv3d {
            weight: init.he_normal("weight", vec![c_out, c_in, k, k, k], c_in * k * k * k),
            bias: init.zeros("bias", vec![c_out]),
            stride,
            padding,
        }
    }

    /// 3x3x3, stride 1, padding 1.
    pub fn same(init: &mut Init, c_in: usize, c_out: usize) -> Self {
        Self::new(init, c_in, c_out, 3, 1, 1)
    }

    pub fn c_in(&self) -> usize {
        self.weight.tensor().dims()[1]
    }

    pub fn c_out(&self) -> usize {
        self.weight.tensor().dims()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.tensor().dims()[2]
    }

    pub fn forward(&self, tape: &mut Tape, x: &Var) -> Result<Var> {
        let w = self.weight.var(tape);
        let b = self.bias.var(tape);
        ops::conv3d(tape, x, &w, Some(&b), self.stride, self.padding)
    }

    /// Multiply-accumulates for an input of spatial extents `[D, H, W]`.
    pub fn macs(&self, spatial: [usize; 3]) -> u64 {
        let k = self.kernel();
        let out: usize = spatial
            .iter()
            .map(|&n| (n + 2 * self.padding - k) / self.stride + 1)
            .product();
        (out * self.c_in() * self.c_out() * k * k * k) as u64
    }
}

/// 1x1x1 channel mixing, optionally with bias. Also used as the affine map
/// of pooled `[B, F]` vectors.
#[derive(Clone, Debug)]
pub struct Pointwise {
    pub weight: Param,
    pub bias: Option<Param>,
}

module_fields!(Pointwise { weight, bias });

impl Pointwise {
    pub fn new(init: &mut Init, c_in: usize, c_out: usize, bias: bool) -> Self {
        Pointwise {
            weight: init.he_normal("weight", vec![c_out, c_in], c_in),
            bias: bias.then(|| init.zeros("bias", vec![c_out])),
        }
    }

    /// Weight initialized to zero.
    pub fn zeroed(init: &mut Init, c_in: usize, c_out: usize, bias: bool) -> Self {
        Pointwise {
            weight: init.zeros("weight", vec![c_out, c_in]),
            bias: bias.then(|| init.zeros("bias", vec![c_out])),
        }
    }

    pub fn c_in(&self) -> usize {
        self.weight.tensor().dims()[1]
    }

    pub fn c_out(&self) -> usize {
        self.weight.tensor().dims()[0]
    }

    pub fn forward(&self, tape: &mut Tape, x: &Var) -> Result<Var> {
        let w = self.weight.var(tape);
        let b = self.bias.as_ref().map(|b| b.var(tape));
        ops::pointwise_conv3d(tape, x, &w, b.as_ref())
    }

    pub fn macs(&self, positions: usize) -> u64 {
        (positions * self.c_in() * self.c_out()) as u64
    }
}

/// Kernel-2, stride-2 transposed convolution with bias.
#[derive(Clone, Debug)]
pub struct Upsample {
    pub weight: Param,
    pub bias: Param,
}

module_fields!(Upsample { weight, bias });

impl Upsample {
    pub fn new(init: &mut Init, c_in: usize, c_out: usize) -> Self {
        Upsample {
            weight: init.he_normal("weight", vec![c_in, c_out, 2, 2, 2], c_in),
            bias: init.zeros("bias", vec![c_out]),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: &Var) -> Result<Var> {
        let w = self.weight.var(tape);
        let b = self.bias.var(tape);
        ops::transposed_conv3d(tape, x, &w, Some(&b))
    }

    pub fn macs(&self, spatial: [usize; 3]) -> u64 {
        let d = self.weight.tensor().dims();
        (spatial.iter().product::<usize>() * 8 * d[0] * d[1]) as u64
    }
}

pub const NORM_EPS: f64 = 1e-5;

/// Group normalization with a learned per-channel affine pair.
#[derive(Clone, Debug)]
pub struct GroupNorm {
    pub gamma: Param,
    pub beta: Param,
    pub groups: usize,
}

module_fields!(GroupNorm { gamma, beta });

impl GroupNorm {
    pub fn new(init: &mut Init, channels: usize) -> Self {
        GroupNorm {
            gamma: init.ones("gamma", vec![channels]),
            beta: init.zeros("beta", vec![channels]),
            groups: default_groups(channels),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: &Var) -> Result<Var> {
        let g = self.gamma.var(tape);
        let b = self.beta.var(tape);
        ops::group_norm(tape, x, self.groups, &g, &b, NORM_EPS)
    }
}

/// Group normalization whose affine pair is looked up per conditioning
/// bucket, with a learned default pair when no bucket is given.
#[derive(Clone, Debug)]
pub struct ScannerAwareNorm {
    pub gamma_table: Param,
    pub beta_table: Param,
    pub default_gamma: Param,
    pub default_beta: Param,
    pub groups: usize,
}

module_fields!(ScannerAwareNorm { gamma_table, beta_table, default_gamma, default_beta });

impl ScannerAwareNorm {
    pub fn new(init: &mut Init, channels: usize, buckets: usize) -> Self {
        Self::with_groups(init, channels, buckets, default_groups(channels))
    }

    pub fn with_groups(init: &mut Init, channels: usize, buckets: usize, groups: usize) -> Self {
        ScannerAwareNorm {
            gamma_table: init.ones("gamma_table", vec![buckets, channels]),
            beta_table: init.zeros("beta_table", vec![buckets, channels]),
            default_gamma: init.ones("default_gamma", vec![channels]),
            default_beta: init.zeros("default_beta", vec![channels]),
            groups,
        }
    }

    pub fn buckets(&self) -> usize {
        self.gamma_table.tensor().dims()[0]
    }

    pub fn forward(&self, tape: &mut Tape, x: &Var, bucket: Option<usize>) -> Result<Var> {
        let (g, b) = match bucket {
            Some(s) if s >= self.buckets() => {
                return Err(Error::BucketOutOfRange { bucket: s, buckets: self.buckets() })
            }
            Some(s) => {
                let gt = self.gamma_table.var(tape);
                let bt = self.beta_table.var(tape);
                (ops::select_row(tape, &gt, s)?, ops::select_row(tape, &bt, s)?)
            }
            None => (self.default_gamma.var(tape), self.default_beta.var(tape)),
        };
        ops::group_norm(tape, x, self.groups, &g, &b, NORM_EPS)
    }
}

/// Normalization choice inside a block.
#[derive(Clone, Debug)]
pub enum Norm {
    Group(GroupNorm),
    ScannerAware(ScannerAwareNorm),
}

impl Module for Norm {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        match self {
            Norm::Group(n) => n.visit(f),
            Norm::ScannerAware(n) => n.visit(f),
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        match self {
            Norm::Group(n) => n.visit_mut(f),
            Norm::ScannerAware(n) => n.visit_mut(f),
        }
    }
}

impl Norm {
    pub fn forward(&self, tape: &mut Tape, x: &Var, bucket: Option<usize>) -> Result<Var> {
        match self {
            Norm::Group(n) => n.forward(tape, x),
            Norm::ScannerAware(n) => n.forward(tape, x, bucket),
        }
    }
}
