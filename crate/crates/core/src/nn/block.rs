use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::csa::CrossSliceAttention;
use crate::nn::layers::{module_fields, Conv3d, GroupNorm, Norm, Pointwise, ScannerAwareNorm};
use crate::nn::params::Init;
use crate::nn::se::SqueezeExcite;
use crate::nn::sepconv::{ConvKind, ConvUnit};
use crate::ops::{self, default_groups};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    Group,
    ScannerAware,
}

/// Per-stage choices of a [`LightweightBlock`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub c_in: usize,
    pub c_out: usize,
    pub conv_kind: ConvKind,
    pub norm_kind: NormKind,
    pub use_csa: bool,
    pub se_reduction: usize,
    pub csa_rank: usize,
    pub groups: usize,
    /// Bucket count for scanner-aware normalization.
    pub buckets: usize,
}

impl BlockConfig {
    pub fn new(c_in: usize, c_out: usize, conv_kind: ConvKind, norm_kind: NormKind) -> Self {
        BlockConfig {
            c_in,
            c_out,
            conv_kind,
            norm_kind,
            use_csa: false,
            se_reduction: 4,
            csa_rank: crate::nn::csa_rank(c_out),
            groups: default_groups(c_out),
            buckets: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.c_in == 0 || self.c_out == 0 || self.se_reduction == 0 || self.csa_rank == 0 {
            return Err(Error::InvalidArgument(format!("degenerate block config {self:?}")));
        }
        if self.groups == 0 || self.c_out % self.groups != 0 {
            return Err(Error::InvalidArgument(format!(
                "{} groups do not divide {} channels",
                self.groups, self.c_out
            )));
        }
        Ok(())
    }
}

/// Residual unit: `gelu(SE(N2(C2(gelu(N1(C1 h))))) [+ CSA] + Proj h)`.
#[derive(Clone, Debug)]
pub struct LightweightBlock {
    pub conv1: ConvUnit,
    pub norm1: Norm,
    pub conv2: ConvUnit,
    pub norm2: Norm,
    pub se: SqueezeExcite,
    pub csa: Option<CrossSliceAttention>,
    /// Present only when input and output channels differ.
    pub proj: Option<Pointwise>,
}

module_fields!(LightweightBlock { conv1, norm1, conv2, norm2, se, csa, proj });

fn make_norm(init: &mut Init, cfg: &BlockConfig) -> Norm {
    match cfg.norm_kind {
        NormKind::Group => {
            let mut n = GroupNorm::new(init, cfg.c_out);
            n.groups = cfg.groups;
            Norm::Group(n)
        }
        NormKind::ScannerAware => {
            Norm::ScannerAware(ScannerAwareNorm::with_groups(init, cfg.c_out, cfg.buckets, cfg.groups))
        }
    }
}

impl LightweightBlock {
    pub fn new(init: &mut Init, cfg: &BlockConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(LightweightBlock {
            conv1: ConvUnit::new(&mut init.pp("conv1"), cfg.conv_kind, cfg.c_in, cfg.c_out),
            norm1: make_norm(&mut init.pp("norm1"), cfg),
            conv2: ConvUnit::new(&mut init.pp("conv2"), cfg.conv_kind, cfg.c_out, cfg.c_out),
            norm2: make_norm(&mut init.pp("norm2"), cfg),
            se: SqueezeExcite::new(&mut init.pp("se"), cfg.c_out, cfg.se_reduction),
            csa: cfg.use_csa.then(|| CrossSliceAttention::new(&mut init.pp("csa"), cfg.c_out, cfg.csa_rank)),
            proj: (cfg.c_in != cfg.c_out).then(|| Pointwise::new(&mut init.pp("proj"), cfg.c_in, cfg.c_out, true)),
        })
    }

    pub fn forward(&self, tape: &mut Tape, h: &Var, bucket: Option<usize>) -> Result<Var> {
        let z = self.conv1.forward(tape, h)?;
        let z = self.norm1.forward(tape, &z, bucket)?;
        let z = ops::gelu(tape, &z);
        let z = self.conv2.forward(tape, &z)?;
        let z = self.norm2.forward(tape, &z, bucket)?;
        let mut z = self.se.forward(tape, &z)?;
        if let Some(csa) = &self.csa {
            // the attention layer already carries its own residual
            z = csa.forward(tape, &z)?;
        }
        let skip = match &self.proj {
            Some(p) => p.forward(tape, h)?,
            None => h.clone(),
        };
        let o = ops::add(tape, &z, &skip)?;
        Ok(ops::gelu(tape, &o))
    }

    pub fn csa(&self) -> Option<&CrossSliceAttention> {
        self.csa.as_ref()
    }

    pub fn c_out(&self) -> usize {
        match &self.conv2 {
            ConvUnit::Dense(c) => c.c_out(),
            ConvUnit::Separable(c) => c.c_out(),
        }
    }

    /// `(convolution and projection, CSA projections, CSA attention)`
    /// multiply-accumulates at spatial extents `[D, H, W]`.
    pub fn macs(&self, spatial: [usize; 3]) -> (u64, u64, u64) {
        let n: usize = spatial.iter().product();
        let mut conv = self.conv1.macs(spatial) + self.conv2.macs(spatial);
        conv += self.se.reduce.macs(1) + self.se.expand.macs(1);
        if let Some(p) = &self.proj {
            conv += p.macs(n);
        }
        let (cp, ca) = self.csa.as_ref().map_or((0, 0), |c| c.macs(spatial));
        (conv, cp, ca)
    }
}

/// Strided 3x3x3 convolution halving every spatial extent.
#[derive(Clone, Debug)]
pub struct Downsample {
    pub conv: Conv3d,
}

module_fields!(Downsample { conv });

impl Downsample {
    pub fn new(init: &mut Init, c_in: usize, c_out: usize) -> Self {
        Downsample { conv: Conv3d::new(&mut init.pp("conv"), c_in, c_out, 3, 2, 1) }
    }

    pub fn forward(&self, tape: &mut Tape, x: &Var) -> Result<Var> {
        if let Some(&odd) = x.dims()[2..].iter().find(|&&n| n % 2 != 0) {
            return Err(Error::InvalidArgument(format!(
                "downsample needs even spatial extents, got {odd} in {:?}",
                x.dims()
            )));
        }
        self.conv.forward(tape, x)
    }
}

/// Concatenation followed by a pointwise map to the skip width, GN and GELU.
#[derive(Clone, Debug)]
pub struct SimpleFusion {
    pub proj: Pointwise,
    pub norm: GroupNorm,
}

module_fields!(SimpleFusion { proj, norm });

impl SimpleFusion {
    pub fn new(init: &mut Init, c_dec: usize, c_enc: usize) -> Self {
        SimpleFusion {
            proj: Pointwise::new(&mut init.pp("proj"), c_dec + c_enc, c_enc, true),
            norm: GroupNorm::new(&mut init.pp("norm"), c_enc),
        }
    }

    pub fn forward(&self, tape: &mut Tape, f_dec: &Var, f_enc: &Var) -> Result<Var> {
        let joint = ops::concat_channels(tape, f_dec, f_enc)?;
        let y = self.proj.forward(tape, &joint)?;
        let y = self.norm.forward(tape, &y)?;
        Ok(ops::gelu(tape, &y))
    }
}

/// `pointwise(gelu(GN(conv3x3x3(f))))` producing class logits.
#[derive(Clone, Debug)]
pub struct SegmentationHead {
    pub conv: Conv3d,
    pub norm: GroupNorm,
    pub classify: Pointwise,
}

module_fields!(SegmentationHead { conv, norm, classify });

impl SegmentationHead {
    /// The final classifier starts at zero, so a fresh head predicts the
    /// uniform posterior.
    pub fn new(init: &mut Init, channels: usize, classes: usize) -> Self {
        SegmentationHead {
            conv: Conv3d::same(&mut init.pp("conv"), channels, channels),
            norm: GroupNorm::new(&mut init.pp("norm"), channels),
            classify: Pointwise::zeroed(&mut init.pp("classify"), channels, classes, true),
        }
    }

    pub fn forward(&self, tape: &mut Tape, f: &Var) -> Result<Var> {
        let y = self.conv.forward(tape, f)?;
        let y = self.norm.forward(tape, &y)?;
        let y = ops::gelu(tape, &y);
        self.classify.forward(tape, &y)
    }
}

