use serde::Serialize;

use crate::autodiff::{Tape, Var};
use crate::error::{shape_err, Error, Result};
use crate::nn::{
    dense_param_count, separable_param_count, BlockConfig, Conv3d, ConvKind, ConvUnit, CrossSliceAttention,
    Downsample, GroupNorm, Init, LightweightBlock, Module, NormKind, Param, SegmentationHead, SimpleFusion, Ssfb,
    Upsample,
};
use crate::ops;
use crate::tensor::Tensor;

use super::config::{Ablation, ModelConfig};

/// Stage names in execution order.
pub const STAGES: [&str; 18] = [
    "init", "enc0", "down1", "enc1", "down2", "enc2", "down3", "enc3", "up0", "fuse0", "dec0", "up1", "fuse1",
    "dec1", "up2", "fuse2", "dec2", "head",
];

/// Modality-to-base-width stem: `gelu(GN(conv3x3x3 x))`.
#[derive(Clone, Debug)]
pub struct InitProjection {
    pub conv: Conv3d,
    pub norm: GroupNorm,
}

crate::nn::module_fields!(InitProjection { conv, norm });

impl InitProjection {
    fn forward(&self, tape: &mut Tape, x: &Var) -> Result<Var> {
        let y = self.conv.forward(tape, x)?;
        let y = self.norm.forward(tape, &y)?;
        Ok(ops::gelu(tape, &y))
    }
}

#[derive(Clone, Debug)]
pub enum Fusion {
    Simple(SimpleFusion),
    Ssfb(Ssfb),
}

impl Module for Fusion {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        match self {
            Fusion::Simple(m) => m.visit(f),
            Fusion::Ssfb(m) => m.visit(f),
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        match self {
            Fusion::Simple(m) => m.visit_mut(f),
            Fusion::Ssfb(m) => m.visit_mut(f),
        }
    }
}

impl Fusion {
    pub fn forward(&self, tape: &mut Tape, f_dec: &Var, f_enc: &Var) -> Result<Var> {
        match self {
            Fusion::Simple(m) => m.forward(tape, f_dec, f_enc),
            Fusion::Ssfb(m) => m.forward(tape, f_dec, f_enc),
        }
    }

    pub fn ssfb(&self) -> Option<&Ssfb> {
        match self {
            Fusion::Ssfb(m) => Some(m),
            Fusion::Simple(_) => None,
        }
    }
}

/// The full encoder-decoder.
#[derive(Clone, Debug)]
pub struct DALightModel {
    pub init: InitProjection,
    pub enc0: LightweightBlock,
    pub down1: Downsample,
    pub enc1: LightweightBlock,
    pub down2: Downsample,
    pub enc2: LightweightBlock,
    pub down3: Downsample,
    pub enc3: LightweightBlock,
    pub up0: Upsample,
    pub fuse0: Fusion,
    pub dec0: LightweightBlock,
    pub up1: Upsample,
    pub fuse1: Fusion,
    pub dec1: LightweightBlock,
    pub up2: Upsample,
    pub fuse2: Fusion,
    pub dec2: LightweightBlock,
    pub head: SegmentationHead,
    config: ModelConfig,
}

crate::nn::module_fields!(DALightModel {
    init, enc0, down1, enc1, down2, enc2, down3, enc3, up0, fuse0, dec0, up1, fuse1, dec1, up2, fuse2, dec2, head
});

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct StageCount {
    pub stage: String,
    pub params: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ParamReport {
    pub variant: String,
    pub total: usize,
    pub stages: Vec<StageCount>,
}

/// One 3x3x3 slot whose separable and dense costs are compared.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ConvComparison {
    pub layer: String,
    pub kind: ConvKind,
    pub c_in: usize,
    pub c_out: usize,
    pub separable: usize,
    pub dense: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LayerFlops {
    pub stage: String,
    pub term: &'static str,
    pub macs: u64,
}

impl DALightModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let [w0, w1, w2, w3] = config.widths();
        let ab = config.ablation;
        let sep = if ab == Ablation::NoSepconv { ConvKind::Dense } else { ConvKind::Separable };
        let norm = if ab == Ablation::NoScannerNorm { NormKind::Group } else { NormKind::ScannerAware };
        let with_csa = ab != Ablation::NoCsa;
        let block = |c: usize, kind: ConvKind, csa: bool| BlockConfig {
            use_csa: csa,
            buckets: config.num_buckets,
            ..BlockConfig::new(c, c, kind, norm)
        };
        let fusion = |init: &mut Init, c: usize, attn: bool| {
            if attn && ab != Ablation::NoSsfb {
                Fusion::Ssfb(Ssfb::new(init, c, c, config.ssfb_rank))
            } else {
                Fusion::Simple(SimpleFusion::new(init, c, c))
            }
        };
        let mut init = Init::new(seed);
        let mut at = |name: &str| init.pp(name);
        Ok(DALightModel {
            init: InitProjection {
                conv: Conv3d::same(&mut at("init").pp("conv"), config.num_modalities, w0),
                norm: GroupNorm::new(&mut at("init").pp("norm"), w0),
            },
            enc0: LightweightBlock::new(&mut at("enc0"), &block(w0, ConvKind::Dense, false))?,
            down1: Downsample::new(&mut at("down1"), w0, w1),
            enc1: LightweightBlock::new(&mut at("enc1"), &block(w1, sep, false))?,
            down2: Downsample::new(&mut at("down2"), w1, w2),
            enc2: LightweightBlock::new(&mut at("enc2"), &block(w2, sep, with_csa))?,
            down3: Downsample::new(&mut at("down3"), w2, w3),
            enc3: LightweightBlock::new(&mut at("enc3"), &block(w3, sep, with_csa))?,
            up0: Upsample::new(&mut at("up0"), w3, w2),
            fuse0: fusion(&mut at("fuse0"), w2, false),
            dec0: LightweightBlock::new(&mut at("dec0"), &block(w2, sep, false))?,
            up1: Upsample::new(&mut at("up1"), w2, w1),
            fuse1: fusion(&mut at("fuse1"), w1, true),
            dec1: LightweightBlock::new(&mut at("dec1"), &block(w1, sep, false))?,
            up2: Upsample::new(&mut at("up2"), w1, w0),
            fuse2: fusion(&mut at("fuse2"), w0, true),
            dec2: LightweightBlock::new(&mut at("dec2"), &block(w0, ConvKind::Dense, false))?,
            head: SegmentationHead::new(&mut at("head"), w0, config.num_classes),
            config,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn check_input(&self, dims: &[usize], bucket: Option<usize>) -> Result<()> {
        if dims.len() != 5 || dims[1] != self.config.num_modalities {
            return Err(shape_err(
                "model",
                format!("expected [B, {}, D, H, W], got {dims:?}", self.config.num_modalities),
            ));
        }
        if let Some(&n) = dims[2..].iter().find(|&&n| n % 8 != 0) {
            return Err(Error::InvalidArgument(format!("spatial extent {n} is not divisible by 8 in {dims:?}")));
        }
        match bucket {
            Some(s) if s >= self.config.num_buckets => {
                Err(Error::BucketOutOfRange { bucket: s, buckets: self.config.num_buckets })
            }
            _ => Ok(()),
        }
    }

    /// Class logits, calling `observe` with every stage output.
    pub fn forward_observed(
        &self,
        tape: &mut Tape,
        x: &Var,
        bucket: Option<usize>,
        observe: &mut dyn FnMut(&'static str, &Var),
    ) -> Result<Var> {
        self.check_input(x.dims(), bucket)?;
        let mut seen = |name: &'static str, v: Var| {
            observe(name, &v);
            v
        };
        let h = seen("init", self.init.forward(tape, x)?);
        let e0 = seen("enc0", self.enc0.forward(tape, &h, bucket)?);
        let h = seen("down1", self.down1.forward(tape, &e0)?);
        let e1 = seen("enc1", self.enc1.forward(tape, &h, bucket)?);
        let h = seen("down2", self.down2.forward(tape, &e1)?);
        let e2 = seen("enc2", self.enc2.forward(tape, &h, bucket)?);
        let h = seen("down3", self.down3.forward(tape, &e2)?);
        let e3 = seen("enc3", self.enc3.forward(tape, &h, bucket)?);
        drop(h);
        let u = seen("up0", self.up0.forward(tape, &e3)?);
        drop(e3);
        let f = seen("fuse0", self.fuse0.forward(tape, &u, &e2)?);
        drop(e2);
        let d = seen("dec0", self.dec0.forward(tape, &f, bucket)?);
        let u = seen("up1", self.up1.forward(tape, &d)?);
        let f = seen("fuse1", self.fuse1.forward(tape, &u, &e1)?);
        drop(e1);
        let d = seen("dec1", self.dec1.forward(tape, &f, bucket)?);
        let u = seen("up2", self.up2.forward(tape, &d)?);
        let f = seen("fuse2", self.fuse2.forward(tape, &u, &e0)?);
        drop(e0);
        let d = seen("dec2", self.dec2.forward(tape, &f, bucket)?);
        Ok(seen("head", self.head.forward(tape, &d)?))
    }

    pub fn forward_logits(&self, tape: &mut Tape, x: &Var, bucket: Option<usize>) -> Result<Var> {
        self.forward_observed(tape, x, bucket, &mut |_, _| {})
    }

    /// Per-voxel class posteriors.
    pub fn forward(&self, tape: &mut Tape, x: &Var, bucket: Option<usize>) -> Result<Var> {
        let logits = self.forward_logits(tape, x, bucket)?;
        ops::softmax_channel(tape, &logits)
    }

    /// Inference without gradient bookkeeping.
    pub fn predict(&self, x: &Tensor, bucket: Option<usize>) -> Result<Tensor> {
        let mut tape = Tape::inference();
        let x = tape.constant(x.clone());
        Ok(self.forward(&mut tape, &x, bucket)?.value().clone())
    }

    /// Output shape of every stage for an input of `dims`.
    pub fn stage_shapes(&self, dims: &[usize]) -> Result<Vec<(&'static str, Vec<usize>)>> {
        let mut tape = Tape::inference();
        let x = tape.constant(Tensor::zeros(dims.to_vec()));
        let mut shapes = Vec::new();
        self.forward_observed(&mut tape, &x, None, &mut |name, v| shapes.push((name, v.dims().to_vec())))?;
        Ok(shapes)
    }

    fn stage_modules(&self) -> [(&'static str, &dyn Module); 18] {
        [
            ("init", &self.init),
            ("enc0", &self.enc0),
            ("down1", &self.down1),
            ("enc1", &self.enc1),
            ("down2", &self.down2),
            ("enc2", &self.enc2),
            ("down3", &self.down3),
            ("enc3", &self.enc3),
            ("up0", &self.up0),
            ("fuse0", &self.fuse0),
            ("dec0", &self.dec0),
            ("up1", &self.up1),
            ("fuse1", &self.fuse1),
            ("dec1", &self.dec1),
            ("up2", &self.up2),
            ("fuse2", &self.fuse2),
            ("dec2", &self.dec2),
            ("head", &self.head),
        ]
    }

    pub fn count_params(&self) -> ParamReport {
        let stages: Vec<StageCount> = self
            .stage_modules()
            .iter()
            .map(|(name, m)| StageCount { stage: name.to_string(), params: m.param_count() })
            .collect();
        ParamReport {
            variant: self.config.ablation.name().to_string(),
            total: stages.iter().map(|s| s.params).sum(),
            stages,
        }
    }

    pub fn blocks(&self) -> [(&'static str, &LightweightBlock); 7] {
        [
            ("enc0", &self.enc0),
            ("enc1", &self.enc1),
            ("enc2", &self.enc2),
            ("enc3", &self.enc3),
            ("dec0", &self.dec0),
            ("dec1", &self.dec1),
            ("dec2", &self.dec2),
        ]
    }

    pub fn csa_modules(&self) -> Vec<(&'static str, &CrossSliceAttention)> {
        self.blocks().into_iter().filter_map(|(n, b)| b.csa().map(|c| (n, c))).collect()
    }

    pub fn ssfb_modules(&self) -> Vec<(&'static str, &Ssfb)> {
        [("fuse0", &self.fuse0), ("fuse1", &self.fuse1), ("fuse2", &self.fuse2)]
            .into_iter()
            .filter_map(|(n, f)| f.ssfb().map(|s| (n, s)))
            .collect()
    }

    /// Separable-versus-dense cost of every 3x3x3 block convolution.
    pub fn conv_comparison(&self) -> Vec<ConvComparison> {
        let mut out = Vec::new();
        for (name, block) in self.blocks() {
            for (slot, unit) in [("conv1", &block.conv1), ("conv2", &block.conv2)] {
                let (c_in, c_out) = match unit {
                    ConvUnit::Dense(c) => (c.c_in(), c.c_out()),
                    ConvUnit::Separable(c) => (c.c_in(), c.c_out()),
                };
                out.push(ConvComparison {
                    layer: format!("{name}.{slot}"),
                    kind: unit.kind(),
                    c_in,
                    c_out,
                    separable: separable_param_count(c_in, c_out),
                    dense: dense_param_count(c_in, c_out),
                });
            }
        }
        out
    }

    /// Analytic multiply-accumulate counts per stage and term for one sample
    /// of spatial extents `[D, H, W]`. Normalization, activations and pooling
    /// are not counted.
    pub fn estimate_flops(&self, spatial: [usize; 3]) -> Result<Vec<LayerFlops>> {
        if let Some(&n) = spatial.iter().find(|&&n| n == 0 || n % 8 != 0) {
            return Err(Error::InvalidArgument(format!("spatial extent {n} is not a positive multiple of 8")));
        }
        let at = |level: u32| spatial.map(|n| n >> level);
        let n = |level: u32| at(level).iter().product::<usize>();
        let mut out = Vec::new();
        let mut push = |stage: &str, term: &'static str, macs: u64| {
            out.push(LayerFlops { stage: stage.to_string(), term, macs })
        };
        push("init", "conv", self.init.conv.macs(at(0)));
        let levels = [
            ("enc0", 0),
            ("enc1", 1),
            ("enc2", 2),
            ("enc3", 3),
            ("dec0", 2),
            ("dec1", 1),
            ("dec2", 0),
        ];
        let blocks = self.blocks();
        for ((name, level), (_, block)) in levels.iter().zip(blocks.iter()) {
            let (conv, csa_proj, csa_attn) = block.macs(at(*level));
            push(name, "conv", conv);
            if block.csa().is_some() {
                push(name, "csa_projection", csa_proj);
                push(name, "csa_attention", csa_attn);
            }
        }
        // counted from the input grid; the stride halves the output
        push("down1", "conv", self.down1.conv.macs(at(0)));
        push("down2", "conv", self.down2.conv.macs(at(1)));
        push("down3", "conv", self.down3.conv.macs(at(2)));
        for (name, up, level) in [("up0", &self.up0, 3), ("up1", &self.up1, 2), ("up2", &self.up2, 1)] {
            push(name, "conv", up.macs(at(level)));
        }
        for (name, fusion, level) in [("fuse0", &self.fuse0, 2), ("fuse1", &self.fuse1, 1), ("fuse2", &self.fuse2, 0)] {
            match fusion {
                Fusion::Simple(f) => push(name, "conv", f.proj.macs(n(level))),
                Fusion::Ssfb(f) => {
                    let (proj, attn) = f.macs(at(level));
                    push(name, "conv", proj);
                    push(name, "ssfb_attention", attn);
                }
            }
        }
        push("head", "conv", self.head.conv.macs(at(0)) + self.head.classify.macs(n(0)));
        Ok(out)
    }
}
