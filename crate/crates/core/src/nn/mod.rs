//! Parameterized layers with exact parameter accounting.

mod block;
mod csa;
mod layers;
mod params;
mod se;
mod sepconv;
mod ssfb;

pub(crate) use layers::module_fields;
pub use block::{BlockConfig, Downsample, LightweightBlock, NormKind, SegmentationHead, SimpleFusion};
pub use csa::{csa_rank, CrossSliceAttention};
pub use layers::{Conv3d, GroupNorm, Norm, Pointwise, ScannerAwareNorm, Upsample, NORM_EPS};
pub use params::{init_rng, Init, LayerParams, Module, Param, ParamEntry};
pub use se::{se_hidden, SqueezeExcite};
pub use sepconv::{dense_param_count, separable_param_count, ConvKind, ConvUnit, SepConv};
pub use ssfb::{gate_hidden, Ssfb, SsfbParts};
