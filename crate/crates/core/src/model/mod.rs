//! Encoder-decoder assembly, ablation variants and cost accounting.

mod config;
mod dalight;

pub use config::{channel_plan, Ablation, ModelConfig};
pub use dalight::{
    ConvComparison, DALightModel, Fusion, InitProjection, LayerFlops, ParamReport, StageCount, STAGES,
};
