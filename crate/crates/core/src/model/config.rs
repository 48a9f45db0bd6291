use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which single component a variant removes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    #[serde(rename = "full", alias = "none")]
    None,
    NoSepconv,
    NoScannerNorm,
    NoCsa,
    NoSsfb,
}

impl Ablation {
    pub const ALL: [Ablation; 5] =
        [Ablation::None, Ablation::NoSepconv, Ablation::NoScannerNorm, Ablation::NoCsa, Ablation::NoSsfb];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::None => "full",
            Ablation::NoSepconv => "no_sepconv",
            Ablation::NoScannerNorm => "no_scanner_norm",
            Ablation::NoCsa => "no_csa",
            Ablation::NoSsfb => "no_ssfb",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "full" | "none" => Ok(Ablation::None),
            "no_sepconv" => Ok(Ablation::NoSepconv),
            "no_scanner_norm" => Ok(Ablation::NoScannerNorm),
            "no_csa" => Ok(Ablation::NoCsa),
            "no_ssfb" => Ok(Ablation::NoSsfb),
            other => Err(Error::InvalidArgument(format!(
                "unknown variant {other:?}; expected one of full, no_sepconv, no_scanner_norm, no_csa, no_ssfb"
            ))),
        }
    }
}

impl std::fmt::Display for Ablation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub base_width: usize,
    pub channel_cap: usize,
    pub bottleneck_width: usize,
    pub ssfb_rank: usize,
    pub num_buckets: usize,
    pub num_classes: usize,
    pub num_modalities: usize,
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            base_width: 24,
            channel_cap: 384,
            bottleneck_width: 432,
            ssfb_rank: 8,
            num_buckets: 8,
            num_classes: 4,
            num_modalities: 4,
            ablation: Ablation::None,
        }
    }
}

impl ModelConfig {
    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        self.ablation = ablation;
        self
    }

    /// Every violated constraint, one message per field.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut need = |ok: bool, msg: String| {
            if !ok {
                out.push(msg)
            }
        };
        need(self.base_width >= 1, "base_width must be at least 1".into());
        need(self.channel_cap >= 1, "channel_cap must be at least 1".into());
        need(
            self.bottleneck_width >= self.base_width,
            format!("bottleneck_width {} is below base_width {}", self.bottleneck_width, self.base_width),
        );
        need(self.ssfb_rank >= 1, "ssfb_rank must be at least 1".into());
        need(self.num_buckets >= 1, "num_buckets must be at least 1".into());
        need(self.num_classes >= 2, "num_classes must be at least 2".into());
        need(self.num_modalities >= 1, "num_modalities must be at least 1".into());
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(problems.join("; ")))
        }
    }

    pub fn widths(&self) -> [usize; 4] {
        channel_plan(self.base_width, self.channel_cap, self.bottleneck_width)
    }
}

/// Encoder widths: `min(C0 * 2^l, cap)` for the first three stages, then the
/// bottleneck override.
pub fn channel_plan(base: usize, cap: usize, bottleneck: usize) -> [usize; 4] {
    let w = |l: u32| (base << l).min(cap);
    [w(0), w(1), w(2), bottleneck]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_round_trip() {
        for a in Ablation::ALL {
            assert_eq!(Ablation::parse(a.name()).unwrap(), a);
            let json = serde_json::to_string(&a).unwrap();
            assert_eq!(json, format!("\"{}\"", a.name()));
        }
        assert!(Ablation::parse("no_se").is_err());
    }

    #[test]
    fn every_problem_is_listed() {
        let cfg = ModelConfig { base_width: 0, ssfb_rank: 0, num_buckets: 0, ..Default::default() };
        assert_eq!(cfg.problems().len(), 3);
    }
}
