use serde::Serialize;

use crate::error::{Error, Result};

use super::confusion::ConfusionMatrix;

pub const CLASS_NAMES: [&str; 4] = ["BG", "NCR", "ED", "ET"];
pub const TUMOR_CLASSES: [usize; 3] = [1, 2, 3];

/// One-vs-rest scores; `None` where the denominator is zero.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassScores {
    pub class: String,
    pub dice: Option<f64>,
    pub iou: Option<f64>,
    pub precision: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub classes: Vec<ClassScores>,
    /// Unweighted mean over the tumor classes.
    pub macro_tumor: ClassScores,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn per_class(cm: &ConfusionMatrix) -> ClassMetrics {
    let classes: Vec<ClassScores> = (0..cm.classes())
        .map(|c| {
            let (tp, fp, fn_, tn) = cm.one_vs_rest(c);
            ClassScores {
                class: CLASS_NAMES.get(c).map_or_else(|| format!("class{c}"), |s| s.to_string()),
                dice: ratio(2 * tp, 2 * tp + fp + fn_),
                iou: ratio(tp, tp + fp + fn_),
                precision: ratio(tp, tp + fp),
                sensitivity: ratio(tp, tp + fn_),
                specificity: ratio(tn, tn + fp),
            }
        })
        .collect();
    let macro_tumor = macro_tumor(&classes);
    ClassMetrics { classes, macro_tumor }
}

/// Mean of each score over NCR, ED and ET; `None` if any is undefined.
pub fn macro_tumor(classes: &[ClassScores]) -> ClassScores {
    let mean = |f: fn(&ClassScores) -> Option<f64>| -> Option<f64> {
        let vals: Option<Vec<f64>> = TUMOR_CLASSES.iter().map(|&c| classes.get(c).and_then(f)).collect();
        vals.map(|v| v.iter().sum::<f64>() / v.len() as f64)
    };
    ClassScores {
        class: "macro_tumor".into(),
        dice: mean(|s| s.dice),
        iou: mean(|s| s.iou),
        precision: mean(|s| s.precision),
        sensitivity: mean(|s| s.sensitivity),
        specificity: mean(|s| s.specificity),
    }
}

/// Mean Dice per million parameters.
pub fn dice_per_million(mean_dice: f64, params: usize) -> Result<f64> {
    if params == 0 {
        return Err(Error::InvalidArgument("parameter count must be positive".into()));
    }
    Ok(mean_dice / (params as f64 / 1e6))
}
