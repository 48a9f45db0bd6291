use serde::Serialize;

use crate::data::{PatchSample, PreparedCase};
use crate::error::Result;
use crate::metrics::{argmax_labels, confidences, ece, per_class, CalibrationReport, ClassMetrics, ConfusionMatrix, ECE_BINS};
use crate::model::DALightModel;
use crate::tensor::Tensor;

/// Pooled voxel-level evaluation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Evaluation {
    #[serde(skip)]
    pub confusion: ConfusionMatrix,
    pub metrics: ClassMetrics,
    pub calibration: CalibrationReport,
}

impl Evaluation {
    /// Macro tumor Dice, undefined when any tumor class is.
    pub fn mean_tumor_dice(&self) -> Option<f64> {
        self.metrics.macro_tumor.dice
    }
}

fn evaluate_items<'a>(
    model: &DALightModel,
    items: impl Iterator<Item = (Tensor, &'a [u8], usize)>,
) -> Result<Evaluation> {
    let mut cm = ConfusionMatrix::new(model.config().num_classes);
    let mut conf = Vec::new();
    let mut correct = Vec::new();
    for (x, labels, bucket) in items {
        let probs = model.predict(&x, Some(bucket))?;
        let pred = argmax_labels(&probs);
        cm.accumulate(&pred, labels)?;
        conf.extend(confidences(&probs).into_iter().map(|c| c.clamp(0.0, 1.0)));
        correct.extend(pred.iter().zip(labels).map(|(p, t)| p == t));
    }
    Ok(Evaluation { metrics: per_class(&cm), calibration: ece(&conf, &correct, ECE_BINS)?, confusion: cm })
}

pub fn evaluate_patches(model: &DALightModel, patches: &[PatchSample]) -> Result<Evaluation> {
    evaluate_items(model, patches.iter().map(|p| (p.batch_image(), p.labels.as_slice(), p.bucket)))
}

/// Whole-volume inference, one case per forward pass.
pub fn evaluate_cases(model: &DALightModel, cases: &[PreparedCase]) -> Result<Evaluation> {
    evaluate_items(
        model,
        cases.iter().map(|c| {
            let mut dims = vec![1];
            dims.extend_from_slice(c.image.dims());
            (c.image.clone().reshape(dims).expect("same element count"), c.labels.as_slice(), c.bucket)
        }),
    )
}
