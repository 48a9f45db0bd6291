//! Confusion matrices, one-vs-rest class metrics, calibration error and the
//! accuracy-per-parameter ratio.

mod calibration;
mod confusion;
mod scores;

pub use calibration::{ece, CalibrationBin, CalibrationReport, ECE_BINS};
pub use confusion::{argmax_labels, confidences, ConfusionMatrix};
pub use scores::{dice_per_million, macro_tumor, per_class, ClassMetrics, ClassScores, CLASS_NAMES, TUMOR_CLASSES};
