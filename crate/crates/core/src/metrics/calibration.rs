use serde::Serialize;

use crate::error::{shape_err, Error, Result};

pub const ECE_BINS: usize = 15;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CalibrationBin {
    pub lo: f64,
    pub hi: f64,
    pub count: u64,
    pub mean_confidence: Option<f64>,
    pub accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CalibrationReport {
    pub bins: Vec<CalibrationBin>,
    pub ece: f64,
    pub accuracy: Option<f64>,
    pub total: u64,
}

/// Equal-width bins on `[0, 1]`; bin `i` holds `(i/B, (i+1)/B]`, with zero
/// confidence falling in the first bin.
pub fn ece(confidence: &[f64], correct: &[bool], bins: usize) -> Result<CalibrationReport> {
    if confidence.len() != correct.len() {
        return Err(shape_err("ece", format!("{} confidences for {} flags", confidence.len(), correct.len())));
    }
    if bins == 0 {
        return Err(Error::InvalidArgument("ece needs at least one bin".into()));
    }
    if let Some(c) = confidence.iter().find(|c| !(0.0..=1.0).contains(*c)) {
        return Err(Error::OutOfRange { step: "ece", detail: format!("confidence {c} outside [0, 1]") });
    }
    let mut count = vec![0u64; bins];
    let mut conf_sum = vec![0.0; bins];
    let mut hits = vec![0u64; bins];
    for (&c, &ok) in confidence.iter().zip(correct) {
        let i = ((c * bins as f64).ceil() as usize).clamp(1, bins) - 1;
        count[i] += 1;
        conf_sum[i] += c;
        hits[i] += u64::from(ok);
    }
    let total = confidence.len() as u64;
    let mut gap = 0.0;
    let bins: Vec<CalibrationBin> = (0..bins)
        .map(|i| {
            let n = count[i];
            let (conf, acc) = if n > 0 {
                let conf = conf_sum[i] / n as f64;
                let acc = hits[i] as f64 / n as f64;
                gap += n as f64 / total as f64 * (acc - conf).abs();
                (Some(conf), Some(acc))
            } else {
                (None, None)
            };
            CalibrationBin {
                lo: i as f64 / bins as f64,
                hi: (i + 1) as f64 / bins as f64,
                count: n,
                mean_confidence: conf,
                accuracy: acc,
            }
        })
        .collect();
    let accuracy = (total > 0).then(|| hits.iter().sum::<u64>() as f64 / total as f64);
    Ok(CalibrationReport { bins, ece: gap, accuracy, total })
}
