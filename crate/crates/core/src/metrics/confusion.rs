use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// `K x K` voxel counts, rows true class, columns predicted class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        ConfusionMatrix { k, counts: vec![0; k * k] }
    }

    pub fn from_counts(k: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != k * k {
            return Err(shape_err("confusion", format!("{} counts for {k} classes", counts.len())));
        }
        Ok(ConfusionMatrix { k, counts })
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|c| self.get(c, c)).sum()
    }

    /// `trace / total`, undefined when empty.
    pub fn accuracy(&self) -> Option<f64> {
        let n = self.total();
        (n > 0).then(|| self.trace() as f64 / n as f64)
    }

    pub fn accumulate(&mut self, pred: &[u8], truth: &[u8]) -> Result<()> {
        if pred.len() != truth.len() {
            return Err(shape_err("confusion", format!("{} predictions for {} labels", pred.len(), truth.len())));
        }
        if let Some(&l) = pred.iter().chain(truth).find(|&&l| l as usize >= self.k) {
            return Err(Error::LabelOutOfRange { label: l as usize, classes: self.k });
        }
        for (&p, &t) in pred.iter().zip(truth) {
            self.counts[t as usize * self.k + p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.k != self.k {
            return Err(shape_err("confusion", format!("merging {} with {} classes", other.k, self.k)));
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        Ok(())
    }

    /// Rows divided by their sums; empty rows are `None`.
    pub fn row_normalized(&self) -> Vec<Option<Vec<f64>>> {
        self.counts
            .chunks(self.k)
            .map(|row| {
                let s: u64 = row.iter().sum();
                (s > 0).then(|| row.iter().map(|&v| v as f64 / s as f64).collect())
            })
            .collect()
    }

    /// `(TP, FP, FN, TN)` of class `c` against the rest.
    pub fn one_vs_rest(&self, c: usize) -> (u64, u64, u64, u64) {
        let tp = self.get(c, c);
        let fp = (0..self.k).map(|t| self.get(t, c)).sum::<u64>() - tp;
        let fn_ = (0..self.k).map(|p| self.get(c, p)).sum::<u64>() - tp;
        (tp, fp, fn_, self.total() - tp - fp - fn_)
    }

    /// `K` lines of `K` comma-separated counts.
    pub fn to_csv(&self) -> String {
        self.counts
            .chunks(self.k)
            .map(|row| row.iter().map(u64::to_string).collect::<Vec<_>>().join(",") + "\n")
            .collect()
    }
}

/// Per-voxel argmax over the class axis of `[B, K, ...]`, lowest index on
/// ties, flattened batch-major.
pub fn argmax_labels(probs: &Tensor) -> Vec<u8> {
    let (b, k) = (probs.dims()[0], probs.dims()[1]);
    let n = probs.numel() / (b * k);
    let p = probs.data();
    let mut out = Vec::with_capacity(b * n);
    for bi in 0..b {
        for v in 0..n {
            let mut best = 0;
            for c in 1..k {
                if p[(bi * k + c) * n + v] > p[(bi * k + best) * n + v] {
                    best = c;
                }
            }
            out.push(best as u8);
        }
    }
    out
}

/// Per-voxel maximum class probability, in the order of [`argmax_labels`].
pub fn confidences(probs: &Tensor) -> Vec<f64> {
    let (b, k) = (probs.dims()[0], probs.dims()[1]);
    let n = probs.numel() / (b * k);
    let p = probs.data();
    (0..b)
        .flat_map(|bi| (0..n).map(move |v| (0..k).map(|c| p[(bi * k + c) * n + v]).fold(f64::MIN, f64::max)))
        .collect()
}
