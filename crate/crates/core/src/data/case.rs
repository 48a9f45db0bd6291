use crate::error::{shape_err, Error, Result};
use crate::hash::fnv1a64;
use crate::tensor::Tensor;

pub const BG: u8 = 0;
pub const NCR: u8 = 1;
pub const ED: u8 = 2;
pub const ET: u8 = 3;
pub const NUM_CLASSES: usize = 4;
/// Channel order of a case image.
pub const MODALITIES: [&str; 4] = ["t1", "t1ce", "t2", "flair"];

/// Proxy acquisition bucket: FNV-1a of the identifier bytes, modulo `s`.
pub fn scanner_bucket(case_id: &str, s: usize) -> usize {
    assert!(s >= 1, "bucket count must be positive");
    (fnv1a64(case_id.as_bytes()) % s as u64) as usize
}

/// One labelled multi-modal volume.
#[derive(Clone, Debug, PartialEq)]
pub struct CaseRecord {
    pub case_id: String,
    /// `[C, D, H, W]`
    pub image: Tensor,
    /// `[D, H, W]` class indices.
    pub labels: Vec<u8>,
    pub bucket: usize,
}

impl CaseRecord {
    pub fn new(case_id: impl Into<String>, image: Tensor, labels: Vec<u8>, buckets: usize) -> Result<Self> {
        let case_id = case_id.into();
        let dims = image.dims();
        if dims.len() != 4 {
            return Err(shape_err("case", format!("image must be [C, D, H, W], got {dims:?}")));
        }
        let spatial: usize = dims[1..].iter().product();
        if labels.len() != spatial {
            return Err(shape_err("case", format!("{} labels for {spatial} voxels", labels.len())));
        }
        if let Some(&l) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
            return Err(Error::LabelOutOfRange { label: l as usize, classes: NUM_CLASSES });
        }
        let bucket = scanner_bucket(&case_id, buckets);
        Ok(CaseRecord { case_id, image, labels, bucket })
    }

    pub fn modalities(&self) -> usize {
        self.image.dims()[0]
    }

    pub fn spatial(&self) -> [usize; 3] {
        let d = self.image.dims();
        [d[1], d[2], d[3]]
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }
}
