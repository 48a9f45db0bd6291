use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::case::{CaseRecord, BG};
use super::normalize::zscore_normalize;

pub const DEFAULT_TUMOR_BIAS: f64 = 0.8;

/// A case with its normalized image and tumor voxel list cached for repeated
/// sampling.
#[derive(Clone, Debug)]
pub struct PreparedCase {
    pub case_id: String,
    pub bucket: usize,
    /// Normalized `[C, D, H, W]`.
    pub image: Tensor,
    pub labels: Vec<u8>,
    pub spatial: [usize; 3],
    tumor: Vec<usize>,
}

impl PreparedCase {
    pub fn new(case: &CaseRecord) -> Self {
        let tumor = case.labels.iter().enumerate().filter(|(_, &l)| l != BG).map(|(i, _)| i).collect();
        PreparedCase {
            case_id: case.case_id.clone(),
            bucket: case.bucket,
            image: zscore_normalize(&case.image),
            labels: case.labels.clone(),
            spatial: case.spatial(),
            tumor,
        }
    }

    pub fn tumor_voxels(&self) -> usize {
        self.tumor.len()
    }

    /// Co-registered crop of edge `p` at `origin`.
    pub fn crop(&self, origin: [usize; 3], p: usize) -> Result<PatchSample> {
        let [d, h, w] = self.spatial;
        if (0..3).any(|a| origin[a] + p > self.spatial[a]) {
            return Err(Error::InvalidArgument(format!("patch {p} at {origin:?} exceeds volume {:?}", self.spatial)));
        }
        let c = self.image.dims()[0];
        let mut image = Vec::with_capacity(c * p * p * p);
        let mut labels = Vec::with_capacity(p * p * p);
        let [z0, y0, x0] = origin;
        for m in 0..c {
            for z in z0..z0 + p {
                for y in y0..y0 + p {
                    let row = ((m * d + z) * h + y) * w + x0;
                    image.extend_from_slice(&self.image.data()[row..row + p]);
                }
            }
        }
        for z in z0..z0 + p {
            for y in y0..y0 + p {
                let row = (z * h + y) * w + x0;
                labels.extend_from_slice(&self.labels[row..row + p]);
            }
        }
        Ok(PatchSample {
            image: Tensor::from_vec(vec![c, p, p, p], image)?,
            labels,
            bucket: self.bucket,
            case_id: self.case_id.clone(),
            origin,
        })
    }
}

/// A cubic training crop.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSample {
    /// `[C, p, p, p]`, normalized.
    pub image: Tensor,
    /// `[p, p, p]`
    pub labels: Vec<u8>,
    pub bucket: usize,
    pub case_id: String,
    pub origin: [usize; 3],
}

impl PatchSample {
    pub fn edge(&self) -> usize {
        self.image.dims()[1]
    }

    /// The image as a batch of one, `[1, C, p, p, p]`.
    pub fn batch_image(&self) -> Tensor {
        let mut dims = vec![1];
        dims.extend_from_slice(self.image.dims());
        self.image.clone().reshape(dims).expect("same element count")
    }
}

/// Draws a crop of edge `p`. With probability `tumor_bias` (and when the
/// case has any tumor) the crop is centered on a uniformly chosen tumor voxel,
/// shifted to fit; otherwise its origin is uniform.
pub fn sample_patch<R: Rng + ?Sized>(case: &PreparedCase, p: usize, rng: &mut R, tumor_bias: f64) -> Result<PatchSample> {
    if p == 0 || case.spatial.iter().any(|&n| p > n) {
        return Err(Error::InvalidArgument(format!("patch {p} does not fit volume {:?}", case.spatial)));
    }
    if !(0.0..=1.0).contains(&tumor_bias) {
        return Err(Error::InvalidArgument(format!("tumor_bias {tumor_bias} outside [0, 1]")));
    }
    let biased = rng.random::<f64>() < tumor_bias;
    let origin = if biased && !case.tumor.is_empty() {
        let v = case.tumor[rng.random_range(0..case.tumor.len())];
        let [_, h, w] = case.spatial;
        let at = [v / (h * w), (v / w) % h, v % w];
        [0, 1, 2].map(|a| at[a].saturating_sub(p / 2).min(case.spatial[a] - p))
    } else {
        case.spatial.map(|n| rng.random_range(0..=n - p))
    };
    case.crop(origin, p)
}
