//! Synthetic multi-modal cases, intensity normalization, proxy bucketing,
//! patch sampling, augmentation and the on-disk case format.

mod augment;
mod case;
mod format;
mod normalize;
mod patch;
mod phantom;

pub use augment::{augment, AugmentParams};
pub use case::{scanner_bucket, CaseRecord, BG, ED, ET, MODALITIES, NCR, NUM_CLASSES};
pub use format::{case_path, list_cases, read_case, read_case_with, write_case, CASE_EXT, CASE_MAGIC, CASE_VERSION};
pub use normalize::{zscore_normalize, ZSCORE_EPS};
pub use patch::{sample_patch, PatchSample, PreparedCase, DEFAULT_TUMOR_BIAS};
pub use phantom::{generate_phantom, phantom_rng, CONTRAST, NOISE_STD};
