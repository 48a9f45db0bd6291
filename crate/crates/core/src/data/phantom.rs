use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::hash::fnv1a64;
use crate::tensor::Tensor;

use super::case::{CaseRecord, BG, ED, ET, NCR, NUM_CLASSES};

/// Mean intensity per class (rows BG tissue, NCR, ED, ET) and modality
/// (T1, T1ce, T2, FLAIR).
pub const CONTRAST: [[f64; 4]; NUM_CLASSES] = [
    [0.4, 0.4, 0.4, 0.4],
    [0.2, 0.15, 0.6, 0.5],
    [0.45, 0.4, 0.7, 0.9],
    [0.5, 0.9, 0.55, 0.6],
];
pub const NOISE_STD: f64 = 0.05;
const MIN_EXTENT: usize = 16;
/// Foreground intensities never reach zero, which would read as background.
const FLOOR: f64 = 1e-3;

/// Generator dedicated to one case under a run seed.
pub fn phantom_rng(seed: u64, case_id: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a64(case_id.as_bytes()));
    rng
}

struct Ellipsoid {
    center: [f64; 3],
    radii: [f64; 3],
}

impl Ellipsoid {
    /// Normalized radius; 1 on the surface.
    fn rho(&self, p: [f64; 3]) -> f64 {
        (0..3).map(|a| ((p[a] - self.center[a]) / self.radii[a]).powi(2)).sum::<f64>().sqrt()
    }
}

/// A head-like phantom: an ellipsoidal foreground on an exact-zero
/// background, holding an edema ellipsoid whose inner part is an enhancing
/// shell around a necrotic core. Intensities are stored at 32-bit precision.
pub fn generate_phantom<R: Rng + ?Sized>(
    rng: &mut R,
    extents: [usize; 3],
    case_id: &str,
    modalities: usize,
    buckets: usize,
) -> Result<CaseRecord> {
    if extents.iter().any(|&n| n < MIN_EXTENT) {
        return Err(Error::InvalidArgument(format!("phantom extents {extents:?} must be at least {MIN_EXTENT}")));
    }
    if modalities == 0 || modalities > CONTRAST[0].len() {
        return Err(Error::InvalidArgument(format!("phantom supports 1 to 4 modalities, got {modalities}")));
    }
    let ext = extents.map(|n| n as f64);
    let brain = Ellipsoid {
        center: ext.map(|n| (n - 1.0) / 2.0 + rng.random_range(-0.04..0.04) * n),
        radii: ext.map(|n| n * rng.random_range(0.38..0.45)),
    };
    let small = ext.iter().cloned().fold(f64::INFINITY, f64::min);
    let radius = small * rng.random_range(0.2..0.26);
    // integer center so the core voxel always exists
    let center = [0, 1, 2].map(|a| {
        let off = rng.random_range(-0.1..0.1) * ext[a];
        (brain.center[a] + off).round()
    });
    let tumor = Ellipsoid { center, radii: [0, 1, 2].map(|_| radius * rng.random_range(0.85..1.15)) };
    let (core, shell) = (rng.random_range(0.3..0.4), rng.random_range(0.6..0.7));

    let [d, h, w] = extents;
    let n = d * h * w;
    let mut labels = vec![BG; n];
    let mut inside = vec![false; n];
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let i = (z * h + y) * w + x;
                let p = [z as f64, y as f64, x as f64];
                if brain.rho(p) > 1.0 {
                    continue;
                }
                inside[i] = true;
                let r = tumor.rho(p);
                labels[i] = if r <= core {
                    NCR
                } else if r <= shell {
                    ET
                } else if r <= 1.0 {
                    ED
                } else {
                    BG
                };
            }
        }
    }
    let noise = Normal::new(0.0, NOISE_STD).expect("positive noise std");
    let mut image = vec![0.0; modalities * n];
    for m in 0..modalities {
        for i in 0..n {
            if inside[i] {
                let v = CONTRAST[labels[i] as usize][m] + noise.sample(rng);
                image[m * n + i] = (v.max(FLOOR) as f32) as f64;
            }
        }
    }
    let case = CaseRecord::new(case_id, Tensor::from_vec(vec![modalities, d, h, w], image)?, labels, buckets)?;
    if let Some(c) = case.class_counts().iter().position(|&k| k == 0) {
        return Err(Error::InvalidArgument(format!("phantom {case_id} has no voxels of class {c}")));
    }
    Ok(case)
}
