use rand::Rng;

use super::patch::PatchSample;

/// One draw of the augmentation: axis flips (depth, height, width) and a
/// per-modality intensity map `a x + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentParams {
    pub flips: [bool; 3],
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
}

impl AugmentParams {
    pub fn draw<R: Rng + ?Sized>(rng: &mut R, modalities: usize) -> Self {
        let flips = [0, 1, 2].map(|_| rng.random_bool(0.5));
        let mut scale = Vec::with_capacity(modalities);
        let mut shift = Vec::with_capacity(modalities);
        for _ in 0..modalities {
            scale.push(rng.random_range(0.9..1.1));
            shift.push(rng.random_range(-0.1..0.1));
        }
        AugmentParams { flips, scale, shift }
    }

    /// Flips only.
    pub fn flips(flips: [bool; 3], modalities: usize) -> Self {
        AugmentParams { flips, scale: vec![1.0; modalities], shift: vec![0.0; modalities] }
    }

    pub fn apply(&self, sample: &PatchSample) -> PatchSample {
        let p = sample.edge();
        let c = sample.image.dims()[0];
        let src = |z: usize, y: usize, x: usize| {
            let f = |v: usize, a: usize| if self.flips[a] { p - 1 - v } else { v };
            (f(z, 0) * p + f(y, 1)) * p + f(x, 2)
        };
        let n = p * p * p;
        let mut labels = vec![0; n];
        let mut image = vec![0.0; c * n];
        for z in 0..p {
            for y in 0..p {
                for x in 0..p {
                    let (dst, s) = ((z * p + y) * p + x, src(z, y, x));
                    labels[dst] = sample.labels[s];
                    for m in 0..c {
                        image[m * n + dst] = self.scale[m] * sample.image.data()[m * n + s] + self.shift[m];
                    }
                }
            }
        }
        PatchSample {
            image: crate::tensor::Tensor::from_vec(sample.image.dims().to_vec(), image).expect("same shape"),
            labels,
            ..sample.clone()
        }
    }
}

/// Random flips per axis with probability 0.5, then intensity scaling in
/// `[0.9, 1.1)` and shifting in `[-0.1, 0.1)` per modality, image only.
pub fn augment<R: Rng + ?Sized>(sample: &PatchSample, rng: &mut R) -> PatchSample {
    AugmentParams::draw(rng, sample.image.dims()[0]).apply(sample)
}
