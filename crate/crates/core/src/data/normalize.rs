use crate::tensor::Tensor;

pub const ZSCORE_EPS: f64 = 1e-6;

/// Per-channel z-scoring over strictly positive voxels. Voxels at or below
/// zero come out as exactly zero; a channel without positive voxels is all
/// zero.
pub fn zscore_normalize(image: &Tensor) -> Tensor {
    let c = image.dims()[0];
    let n = image.numel() / c;
    let mut out = image.clone();
    for ch in out.data_mut().chunks_mut(n) {
        let fg: Vec<f64> = ch.iter().copied().filter(|&v| v > 0.0).collect();
        if fg.is_empty() {
            ch.fill(0.0);
            continue;
        }
        let mean = fg.iter().sum::<f64>() / fg.len() as f64;
        let var = fg.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / fg.len() as f64;
        let scale = 1.0 / (var.sqrt() + ZSCORE_EPS);
        for v in ch.iter_mut() {
            *v = if *v > 0.0 { (*v - mean) * scale } else { 0.0 };
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_foreground_values() {
        let t = Tensor::from_vec(vec![1, 4], vec![2.0, 0.0, 4.0, -1.0]).unwrap();
        let z = zscore_normalize(&t);
        assert!((z.data()[0] + 1.0).abs() < 1e-5);
        assert!((z.data()[2] - 1.0).abs() < 1e-5);
        assert_eq!(z.data()[1], 0.0);
        assert_eq!(z.data()[3], 0.0);
    }
}
