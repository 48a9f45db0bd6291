mod common;

use std::fs;

use dalight::data::*;
use dalight::hash::fnv1a64;
use dalight::{Error, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a, 64-bit, written out from the published parameters.
fn fnv_reference(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[test]
fn fnv_matches_published_vectors_and_reference() {
    assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
    assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
    assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    for id in ["case_000", "case_001", "BraTS_0042", "x"] {
        assert_eq!(fnv1a64(id.as_bytes()), fnv_reference(id.as_bytes()));
        for s in [1, 3, 8, 16] {
            assert_eq!(scanner_bucket(id, s), (fnv_reference(id.as_bytes()) % s as u64) as usize);
        }
    }
}

fn phantom(seed: u64, id: &str, n: usize) -> CaseRecord {
    generate_phantom(&mut phantom_rng(seed, id), [n; 3], id, 4, 8).unwrap()
}

#[test]
fn phantom_is_deterministic_and_holds_every_class() {
    let a = phantom(0, "case_000", 32);
    let b = phantom(0, "case_000", 32);
    assert_eq!(a.image, b.image);
    assert_eq!(a.labels, b.labels);
    let c = phantom(0, "case_001", 32);
    assert_ne!(a.labels, c.labels);
    for case in [&a, &c] {
        assert!(case.class_counts().iter().all(|&n| n > 0), "{:?}", case.class_counts());
        assert_eq!(case.bucket, scanner_bucket(&case.case_id, 8));
        // foreground is strictly positive, background exactly zero
        let n = 32 * 32 * 32;
        for m in 0..4 {
            let ch = &case.image.data()[m * n..(m + 1) * n];
            assert!(ch.iter().all(|&v| v >= 0.0));
            assert!(ch.iter().any(|&v| v == 0.0));
        }
    }
}

#[test]
fn enhancing_tumor_is_brightest_on_t1ce() {
    let case = phantom(3, "case_007", 32);
    let n = case.labels.len();
    let t1ce = &case.image.data()[n..2 * n];
    let mean = |class: u8| {
        let v: Vec<f64> = case.labels.iter().zip(t1ce).filter(|(l, _)| **l == class).map(|(_, &x)| x).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    assert!(mean(ET) > mean(ED) + 0.3);
    assert!(mean(ET) > mean(NCR) + 0.3);
}

#[test]
fn phantom_rejects_tiny_volumes() {
    assert!(matches!(
        generate_phantom(&mut phantom_rng(0, "x"), [8, 32, 32], "x", 4, 8),
        Err(Error::InvalidArgument(_))
    ));
}

#[test]
fn case_files_round_trip_bit_identically() {
    let dir = tempfile::tempdir().unwrap();
    let case = phantom(0, "case_002", 16);
    let path = case_path(dir.path(), &case.case_id);
    write_case(&path, &case).unwrap();
    let back = read_case(&path).unwrap();
    assert_eq!(back.case_id, case.case_id);
    assert_eq!(back.bucket, case.bucket);
    assert_eq!(back.labels, case.labels);
    let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&back.image), bits(&case.image));
    let p2 = dir.path().join("again.dl3d");
    write_case(&p2, &back).unwrap();
    assert_eq!(fs::read(&path).unwrap(), fs::read(&p2).unwrap());
    assert_eq!(list_cases(dir.path()).unwrap(), vec!["again".to_string(), "case_002".into()]);
}

#[test]
fn corrupted_case_files_map_to_specific_errors() {
    let dir = tempfile::tempdir().unwrap();
    let case = phantom(0, "case_003", 16);
    let path = dir.path().join("good.dl3d");
    write_case(&path, &case).unwrap();
    let good = fs::read(&path).unwrap();
    let bad = dir.path().join("bad.dl3d");
    let check = |bytes: &[u8]| {
        fs::write(&bad, bytes).unwrap();
        read_case(&bad)
    };

    assert!(matches!(read_case(&dir.path().join("absent.dl3d")), Err(Error::MissingFile(_))));
    let mut b = good.clone();
    b[0] = b'X';
    assert!(matches!(check(&b), Err(Error::BadMagic { .. })));
    let mut b = good.clone();
    b[4] = 9;
    assert!(matches!(check(&b), Err(Error::VersionMismatch { expected: 1, found: 9 })));
    assert!(matches!(check(&good[..good.len() - 1]), Err(Error::Truncated { .. })));
    assert!(matches!(check(&good[..10]), Err(Error::Truncated { .. })));
    assert!(matches!(check(&good[..2]), Err(Error::Truncated { .. })));
    let mut b = good.clone();
    b.push(0);
    assert!(matches!(check(&b), Err(Error::Malformed(_))));
    let mut b = good.clone();
    *b.last_mut().unwrap() = 7;
    assert!(matches!(check(&b), Err(Error::LabelOutOfRange { label: 7, classes: 4 })));
    let mut b = good.clone();
    b[9..13].copy_from_slice(&0u32.to_le_bytes());
    assert!(matches!(check(&b), Err(Error::Malformed(_))));
    let mut b = good.clone();
    for f in 0..4 {
        b[5 + 4 * f..9 + 4 * f].copy_from_slice(&u32::MAX.to_le_bytes());
    }
    assert!(matches!(check(&b), Err(Error::DimensionOverflow(_)) | Err(Error::Truncated { .. })));
}

#[test]
fn tumor_bias_controls_patch_content() {
    let case = PreparedCase::new(&phantom(0, "case_004", 32));
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let draws = 400;
    let with_tumor = |bias: f64, rng: &mut ChaCha8Rng| {
        (0..draws)
            .filter(|_| sample_patch(&case, 16, rng, bias).unwrap().labels.iter().any(|&l| l != BG))
            .count() as f64
            / draws as f64
    };
    assert!(with_tumor(0.8, &mut rng) >= 0.8);
    assert_eq!(with_tumor(1.0, &mut rng), 1.0);
    assert!(sample_patch(&case, 33, &mut rng, 0.8).is_err());
    assert!(sample_patch(&case, 16, &mut rng, 1.5).is_err());
}

#[test]
fn crops_are_co_registered() {
    let case = PreparedCase::new(&phantom(0, "case_005", 16));
    let p = case.crop([2, 3, 1], 8).unwrap();
    let n = 16usize;
    for (z, y, x) in [(0, 0, 0), (7, 7, 7), (3, 1, 6)] {
        let src = ((z + 2) * n + (y + 3)) * n + (x + 1);
        let dst = (z * 8 + y) * 8 + x;
        assert_eq!(p.labels[dst], case.labels[src]);
        for m in 0..4 {
            assert_eq!(p.image.data()[m * 512 + dst], case.image.data()[m * n * n * n + src]);
        }
    }
    assert!(case.crop([9, 0, 0], 8).is_err());
}

fn arb_image() -> impl Strategy<Value = Tensor> {
    (1usize..4, 1usize..40).prop_flat_map(|(c, n)| {
        prop::collection::vec(prop_oneof![Just(0.0), -2.0f64..0.0, 0.01f64..5.0], c * n)
            .prop_map(move |v| Tensor::from_vec(vec![c, n], v).unwrap())
    })
}

fn arb_patch() -> impl Strategy<Value = PatchSample> {
    (1usize..4, 1usize..5, any::<u64>()).prop_map(|(c, p, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = p * p * p;
        PatchSample {
            image: Tensor::randn(vec![c, p, p, p], 1.0, &mut rng),
            labels: (0..n).map(|i| (i % 4) as u8).collect(),
            bucket: 0,
            case_id: "p".into(),
            origin: [0; 3],
        }
    })
}

proptest! {
    #[test]
    fn zscore_preserves_background_and_standardizes(img in arb_image()) {
        let out = zscore_normalize(&img);
        let n = img.dims()[1];
        for (chi, cho) in img.data().chunks(n).zip(out.data().chunks(n)) {
            let fg: Vec<f64> = chi.iter().zip(cho).filter(|(i, _)| **i > 0.0).map(|(_, &o)| o).collect();
            for (i, o) in chi.iter().zip(cho) {
                if *i <= 0.0 {
                    prop_assert_eq!(*o, 0.0);
                }
            }
            if fg.len() >= 2 {
                let mean = fg.iter().sum::<f64>() / fg.len() as f64;
                prop_assert!(mean.abs() < 1e-9);
                let var = fg.iter().map(|v| v * v).sum::<f64>() / fg.len() as f64;
                prop_assert!(var <= 1.0 + 1e-9);
            }
        }
    }

    #[test]
    fn flips_are_involutions(s in arb_patch(), f in prop::array::uniform3(any::<bool>())) {
        let c = s.image.dims()[0];
        let flip = AugmentParams::flips(f, c);
        let twice = flip.apply(&flip.apply(&s));
        prop_assert_eq!(&twice, &s);
        // labels travel with their voxels
        let once = flip.apply(&s);
        let mut a = once.labels.clone();
        let mut b = s.labels.clone();
        a.sort();
        b.sort();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn augment_keeps_labels_as_a_permutation(s in arb_patch(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = augment(&s, &mut rng);
        let mut a = out.labels.clone();
        let mut b = s.labels.clone();
        a.sort();
        b.sort();
        prop_assert_eq!(a, b);
        prop_assert_eq!(out.image.dims(), s.image.dims());
    }
}
