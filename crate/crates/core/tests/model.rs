mod common;

use common::{randn, rng};
use dalight::autodiff::Tape;
use dalight::model::{Ablation, DALightModel, ModelConfig, STAGES};
use dalight::nn::{ConvUnit, GroupNorm, Init, Module, ScannerAwareNorm};
use dalight::ops;
use dalight::Error;

fn small() -> ModelConfig {
    ModelConfig { base_width: 4, bottleneck_width: 16, ..ModelConfig::default() }
}

#[test]
fn shape_ladder_at_16() {
    let m = DALightModel::new(ModelConfig::default(), 0).unwrap();
    let shapes = m.stage_shapes(&[1, 4, 16, 16, 16]).unwrap();
    let names: Vec<&str> = shapes.iter().map(|(n, _)| *n).collect();
    assert_eq!(names, STAGES.to_vec());
    let get = |n: &str| shapes.iter().find(|(s, _)| *s == n).unwrap().1.clone();
    assert_eq!(get("enc0"), vec![1, 24, 16, 16, 16]);
    assert_eq!(get("enc1"), vec![1, 48, 8, 8, 8]);
    assert_eq!(get("enc2"), vec![1, 96, 4, 4, 4]);
    assert_eq!(get("enc3"), vec![1, 432, 2, 2, 2]);
    assert_eq!(get("dec0"), vec![1, 96, 4, 4, 4]);
    assert_eq!(get("dec1"), vec![1, 48, 8, 8, 8]);
    assert_eq!(get("dec2"), vec![1, 24, 16, 16, 16]);
    assert_eq!(get("head"), vec![1, 4, 16, 16, 16]);
}

#[test]
fn csa_and_ssfb_placement_per_variant() {
    for ab in Ablation::ALL {
        let m = DALightModel::new(small().with_ablation(ab), 0).unwrap();
        let csa: Vec<&str> = m.csa_modules().iter().map(|(n, _)| *n).collect();
        let ssfb: Vec<&str> = m.ssfb_modules().iter().map(|(n, _)| *n).collect();
        let want_csa: Vec<&str> = if ab == Ablation::NoCsa { vec![] } else { vec!["enc2", "enc3"] };
        let want_ssfb: Vec<&str> = if ab == Ablation::NoSsfb { vec![] } else { vec!["fuse1", "fuse2"] };
        assert_eq!(csa, want_csa, "{ab}");
        assert_eq!(ssfb, want_ssfb, "{ab}");
    }
}

#[test]
fn separable_units_match_closed_form() {
    for ab in [Ablation::None, Ablation::NoSepconv] {
        let m = DALightModel::new(ModelConfig::default().with_ablation(ab), 0).unwrap();
        let mut seen = 0;
        for (_, block) in m.blocks() {
            for unit in [&block.conv1, &block.conv2] {
                match unit {
                    ConvUnit::Separable(c) => {
                        let (ci, co) = (c.c_in(), c.c_out());
                        assert_eq!(unit.param_count(), ci * 27 + ci * co + co);
                        seen += 1;
                    }
                    ConvUnit::Dense(c) => assert_eq!(unit.param_count(), c.c_in() * c.c_out() * 27 + c.c_out()),
                }
            }
        }
        assert_eq!(seen, if ab == Ablation::None { 10 } else { 0 });
    }
}

#[test]
fn stage_counts_sum_to_total() {
    let m = DALightModel::new(ModelConfig::default(), 0).unwrap();
    let r = m.count_params();
    assert_eq!(r.stages.iter().map(|s| s.params).sum::<usize>(), r.total);
    assert_eq!(r.total, m.param_count());
    assert_eq!(r.stages.len(), STAGES.len());
}

#[test]
fn probabilities_sum_to_one() {
    let mut g = rng(5);
    let m = DALightModel::new(small(), 1).unwrap();
    let x = randn(&[2, 4, 8, 8, 8], &mut g);
    for bucket in [None, Some(3)] {
        let p = m.predict(&x, bucket).unwrap();
        let (c, n) = (4, 512);
        for b in 0..2 {
            for v in 0..n {
                let s: f64 = (0..c).map(|k| p.data()[(b * c + k) * n + v]).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
        assert!(p.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}

fn dec2_features(m: &DALightModel, x: &dalight::Tensor) -> Vec<f64> {
    let mut tape = Tape::inference();
    let x = tape.constant(x.clone());
    let mut out = Vec::new();
    m.forward_observed(&mut tape, &x, Some(1), &mut |name, v| {
        if name == "dec2" {
            out = v.value().data().to_vec();
        }
    })
    .unwrap();
    out
}

#[test]
fn construction_and_forward_are_deterministic() {
    let a = DALightModel::new(small(), 9).unwrap();
    let b = DALightModel::new(small(), 9).unwrap();
    let c = DALightModel::new(small(), 10).unwrap();
    let x = randn(&[1, 4, 8, 8, 8], &mut rng(2));
    assert!(a.predict(&x, Some(1)).unwrap().data() == b.predict(&x, Some(1)).unwrap().data());
    assert!(dec2_features(&a, &x) == dec2_features(&b, &x));
    assert!(dec2_features(&a, &x) != dec2_features(&c, &x));
}

#[test]
fn input_validation() {
    let m = DALightModel::new(small(), 0).unwrap();
    let bad_extent = randn(&[1, 4, 8, 12, 8], &mut rng(0));
    assert!(matches!(m.predict(&bad_extent, None), Err(Error::Shape { .. }) | Err(Error::InvalidArgument(_))));
    let bad_channels = randn(&[1, 3, 8, 8, 8], &mut rng(0));
    assert!(m.predict(&bad_channels, None).is_err());
    let x = randn(&[1, 4, 8, 8, 8], &mut rng(0));
    assert!(matches!(m.predict(&x, Some(8)), Err(Error::BucketOutOfRange { bucket: 8, buckets: 8 })));
}

#[test]
fn full_equals_no_csa_at_init() {
    let full = DALightModel::new(small(), 4).unwrap();
    let no_csa = DALightModel::new(small().with_ablation(Ablation::NoCsa), 4).unwrap();
    let x = randn(&[1, 4, 16, 8, 8], &mut rng(8));
    let a = full.predict(&x, Some(2)).unwrap();
    let b = no_csa.predict(&x, Some(2)).unwrap();
    assert!(a.max_abs_diff(&b) <= 1e-12);
}

#[test]
fn ssfb_attention_branch_is_silent_at_init() {
    let m = DALightModel::new(small(), 0).unwrap();
    let (_, s) = m.ssfb_modules()[0];
    let mut g = rng(1);
    let mut tape = Tape::inference();
    let fd = tape.constant(randn(&[1, s.c_dec(), 4, 4, 4], &mut g));
    let fe = tape.constant(randn(&[1, s.c_enc(), 4, 4, 4], &mut g));
    let parts = s.forward_parts(&mut tape, &fd, &fe).unwrap();
    assert!(parts.attn.value().data().iter().all(|&v| v == 0.0));
    assert_eq!(parts.alpha.value().item(), 0.5);
    // gate is sigmoid(0) = 0.5, so the blend is a quarter of the encoder map
    for (b, e) in parts.blend.value().data().iter().zip(fe.value().data()) {
        assert!((b - 0.25 * e).abs() < 1e-15);
    }
}

#[test]
fn scanner_norm_at_init_is_group_norm() {
    let mut g = rng(3);
    for c in [8, 24, 48] {
        let san = ScannerAwareNorm::new(&mut Init::new(0), c, 8);
        let gn = GroupNorm::new(&mut Init::new(0), c);
        let mut tape = Tape::inference();
        let x = tape.constant(randn(&[2, c, 3, 4, 5], &mut g));
        let want = gn.forward(&mut tape, &x).unwrap();
        for bucket in std::iter::once(None).chain((0..8).map(Some)) {
            let got = san.forward(&mut tape, &x, bucket).unwrap();
            assert!(got.value().max_abs_diff(want.value()) <= 1e-15);
        }
    }
}

fn csa_attention_macs(depth: usize, hw: usize) -> u64 {
    let m = DALightModel::new(small(), 0).unwrap();
    let (_, csa) = m.csa_modules()[0];
    let mut tape = Tape::inference();
    let x = tape.constant(randn(&[1, csa.channels(), depth, hw, hw], &mut rng(0)));
    csa.forward(&mut tape, &x).unwrap();
    csa.attention_macs()
}

#[test]
fn csa_cost_is_quadratic_in_depth_only() {
    let base = csa_attention_macs(8, 4) as f64;
    let deeper = csa_attention_macs(16, 4) as f64;
    let wider = csa_attention_macs(8, 8) as f64;
    assert!((3.6..=4.4).contains(&(deeper / base)), "{}", deeper / base);
    assert!(wider / base <= 1.01);
}

#[test]
fn matmul_counter_tracks_work() {
    let mut g = rng(0);
    let mut tape = Tape::inference();
    let a = tape.constant(randn(&[2, 3, 5], &mut g));
    let b = tape.constant(randn(&[2, 5, 7], &mut g));
    let before = ops::matmul_macs();
    ops::matmul(&mut tape, &a, &b).unwrap();
    assert_eq!(ops::matmul_macs() - before, 2 * 3 * 5 * 7);
}

#[test]
fn ablation_names_round_trip() {
    let names: Vec<&str> = Ablation::ALL.iter().map(|a| a.name()).collect();
    assert_eq!(names, ["full", "no_sepconv", "no_scanner_norm", "no_csa", "no_ssfb"]);
    for a in Ablation::ALL {
        assert_eq!(Ablation::parse(a.name()).unwrap(), a);
    }
    assert!(Ablation::parse("no_everything").is_err());
}

#[test]
fn config_rejects_unknown_fields_and_bad_values() {
    let err = serde_json::from_str::<ModelConfig>(r#"{"base_width": 24, "colour": 3}"#);
    assert!(err.is_err());
    let cfg: ModelConfig = serde_json::from_str(r#"{"ablation": "no_csa"}"#).unwrap();
    assert_eq!(cfg.ablation, Ablation::NoCsa);
    assert!(ModelConfig { num_classes: 0, ..ModelConfig::default() }.validate().is_err());
    assert!(ModelConfig { num_buckets: 0, ..ModelConfig::default() }.validate().is_err());
}
