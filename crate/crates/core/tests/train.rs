mod common;

use std::fs;

use common::{randn, rng};
use dalight::autodiff::Tape;
use dalight::data::{generate_phantom, phantom_rng, PreparedCase};
use dalight::model::{DALightModel, ModelConfig};
use dalight::nn::{Module, Param};
use dalight::ops;
use dalight::train::*;
use dalight::{Error, Tensor};
use proptest::prelude::*;

fn probs_from(z: Tensor) -> Tensor {
    let mut tape = Tape::inference();
    let z = tape.constant(z);
    ops::softmax_channel(&mut tape, &z).unwrap().value().clone()
}

fn eval_loss(f: impl Fn(&mut Tape, &dalight::autodiff::Var, &dalight::autodiff::Var) -> dalight::autodiff::Var, p: &Tensor, y: &Tensor) -> f64 {
    let mut tape = Tape::inference();
    let (pv, yv) = (tape.constant(p.clone()), tape.constant(y.clone()));
    f(&mut tape, &pv, &yv).value().item()
}

fn dice(p: &Tensor, y: &Tensor) -> f64 {
    eval_loss(|t, p, y| dice_loss(t, p, y, &LossConfig::default()).unwrap(), p, y)
}

fn ce(p: &Tensor, y: &Tensor) -> f64 {
    eval_loss(|t, p, y| ce_loss(t, p, y).unwrap(), p, y)
}

fn labels_with_all_classes(n: usize) -> Vec<u8> {
    (0..n).map(|i| (i % 4) as u8).collect()
}

#[test]
fn dice_perfect_and_disjoint() {
    let dims = [1, 4, 4, 4];
    let labels = labels_with_all_classes(64);
    let y = one_hot(&labels, 4, &dims).unwrap();
    assert!(dice(&y, &y) <= 1e-4);
    let shifted: Vec<u8> = labels.iter().map(|l| (l + 1) % 4).collect();
    let wrong = one_hot(&shifted, 4, &dims).unwrap();
    assert!(dice(&wrong, &y) >= 0.999);
}

#[test]
fn ce_of_uniform_is_ln4() {
    let y = one_hot(&labels_with_all_classes(27), 4, &[1, 3, 3, 3]).unwrap();
    let p = Tensor::full(vec![1, 4, 3, 3, 3], 0.25);
    assert!((ce(&p, &y) - 4f64.ln()).abs() <= 1e-9);
}

#[test]
fn combined_loss_is_exact_weighted_sum() {
    let mut g = rng(4);
    let p = probs_from(randn(&[2, 4, 2, 3, 2], &mut g));
    let labels: Vec<u8> = (0..24).map(|i| ((i * 7) % 4) as u8).collect();
    let y = one_hot(&labels, 4, &[2, 2, 3, 2]).unwrap();
    for cfg in [LossConfig::default(), LossConfig { lambda_dice: 0.3, lambda_ce: 2.0, epsilon: 1e-5 }] {
        let mut tape = Tape::inference();
        let (pv, yv) = (tape.constant(p.clone()), tape.constant(y.clone()));
        let (total, d, c) = total_loss(&mut tape, &pv, &yv, &cfg).unwrap();
        let (d, c) = (d.value().item(), c.value().item());
        assert_eq!(total.value().item(), cfg.lambda_dice * d + cfg.lambda_ce * c);
    }
}

#[test]
fn one_hot_rejects_bad_labels() {
    assert!(matches!(one_hot(&[0, 5], 4, &[1, 2]), Err(Error::LabelOutOfRange { label: 5, classes: 4 })));
    assert!(one_hot(&[0, 1, 2], 4, &[1, 2]).is_err());
}

proptest! {
    #[test]
    fn dice_loss_lies_in_unit_interval(seed in any::<u64>(), scale in 0.1f64..20.0) {
        let mut g = rng(seed);
        let p = probs_from(randn(&[1, 4, 3, 3, 2], &mut g).map(|v| v * scale));
        let labels: Vec<u8> = (0..18).map(|i| ((i as u64 * 31 + seed) % 4) as u8).collect();
        let y = one_hot(&labels, 4, &[1, 3, 3, 2]).unwrap();
        let d = dice(&p, &y);
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert!(ce(&p, &y) >= 0.0);
    }

    #[test]
    fn cosine_is_monotone_and_bounded(t_max in 1usize..500, hi in 1e-6f64..1.0, frac in 0.0f64..1.0) {
        let lo = hi * frac;
        let mut prev = f64::INFINITY;
        for t in 0..=t_max {
            let lr = cosine_lr(t, t_max, hi, lo).unwrap();
            prop_assert!(lr <= prev + 1e-18);
            prop_assert!(lr >= lo - 1e-18 && lr <= hi);
            prev = lr;
        }
        prop_assert_eq!(cosine_lr(0, t_max, hi, lo).unwrap(), hi);
        prop_assert!((cosine_lr(t_max, t_max, hi, lo).unwrap() - lo).abs() <= 1e-15);
        prop_assert!(cosine_lr(t_max + 1, t_max, hi, lo).is_err());
    }

    #[test]
    fn adamw_with_zero_gradient_only_decays(theta in -5.0f64..5.0, lr in 0.0f64..0.5) {
        let mut p = Param::new("w", Tensor::scalar(theta));
        p.tensor_mut().set_grad(vec![0.0]).unwrap();
        let mut st = OptimState::default();
        adamw_step(&mut p, &mut st, &AdamWConfig::default(), lr).unwrap();
        prop_assert_eq!(p.tensor().data()[0], theta * (1.0 - lr * 0.01));
    }
}

#[test]
fn adamw_hand_oracle() {
    let mut p = Param::new("w", Tensor::scalar(1.0));
    p.tensor_mut().set_grad(vec![0.5]).unwrap();
    let mut st = OptimState::default();
    adamw_step(&mut p, &mut st, &AdamWConfig::default(), 0.1).unwrap();
    // first step: m^ = g, v^ = g^2, so the update is g / (|g| + eps)
    let want = 1.0 * (1.0 - 0.1 * 0.01) - 0.1 * 0.5 / (0.5 + 1e-8);
    assert!((p.tensor().data()[0] - want).abs() < 1e-15);
    assert!((p.tensor().data()[0] - 0.899).abs() < 1e-8);
    assert_eq!(st.step, 1);
    let m1 = (1.0 - 0.9) * 0.5;
    assert_eq!(st.m["w"], vec![m1]);

    // second step by hand
    p.tensor_mut().set_grad(vec![-1.0]).unwrap();
    let theta = p.tensor().data()[0];
    adamw_step(&mut p, &mut st, &AdamWConfig::default(), 0.1).unwrap();
    let m = 0.9 * m1 + (1.0 - 0.9) * -1.0;
    let v = 0.999 * ((1.0 - 0.999) * 0.25) + (1.0 - 0.999) * 1.0;
    let update = (m / (1.0 - 0.81)) / ((v / (1.0 - 0.999f64.powi(2))).sqrt() + 1e-8);
    let want = theta * (1.0 - 0.001) - 0.1 * update;
    assert!((p.tensor().data()[0] - want).abs() < 1e-15);
}

#[test]
fn adamw_rejects_non_finite_gradients_without_side_effects() {
    let mut model = DALightModel::new(tiny(), 0).unwrap();
    let before: Vec<f64> = model.init.conv.weight.tensor().data().to_vec();
    model.zero_grads();
    let n = model.init.conv.bias.numel();
    model.init.conv.bias.tensor_mut().set_grad(vec![f64::NAN; n]).unwrap();
    let mut st = OptimState::default();
    assert!(matches!(adamw_step(&mut model, &mut st, &AdamWConfig::default(), 0.1), Err(Error::NonFinite(_))));
    assert_eq!(st, OptimState::default());
    assert_eq!(model.init.conv.weight.tensor().data(), &before[..]);
}

fn tiny() -> ModelConfig {
    ModelConfig { base_width: 4, bottleneck_width: 16, ssfb_rank: 2, ..ModelConfig::default() }
}

fn cases(n: usize) -> Vec<PreparedCase> {
    (0..n)
        .map(|i| {
            let id = format!("case_{i:03}");
            PreparedCase::new(&generate_phantom(&mut phantom_rng(0, &id), [16; 3], &id, 4, 8).unwrap())
        })
        .collect()
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig { epochs, steps_per_case: 2, patch: 8, lr_max: 1e-3, val_every: 1, val_patches_per_case: 1, ..TrainConfig::default() }
}

fn run(epochs: usize) -> (DALightModel, TrainState) {
    let data = cases(2);
    let mut model = DALightModel::new(tiny(), 0).unwrap();
    let mut state = TrainState::default();
    train(&mut model, &mut state, &data, &data, &quick(epochs), |_| {}).unwrap();
    (model, state)
}

#[test]
fn training_is_deterministic() {
    let (ma, a) = run(2);
    let (mb, b) = run(2);
    assert_eq!(history_csv(&a.steps), history_csv(&b.steps));
    assert_eq!(snapshot(&ma), snapshot(&mb));
    assert_eq!(a.steps.len(), 8);
    assert_eq!(a.history.len(), 2);
    let csv = history_csv(&a.steps);
    assert!(csv.starts_with("epoch,step,lr,train_loss,val_mean_dice\n"));
    assert_eq!(csv.lines().count(), 9);
    // lr follows the per-epoch cosine schedule
    assert_eq!(a.steps[0].lr, 1e-3);
    assert_eq!(a.steps[4].lr, cosine_lr(1, 2, 1e-3, 0.0).unwrap());
}

#[test]
fn training_rejects_bad_configs() {
    let data = cases(1);
    let mut model = DALightModel::new(tiny(), 0).unwrap();
    let mut state = TrainState::default();
    for cfg in [
        TrainConfig { patch: 12, ..quick(1) },
        TrainConfig { lr_max: -1.0, ..quick(1) },
        TrainConfig { val_every: 0, ..quick(1) },
    ] {
        assert!(train(&mut model, &mut state, &data, &data, &cfg, |_| {}).is_err(), "{cfg:?}");
    }
    assert!(train(&mut model, &mut state, &data, &[], &quick(1), |_| {}).is_err());
}

#[test]
fn checkpoints_round_trip_bit_identically() {
    let dir = tempfile::tempdir().unwrap();
    let (model, state) = run(1);
    let path = dir.path().join("a.ckpt");
    save_checkpoint(&path, &model, 0, &state, Some(&quick(1))).unwrap();
    let (back, back_state, meta) = load_checkpoint(&path).unwrap();
    assert_eq!(snapshot(&back), snapshot(&model));
    assert_eq!(back_state, state);
    assert_eq!(meta.train, Some(quick(1)));
    let again = dir.path().join("b.ckpt");
    save_checkpoint(&again, &back, 0, &back_state, Some(&quick(1))).unwrap();
    assert_eq!(fs::read(&path).unwrap(), fs::read(&again).unwrap());
    let raw = read_checkpoint(&path).unwrap();
    write_checkpoint(&again, &raw).unwrap();
    assert_eq!(fs::read(&path).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn resumed_training_matches_uninterrupted() {
    let dir = tempfile::tempdir().unwrap();
    let (full_model, full_state) = run(2);
    let (half_model, half_state) = run(1);
    let path = dir.path().join("half.ckpt");
    save_checkpoint(&path, &half_model, 0, &half_state, Some(&quick(2))).unwrap();
    let (mut model, mut state, _) = load_checkpoint(&path).unwrap();
    let data = cases(2);
    train(&mut model, &mut state, &data, &data, &quick(2), |_| {}).unwrap();
    assert_eq!(history_csv(&state.steps), history_csv(&full_state.steps));
    assert_eq!(snapshot(&model), snapshot(&full_model));
    assert_eq!(state.optim, full_state.optim);
}

#[test]
fn corrupted_checkpoints_map_to_specific_errors() {
    let dir = tempfile::tempdir().unwrap();
    let model = DALightModel::new(tiny(), 0).unwrap();
    let path = dir.path().join("w.ckpt");
    save_weights(&path, &model, 0, None).unwrap();
    let good = fs::read(&path).unwrap();
    let bad = dir.path().join("bad.ckpt");
    let check = |bytes: &[u8]| {
        fs::write(&bad, bytes).unwrap();
        read_checkpoint(&bad)
    };
    assert!(matches!(read_checkpoint(&dir.path().join("none")), Err(Error::MissingFile(_))));
    let mut b = good.clone();
    b[1] = b'!';
    assert!(matches!(check(&b), Err(Error::BadMagic { .. })));
    let mut b = good.clone();
    b[4] = 2;
    assert!(matches!(check(&b), Err(Error::VersionMismatch { .. })));
    assert!(matches!(check(&good[..good.len() - 3]), Err(Error::Truncated { .. })));
    assert!(matches!(check(&good[..7]), Err(Error::Truncated { .. })));
    let mut b = good.clone();
    b.extend_from_slice(&[1, 2, 3]);
    assert!(matches!(check(&b), Err(Error::Malformed(_))));
    let mut b = good.clone();
    b[9] = b'#';
    assert!(matches!(check(&b), Err(Error::Json(_)) | Err(Error::Malformed(_))));

    // a checkpoint for a different architecture
    let other = DALightModel::new(ModelConfig { base_width: 8, ..tiny() }, 0).unwrap();
    let ckpt = read_checkpoint(&path).unwrap();
    let weights = ckpt.tensors.iter().map(|(n, t)| (n.trim_start_matches("model/").to_string(), t.clone())).collect();
    let mut target = other;
    assert!(matches!(load_weights(&mut target, &weights), Err(Error::Shape { .. })));
    let mut fewer: std::collections::BTreeMap<String, Tensor> = weights.clone();
    fewer.remove("head.classify.weight");
    let mut target = DALightModel::new(tiny(), 0).unwrap();
    assert!(matches!(load_weights(&mut target, &fewer), Err(Error::TensorMismatch { .. })));
}

#[test]
fn evaluation_counts_every_voxel() {
    let data = cases(1);
    let model = DALightModel::new(tiny(), 0).unwrap();
    let ev = evaluate_cases(&model, &data).unwrap();
    assert_eq!(ev.confusion.total(), 16 * 16 * 16);
    assert_eq!(ev.calibration.total, 16 * 16 * 16);
    // an untrained model predicts uniform posteriors: all argmax ties go to BG
    assert_eq!(ev.confusion.trace() as usize, data[0].labels.iter().filter(|&&l| l == 0).count());
}
