use dalight::metrics::*;
use dalight::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn hand_worked_confusion() {
    // truth 0 0 1 1 2 3 3 3 / pred 0 1 1 1 2 3 3 0
    let truth = [0u8, 0, 1, 1, 2, 3, 3, 3];
    let pred = [0u8, 1, 1, 1, 2, 3, 3, 0];
    let mut cm = ConfusionMatrix::new(4);
    cm.accumulate(&pred, &truth).unwrap();
    assert_eq!(cm.total(), 8);
    assert_eq!(cm.trace(), 6);
    assert_eq!(cm.accuracy(), Some(0.75));
    assert_eq!(cm.one_vs_rest(1), (2, 1, 0, 5));
    let m = per_class(&cm);
    assert_eq!(m.classes[1].dice, Some(0.8));
    assert_eq!(m.classes[1].precision, Some(2.0 / 3.0));
    assert_eq!(m.classes[1].sensitivity, Some(1.0));
    assert_eq!(m.classes[2].dice, Some(1.0));
    assert_eq!(m.classes[3].dice, Some(0.8));
    assert_eq!(m.classes[3].sensitivity, Some(2.0 / 3.0));
    assert_eq!(m.classes[3].specificity, Some(1.0));
    let want = (0.8 + 1.0 + 0.8) / 3.0;
    assert!((m.macro_tumor.dice.unwrap() - want).abs() < 1e-15);
    assert_eq!(cm.to_csv().lines().next(), Some("1,1,0,0"));
    assert_eq!(cm.to_csv().lines().count(), 4);
}

#[test]
fn absent_class_leaves_scores_undefined() {
    let mut cm = ConfusionMatrix::new(4);
    cm.accumulate(&[0, 1, 2], &[0, 1, 2]).unwrap();
    let m = per_class(&cm);
    assert_eq!(m.classes[3].dice, None);
    assert_eq!(m.classes[3].specificity, Some(1.0));
    assert_eq!(m.macro_tumor.dice, None);
    assert!(cm.accumulate(&[0, 4], &[0, 0]).is_err());
    assert!(cm.accumulate(&[0], &[0, 0]).is_err());
}

#[test]
fn argmax_breaks_ties_low_and_reports_confidence() {
    // two voxels: [0.25 x4] and [0.1, 0.6, 0.2, 0.1]
    let p = Tensor::from_vec(vec![1, 4, 2], vec![0.25, 0.1, 0.25, 0.6, 0.25, 0.2, 0.25, 0.1]).unwrap();
    assert_eq!(argmax_labels(&p), vec![0, 1]);
    assert_eq!(confidences(&p), vec![0.25, 0.6]);
}

#[test]
fn dice_per_million_reference_value() {
    let v = dice_per_million(0.727, 2_220_000).unwrap();
    assert_eq!(format!("{v:.2}"), "0.33");
    assert!(dice_per_million(0.5, 0).is_err());
}

#[test]
fn ece_hand_example_and_calibrated_set() {
    let conf = vec![0.9; 10];
    let correct: Vec<bool> = (0..10).map(|i| i < 8).collect();
    let r = ece(&conf, &correct, ECE_BINS).unwrap();
    assert!((r.ece - 0.1).abs() <= 1e-12);
    assert_eq!(r.total, 10);
    assert_eq!(r.bins.iter().map(|b| b.count).sum::<u64>(), 10);

    // each bin holds samples whose hit rate equals their confidence
    let mut conf = Vec::new();
    let mut correct = Vec::new();
    for (c, n, hits) in [(0.5, 10, 5), (0.75, 20, 15), (0.2, 5, 1), (1.0, 7, 7)] {
        conf.extend(std::iter::repeat_n(c, n));
        correct.extend((0..n).map(|i| i < hits));
    }
    assert!(ece(&conf, &correct, ECE_BINS).unwrap().ece <= 1e-12);
    assert!(ece(&[1.2], &[true], ECE_BINS).is_err());
    assert!(ece(&[0.5], &[true, false], ECE_BINS).is_err());
}

#[test]
fn ece_bin_edges_are_right_closed() {
    let r = ece(&[0.0, 0.2, 0.2000001, 1.0], &[true; 4], 5).unwrap();
    let counts: Vec<u64> = r.bins.iter().map(|b| b.count).collect();
    assert_eq!(counts, vec![2, 1, 0, 0, 1]);
}

#[test]
fn iou_dice_identity_on_random_matrices() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..100 {
        let counts: Vec<u64> = (0..16).map(|_| rng.random_range(0..1000)).collect();
        let cm = ConfusionMatrix::from_counts(4, counts).unwrap();
        for s in per_class(&cm).classes {
            if let (Some(d), Some(j)) = (s.dice, s.iou) {
                assert!((j - d / (2.0 - d)).abs() <= 1e-12);
            }
        }
    }
}

fn labels(n: usize) -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..4, n)
}

proptest! {
    #[test]
    fn confusion_is_additive(a in labels(30), b in labels(30), c in labels(20), d in labels(20)) {
        let mut whole = ConfusionMatrix::new(4);
        whole.accumulate(&[a.clone(), c.clone()].concat(), &[b.clone(), d.clone()].concat()).unwrap();
        let mut x = ConfusionMatrix::new(4);
        x.accumulate(&a, &b).unwrap();
        let mut y = ConfusionMatrix::new(4);
        y.accumulate(&c, &d).unwrap();
        x.merge(&y).unwrap();
        prop_assert_eq!(x, whole);
    }

    #[test]
    fn scores_are_bounded_and_order_free(pred in labels(40), truth in labels(40), seed in any::<u64>()) {
        let mut cm = ConfusionMatrix::new(4);
        cm.accumulate(&pred, &truth).unwrap();
        let m = per_class(&cm);
        let mut idx: Vec<usize> = (0..40).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..idx.len()).rev() {
            idx.swap(i, rng.random_range(0..=i));
        }
        let mut shuffled = ConfusionMatrix::new(4);
        let p2: Vec<u8> = idx.iter().map(|&i| pred[i]).collect();
        let t2: Vec<u8> = idx.iter().map(|&i| truth[i]).collect();
        shuffled.accumulate(&p2, &t2).unwrap();
        prop_assert_eq!(&per_class(&shuffled), &m);
        for s in &m.classes {
            for v in [s.dice, s.iou, s.precision, s.sensitivity, s.specificity].into_iter().flatten() {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
        let rows = cm.row_normalized();
        for r in rows.into_iter().flatten() {
            prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn perfect_prediction_scores_one(truth in labels(25)) {
        let mut cm = ConfusionMatrix::new(4);
        cm.accumulate(&truth, &truth).unwrap();
        prop_assert_eq!(cm.accuracy(), Some(1.0));
        for s in per_class(&cm).classes {
            prop_assert!(s.dice.is_none() || s.dice == Some(1.0));
        }
    }

    #[test]
    fn ece_is_bounded(pairs in prop::collection::vec((0.0f64..=1.0, any::<bool>()), 1..60)) {
        let (c, k): (Vec<f64>, Vec<bool>) = pairs.into_iter().unzip();
        let r = ece(&c, &k, ECE_BINS).unwrap();
        prop_assert!((0.0..=1.0).contains(&r.ece));
        prop_assert_eq!(r.bins.iter().map(|b| b.count).sum::<u64>(), c.len() as u64);
    }
}
