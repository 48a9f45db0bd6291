//! Finite-difference gradient suite over every primitive and composite
//! layer, shared by the test suite and the command-line harness.
//!
//! Each entry draws random shapes and values, randomizes any
//! zero-initialized parameters so every path carries signal, and reduces the
//! output to a scalar through a fixed random weighting.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{grad_check, grad_check_module, GradCheckReport, Tape, Var};
use crate::error::Result;
use crate::model::{DALightModel, ModelConfig};
use crate::nn::{
    BlockConfig, ConvKind, CrossSliceAttention, Downsample, Init, LightweightBlock, Module, NormKind,
    ScannerAwareNorm, SegmentationHead, SepConv, SimpleFusion, SqueezeExcite, Ssfb, Upsample,
};
use crate::ops::{self, PoolMode};
use crate::tensor::Tensor;
use crate::train::{ce_loss, dice_loss, one_hot, LossConfig};

/// Relative-error gate of the suite.
pub const GRAD_TOL: f64 = 1e-4;
/// Finite-difference step, scaled by `max(1, |x|)`.
pub const FD_STEP: f64 = 1e-3;

#[derive(Clone, Debug, Serialize)]
pub struct CheckEntry {
    pub name: &'static str,
    pub instances: usize,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: String,
    pub passed: bool,
}

fn randn(dims: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::randn(dims.to_vec(), 1.0, rng)
}

/// `sum(r * y)` for a fixed random `r`.
fn project(tape: &mut Tape, y: &Var, seed: u64) -> Result<Var> {
    let mut rng = crate::train::stream_rng(seed, 7);
    let r = tape.constant(randn(y.dims(), &mut rng));
    let p = ops::mul(tape, y, &r)?;
    Ok(ops::sum(tape, &p))
}

/// Replaces every parameter with `N(center, 0.5^2)` draws, `center` one for
/// norm scales so normalization stays well conditioned.
fn randomize<M: Module>(m: &mut M, rng: &mut ChaCha8Rng) {
    m.visit_mut(&mut |p| {
        let gain = p.name().contains("gamma");
        for v in p.tensor_mut().data_mut() {
            let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng);
            *v = if gain { 1.0 + 0.3 * z } else { 0.5 * z };
        }
    });
}

fn merge(acc: &mut Option<GradCheckReport>, r: GradCheckReport) {
    match acc {
        Some(a) => {
            a.checked += r.checked;
            if r.max_rel_error > a.max_rel_error {
                a.max_rel_error = r.max_rel_error;
                a.worst = r.worst;
            }
        }
        None => *acc = Some(r),
    }
}

type Instance = Box<dyn Fn(&mut ChaCha8Rng, u64) -> Result<GradCheckReport>>;

fn primitive(
    make_inputs: impl Fn(&mut ChaCha8Rng) -> Vec<Tensor> + 'static,
    f: impl Fn(&mut Tape, &[Var]) -> Result<Var> + Clone + 'static,
) -> Instance {
    Box::new(move |rng, seed| {
        let inputs = make_inputs(rng);
        let f = f.clone();
        grad_check(move |tape, xs| { let y = f(tape, xs)?; project(tape, &y, seed) }, &inputs, FD_STEP)
    })
}

fn module<M: Module + 'static>(
    build: impl Fn(&mut ChaCha8Rng, u64) -> (M, Vec<Tensor>) + 'static,
    f: impl Fn(&M, &mut Tape, &[Var]) -> Result<Var> + Clone + 'static,
) -> Instance {
    Box::new(move |rng, seed| {
        let (mut m, inputs) = build(rng, seed);
        randomize(&mut m, rng);
        let f = f.clone();
        grad_check_module(&mut m, &inputs, FD_STEP, move |m, tape, xs| {
            let y = f(m, tape, xs)?;
            project(tape, &y, seed)
        })
    })
}

fn vol(rng: &mut ChaCha8Rng, b: usize, c: usize, lo: usize, hi: usize) -> Vec<usize> {
    vec![b, c, rng.random_range(lo..=hi), rng.random_range(lo..=hi), rng.random_range(lo..=hi)]
}

fn probs_and_labels(rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    let dims = vol(rng, 1, 4, 2, 3);
    let z = randn(&dims, rng);
    let mut tape = Tape::inference();
    let zv = tape.constant(z);
    vec![ops::softmax_channel(&mut tape, &zv).expect("softmax").value().clone()]
}

fn labels_for(p: &Tensor, seed: u64) -> Tensor {
    let mut rng = crate::train::stream_rng(seed, 11);
    let n = p.numel() / 4;
    let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..4u8)).collect();
    let mut dims = vec![1];
    dims.extend_from_slice(&p.dims()[2..]);
    one_hot(&labels, 4, &dims).expect("one-hot")
}

fn entries() -> Vec<(&'static str, Instance)> {
    let mut out: Vec<(&'static str, Instance)> = Vec::new();
    for (name, stride) in [("conv3d", 1), ("conv3d_strided", 2)] {
        out.push((
            name,
            primitive(
                |r| {
                    let (ci, co) = (r.random_range(1..=3), r.random_range(1..=3));
                    vec![randn(&vol(r, 1, ci, 3, 4), r), randn(&[co, ci, 3, 3, 3], r), randn(&[co], r)]
                },
                move |t, x| ops::conv3d(t, &x[0], &x[1], Some(&x[2]), stride, 1),
            ),
        ));
    }
    out.push((
        "depthwise_conv3d",
        primitive(
            |r| {
                let c = r.random_range(1..=3);
                vec![randn(&vol(r, 2, c, 2, 4), r), randn(&[c, 3, 3, 3], r)]
            },
            |t, x| ops::depthwise_conv3d(t, &x[0], &x[1], 1, 1),
        ),
    ));
    out.push((
        "pointwise_conv3d",
        primitive(
            |r| {
                let (ci, co) = (r.random_range(1..=4), r.random_range(1..=4));
                vec![randn(&vol(r, 2, ci, 1, 3), r), randn(&[co, ci], r), randn(&[co], r)]
            },
            |t, x| ops::pointwise_conv3d(t, &x[0], &x[1], Some(&x[2])),
        ),
    ));
    out.push((
        "transposed_conv3d",
        primitive(
            |r| {
                let (ci, co) = (r.random_range(1..=3), r.random_range(1..=3));
                vec![randn(&vol(r, 1, ci, 1, 3), r), randn(&[ci, co, 2, 2, 2], r), randn(&[co], r)]
            },
            |t, x| ops::transposed_conv3d(t, &x[0], &x[1], Some(&x[2])),
        ),
    ));
    out.push((
        "group_norm",
        primitive(
            |r| {
                let c = [2, 4, 6][r.random_range(0..3)];
                vec![randn(&vol(r, 2, c, 2, 3), r), randn(&[c], r), randn(&[c], r)]
            },
            |t, x| {
                let c = x[0].dims()[1];
                ops::group_norm(t, &x[0], c / 2, &x[1], &x[2], 1e-5)
            },
        ),
    ));
    out.push(("gelu", primitive(|r| vec![randn(&vol(r, 1, 2, 1, 3), r)], |t, x| Ok(ops::gelu(t, &x[0])))));
    out.push(("sigmoid", primitive(|r| vec![randn(&vol(r, 1, 2, 1, 3), r)], |t, x| Ok(ops::sigmoid(t, &x[0])))));
    out.push((
        "add_broadcast",
        primitive(
            |r| {
                let d = vol(r, 2, 3, 1, 3);
                vec![randn(&d, r), randn(&d[..3], r)]
            },
            |t, x| ops::add(t, &x[0], &x[1]),
        ),
    ));
    out.push((
        "mul_broadcast",
        primitive(
            |r| {
                let d = vol(r, 2, 3, 1, 3);
                let keep = r.random_range(2..=5);
                vec![randn(&d, r), randn(&d[..keep], r)]
            },
            |t, x| ops::mul(t, &x[0], &x[1]),
        ),
    ));
    out.push(("affine", primitive(|r| vec![randn(&vol(r, 1, 2, 1, 3), r)], |t, x| Ok(ops::affine(t, &x[0], -1.7, 0.3)))));
    out.push((
        "concat_channels",
        primitive(
            |r| {
                let d = vol(r, 2, 2, 1, 3);
                let mut e = d.clone();
                e[1] = 3;
                vec![randn(&d, r), randn(&e, r)]
            },
            |t, x| ops::concat_channels(t, &x[0], &x[1]),
        ),
    ));
    out.push((
        "select_row",
        primitive(|r| vec![randn(&[5, r.random_range(1..=4)], r)], |t, x| ops::select_row(t, &x[0], 3)),
    ));
    out.push((
        "softmax_axis",
        primitive(
            |r| vec![randn(&vol(r, 2, 4, 1, 3), r)],
            |t, x| {
                let a = ops::softmax_axis(t, &x[0], 1)?;
                ops::softmax_axis(t, &a, 4)
            },
        ),
    ));
    out.push((
        "pool",
        primitive(
            |r| vec![randn(&vol(r, 2, 3, 1, 3), r)],
            |t, x| {
                let a = ops::pool(t, &x[0], PoolMode::MeanOverHw)?;
                let b = ops::pool(t, &x[0], PoolMode::GlobalMean)?;
                let a = ops::pool(t, &a, PoolMode::GlobalMean)?;
                ops::mul(t, &a, &b)
            },
        ),
    ));
    out.push((
        "matmul_transpose",
        primitive(
            |r| {
                let (b, m, k, n) = (r.random_range(1..=2), r.random_range(1..=4), r.random_range(1..=4), r.random_range(1..=4));
                vec![randn(&[b, m, k], r), randn(&[b, n, k], r)]
            },
            |t, x| {
                let bt = ops::transpose(t, &x[1])?;
                ops::matmul(t, &x[0], &bt)
            },
        ),
    ));
    out.push((
        "interpolate_trilinear",
        primitive(
            |r| vec![randn(&vol(r, 1, 2, 2, 4), r)],
            |t, x| {
                let d = x[0].dims();
                ops::interpolate_trilinear(t, &x[0], [d[2] + 1, (d[3] * 2).max(2), 2])
            },
        ),
    ));
    out.push((
        "reshape_sum",
        primitive(
            |r| vec![randn(&[2, 3, 4], r)],
            |t, x| {
                let y = ops::reshape(t, &x[0], vec![6, 4])?;
                let z = ops::mul(t, &y, &y)?;
                Ok(ops::sum(t, &z))
            },
        ),
    ));
    out.push((
        "dice_loss",
        Box::new(|r, seed| {
            let p = probs_and_labels(r).remove(0);
            let y = labels_for(&p, seed);
            grad_check(
                move |t, xs| {
                    let yv = t.constant(y.clone());
                    dice_loss(t, &xs[0], &yv, &LossConfig::default())
                },
                &[p],
                FD_STEP,
            )
        }),
    ));
    out.push((
        "ce_loss",
        Box::new(|r, seed| {
            let p = probs_and_labels(r).remove(0);
            let y = labels_for(&p, seed);
            grad_check(
                move |t, xs| {
                    let yv = t.constant(y.clone());
                    ce_loss(t, &xs[0], &yv)
                },
                &[p],
                FD_STEP,
            )
        }),
    ));
    out.push((
        "sepconv",
        module(
            |r, seed| {
                let (ci, co) = (r.random_range(1..=3), r.random_range(1..=3));
                (SepConv::new(&mut Init::new(seed), ci, co), vec![randn(&vol(r, 1, ci, 2, 3), r)])
            },
            |m, t, x| m.forward(t, &x[0]),
        ),
    ));
    out.push((
        "scanner_aware_norm",
        module(
            |r, seed| {
                let c = [2, 4][r.random_range(0..2)];
                let bucket = r.random_range(0..4);
                let x = randn(&vol(r, 1, c, 2, 3), r);
                (
                    (ScannerAwareNorm::with_groups(&mut Init::new(seed), c, 4, c / 2), bucket),
                    vec![x],
                )
            },
            |(m, bucket), t, x| {
                let a = m.forward(t, &x[0], Some(*bucket))?;
                let b = m.forward(t, &x[0], None)?;
                ops::add(t, &a, &b)
            },
        ),
    ));
    out.push((
        "squeeze_excite",
        module(
            |r, seed| {
                let c = r.random_range(2..=6);
                (SqueezeExcite::new(&mut Init::new(seed), c, 2), vec![randn(&vol(r, 1, c, 1, 3), r)])
            },
            |m, t, x| m.forward(t, &x[0]),
        ),
    ));
    out.push((
        "cross_slice_attention",
        module(
            |r, seed| {
                let c = r.random_range(2..=4);
                let d = r.random_range(2..=3);
                (CrossSliceAttention::new(&mut Init::new(seed), c, d), vec![randn(&vol(r, 2, c, 2, 4), r)])
            },
            |m, t, x| m.forward(t, &x[0]),
        ),
    ));
    out.push((
        "ssfb",
        module(
            |r, seed| {
                let (cd, ce) = (2, [2, 4][r.random_range(0..2)]);
                let dims = vol(r, 1, cd, 2, 3);
                let mut e = dims.clone();
                e[1] = ce;
                (Ssfb::new(&mut Init::new(seed), cd, ce, 2), vec![randn(&dims, r), randn(&e, r)])
            },
            |m, t, x| m.forward(t, &x[0], &x[1]),
        ),
    ));
    out.push((
        "lightweight_block",
        module(
            |r, seed| {
                let (ci, co) = (r.random_range(1..=2) * 2, 4);
                let kind = if r.random_bool(0.5) { ConvKind::Separable } else { ConvKind::Dense };
                let cfg = BlockConfig {
                    use_csa: true,
                    csa_rank: 2,
                    groups: 2,
                    buckets: 3,
                    ..BlockConfig::new(ci, co, kind, NormKind::ScannerAware)
                };
                let b = LightweightBlock::new(&mut Init::new(seed), &cfg).expect("block config");
                (b, vec![randn(&vol(r, 1, ci, 2, 3), r)])
            },
            |m, t, x| m.forward(t, &x[0], Some(1)),
        ),
    ));
    out.push((
        "downsample_upsample",
        module(
            |r, seed| {
                let mut init = Init::new(seed);
                let c = r.random_range(1..=2);
                let parts = (Downsample::new(&mut init.pp("down"), c, 2), Upsample::new(&mut init.pp("up"), 2, c));
                (parts, vec![randn(&[1, c, 2, 4, 2], r)])
            },
            |(d, u), t, x| {
                let h = d.forward(t, &x[0])?;
                u.forward(t, &h)
            },
        ),
    ));
    out.push((
        "simple_fusion",
        module(
            |r, seed| {
                let dims = vol(r, 1, 2, 1, 3);
                (SimpleFusion::new(&mut Init::new(seed), 2, 2), vec![randn(&dims, r), randn(&dims, r)])
            },
            |m, t, x| m.forward(t, &x[0], &x[1]),
        ),
    ));
    out.push((
        "segmentation_head",
        module(
            |r, seed| {
                let c = [2, 4][r.random_range(0..2)];
                (SegmentationHead::new(&mut Init::new(seed), c, 4), vec![randn(&vol(r, 1, c, 2, 3), r)])
            },
            |m, t, x| m.forward(t, &x[0]),
        ),
    ));
    out
}

impl<A: Module, B: Module> Module for (A, B) {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a crate::nn::Param)) {
        self.0.visit(f);
        self.1.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut crate::nn::Param)) {
        self.0.visit_mut(f);
        self.1.visit_mut(f);
    }
}

impl Module for usize {
    fn visit<'a>(&'a self, _: &mut dyn FnMut(&'a crate::nn::Param)) {}

    fn visit_mut(&mut self, _: &mut dyn FnMut(&mut crate::nn::Param)) {}
}

/// Small end-to-end configuration for the whole-model check.
pub fn tiny_config() -> ModelConfig {
    ModelConfig { base_width: 2, bottleneck_width: 8, ssfb_rank: 2, num_buckets: 4, ..ModelConfig::default() }
}

/// Whole-model check on a `[1, 4, 8, 8, 8]` input through the softmax.
pub fn model_gradcheck(seed: u64) -> Result<GradCheckReport> {
    let mut rng = crate::train::stream_rng(seed, 3);
    let mut model = DALightModel::new(tiny_config(), seed)?;
    randomize(&mut model, &mut rng);
    let x = randn(&[1, 4, 8, 8, 8], &mut rng);
    grad_check_module(&mut model, &[x], FD_STEP, move |m, t, xs| {
        let p = m.forward(t, &xs[0], Some(1))?;
        project(t, &p, seed)
    })
}

/// Runs every entry on `instances` random draws each.
pub fn gradient_suite(instances: usize, seed: u64) -> Result<Vec<CheckEntry>> {
    let mut out = Vec::new();
    for (k, (name, run)) in entries().into_iter().enumerate() {
        let mut acc = None;
        for i in 0..instances {
            let s = seed.wrapping_mul(1000).wrapping_add((k * 100 + i) as u64);
            let mut rng = crate::train::stream_rng(s, 0);
            merge(&mut acc, run(&mut rng, s)?);
        }
        let r = acc.expect("at least one instance");
        out.push(CheckEntry {
            name,
            instances,
            checked: r.checked,
            max_rel_error: r.max_rel_error,
            passed: r.max_rel_error <= GRAD_TOL,
            worst: r.worst,
        });
    }
    Ok(out)
}

/// Outcome of the desk-scale learning run.
#[derive(Clone, Debug, Serialize)]
pub struct SmokeReport {
    pub steps: usize,
    pub first_loss_mean: f64,
    pub last_loss_mean: f64,
    pub class_dice: Vec<Option<f64>>,
    pub mean_tumor_dice: Option<f64>,
    pub seconds: f64,
}

impl SmokeReport {
    pub fn loss_decreased(&self) -> bool {
        self.last_loss_mean < self.first_loss_mean
    }
}

/// Settings of the learning smoke run; the defaults are the calibrated ones.
#[derive(Clone, Debug, Serialize)]
pub struct SmokeConfig {
    pub seed: u64,
    pub cases: usize,
    pub extent: usize,
    pub train: crate::train::TrainConfig,
    pub eval_patches_per_case: usize,
}

impl Default for SmokeConfig {
    fn default() -> Self {
        SmokeConfig {
            seed: 0,
            cases: 4,
            extent: 32,
            train: crate::train::TrainConfig { epochs: 2, steps_per_case: 25, patch: 16, lr_max: 2e-3, ..Default::default() },
            eval_patches_per_case: 4,
        }
    }
}

/// Trains the default model on phantoms and scores fresh training patches.
pub fn smoke_test(cfg: &SmokeConfig) -> Result<SmokeReport> {
    use crate::data::{generate_phantom, phantom_rng, sample_patch, PreparedCase};
    let start = std::time::Instant::now();
    let cases = (0..cfg.cases)
        .map(|i| {
            let id = format!("case_{i:03}");
            let rec = generate_phantom(&mut phantom_rng(cfg.seed, &id), [cfg.extent; 3], &id, 4, 8)?;
            Ok(PreparedCase::new(&rec))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = cfg.seed;
    let mut model = DALightModel::new(ModelConfig::default(), cfg.seed)?;
    let mut state = crate::train::TrainState::default();
    crate::train::train(&mut model, &mut state, &cases, &cases, &train_cfg, |_| {})?;
    let losses: Vec<f64> = state.steps.iter().map(|s| s.train_loss).collect();
    let window = 10.min(losses.len());
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let mut rng = crate::train::stream_rng(cfg.seed, u64::MAX - 1);
    let mut patches = Vec::new();
    for case in &cases {
        for _ in 0..cfg.eval_patches_per_case {
            patches.push(sample_patch(case, train_cfg.patch, &mut rng, train_cfg.tumor_bias)?);
        }
    }
    let ev = crate::train::evaluate_patches(&model, &patches)?;
    Ok(SmokeReport {
        steps: losses.len(),
        first_loss_mean: mean(&losses[..window]),
        last_loss_mean: mean(&losses[losses.len() - window..]),
        class_dice: ev.metrics.classes.iter().map(|c| c.dice).collect(),
        mean_tumor_dice: ev.mean_tumor_dice(),
        seconds: start.elapsed().as_secs_f64(),
    })
}
