use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::data::{augment, sample_patch, PatchSample, PreparedCase, DEFAULT_TUMOR_BIAS};
use crate::error::{Error, Result};
use crate::model::DALightModel;
use crate::nn::Module;
use crate::tensor::Tensor;

use super::eval::evaluate_patches;
use super::loss::{one_hot, total_loss, LossConfig};
use super::optim::{adamw_step, cosine_lr, AdamWConfig, OptimState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    /// Optimizer steps per epoch for each training case.
    pub steps_per_case: usize,
    pub patch: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub optimizer: AdamWConfig,
    pub loss: LossConfig,
    pub tumor_bias: f64,
    pub augment: bool,
    pub val_every: usize,
    pub val_patches_per_case: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            epochs: 2,
            steps_per_case: 25,
            patch: 16,
            lr_max: 5e-5,
            lr_min: 0.0,
            optimizer: AdamWConfig::default(),
            loss: LossConfig::default(),
            tumor_bias: DEFAULT_TUMOR_BIAS,
            augment: true,
            val_every: 2,
            val_patches_per_case: 2,
        }
    }
}

impl TrainConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = self.loss.problems();
        if self.patch == 0 || self.patch % 8 != 0 {
            out.push(format!("patch {} must be a positive multiple of 8", self.patch));
        }
        if self.steps_per_case == 0 {
            out.push("steps_per_case must be positive".into());
        }
        if !(self.lr_max >= self.lr_min && self.lr_min >= 0.0) {
            out.push(format!("learning rates need lr_max >= lr_min >= 0, got {} and {}", self.lr_max, self.lr_min));
        }
        if !(0.0..=1.0).contains(&self.tumor_bias) {
            out.push(format!("tumor_bias {} outside [0, 1]", self.tumor_bias));
        }
        if self.val_every == 0 {
            out.push("val_every must be positive".into());
        }
        if self.val_patches_per_case == 0 {
            out.push("val_patches_per_case must be positive".into());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(p.join("; ")))
        }
    }

    pub fn steps_per_epoch(&self, cases: usize) -> usize {
        self.steps_per_case * cases
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub train_loss: f64,
    /// Set on the last step of a validation epoch.
    pub val_mean_dice: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_dice: Option<f64>,
}

/// Weights at the best validation score so far.
#[derive(Clone, Debug, PartialEq)]
pub struct BestSnapshot {
    pub epoch: usize,
    pub val_dice: f64,
    pub weights: Vec<(String, Tensor)>,
}

/// Everything needed to continue a run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainState {
    pub epochs_done: usize,
    pub optim: OptimState,
    pub steps: Vec<StepRecord>,
    pub history: Vec<EpochRecord>,
    pub best: Option<BestSnapshot>,
}

/// Independent generator for `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const VALIDATION_STREAM: u64 = u64::MAX;

/// Fixed held-out crops, identical at every validation.
pub fn validation_patches(cases: &[PreparedCase], cfg: &TrainConfig) -> Result<Vec<PatchSample>> {
    let mut rng = stream_rng(cfg.seed, VALIDATION_STREAM);
    let mut out = Vec::new();
    for case in cases {
        for _ in 0..cfg.val_patches_per_case {
            out.push(sample_patch(case, cfg.patch, &mut rng, cfg.tumor_bias)?);
        }
    }
    Ok(out)
}

pub fn snapshot(model: &DALightModel) -> Vec<(String, Tensor)> {
    let mut out = Vec::new();
    model.visit(&mut |p| {
        let mut t = p.tensor().clone();
        t.clear_grad();
        out.push((p.name().to_string(), t));
    });
    out
}

/// One optimizer step on one patch; returns the loss before the update.
pub fn train_step(
    model: &mut DALightModel,
    optim: &mut OptimState,
    sample: &PatchSample,
    cfg: &TrainConfig,
    lr: f64,
    step: usize,
) -> Result<f64> {
    let mut tape = Tape::new();
    let x = tape.constant(sample.batch_image());
    let mut dims = vec![1];
    dims.extend_from_slice(&sample.image.dims()[1..]);
    let y = tape.constant(one_hot(&sample.labels, model.config().num_classes, &dims)?);
    let probs = model.forward(&mut tape, &x, Some(sample.bucket))?;
    let (loss, _, _) = total_loss(&mut tape, &probs, &y, &cfg.loss)?;
    let value = loss.value().item();
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss { step, value });
    }
    tape.backward(&loss)?;
    model.assign_grads(&tape);
    drop(tape);
    adamw_step(model, optim, &cfg.optimizer, lr)?;
    Ok(value)
}

/// Continues `state` up to `cfg.epochs`. Each epoch draws its patches from a
/// stream keyed by `(seed, epoch)`, so a run resumed from a saved state
/// repeats the uninterrupted one exactly.
pub fn train(
    model: &mut DALightModel,
    state: &mut TrainState,
    train_cases: &[PreparedCase],
    val_cases: &[PreparedCase],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<()> {
    cfg.validate()?;
    if train_cases.is_empty() || val_cases.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "training needs at least one training and one validation case, got {} and {}",
            train_cases.len(),
            val_cases.len()
        )));
    }
    let val = validation_patches(val_cases, cfg)?;
    let per_epoch = cfg.steps_per_epoch(train_cases.len());
    while state.epochs_done < cfg.epochs {
        let epoch = state.epochs_done;
        let lr = cosine_lr(epoch, cfg.epochs, cfg.lr_max, cfg.lr_min)?;
        let mut rng = stream_rng(cfg.seed, epoch as u64);
        let mut loss_sum = 0.0;
        for _ in 0..per_epoch {
            let case = &train_cases[rng.random_range(0..train_cases.len())];
            let mut sample = sample_patch(case, cfg.patch, &mut rng, cfg.tumor_bias)?;
            if cfg.augment {
                sample = augment(&sample, &mut rng);
            }
            let step = state.steps.len();
            let loss = train_step(model, &mut state.optim, &sample, cfg, lr, step)?;
            loss_sum += loss;
            state.steps.push(StepRecord { epoch, step, lr, train_loss: loss, val_mean_dice: None });
        }
        let val_dice = if (epoch + 1) % cfg.val_every == 0 {
            let dice = evaluate_patches(model, &val)?.mean_tumor_dice();
            if let Some(d) = dice {
                if state.best.as_ref().is_none_or(|b| d > b.val_dice) {
                    state.best = Some(BestSnapshot { epoch, val_dice: d, weights: snapshot(model) });
                }
            }
            if let Some(last) = state.steps.last_mut() {
                last.val_mean_dice = dice;
            }
            dice
        } else {
            None
        };
        let record = EpochRecord { epoch, train_loss: loss_sum / per_epoch as f64, val_dice };
        on_epoch(&record);
        state.history.push(record);
        state.epochs_done += 1;
    }
    Ok(())
}

/// History rows `epoch,step,lr,train_loss,val_mean_dice`.
pub fn history_csv(steps: &[StepRecord]) -> String {
    let mut out = String::from("epoch,step,lr,train_loss,val_mean_dice\n");
    for s in steps {
        let val = s.val_mean_dice.map(|v| format!("{v:.17e}")).unwrap_or_default();
        out.push_str(&format!("{},{},{:.17e},{:.17e},{}\n", s.epoch, s.step, s.lr, s.train_loss, val));
    }
    out
}
