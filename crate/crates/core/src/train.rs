//! Training loop: Adam with epoch-granular linear warmup, per-epoch
//! validation scoring, and best-validation-AUROC model selection with ties
//! broken toward the earlier epoch.
//!
//! Determinism contract: given the same model parameters, data, config,
//! and seed, `fit` reproduces its history, step log, and selected
//! parameters bit-for-bit. Batch order reshuffles each epoch from the run
//! seed; validation scoring uses its own fixed seed so model selection
//! never perturbs the training stream.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::data::{derive_rng, mix_seed, PreparedBag};
use crate::error::{Error, Result};
use crate::metrics::{auroc, f1};
use crate::model::{Gradients, MilModel, ParamSet};
use crate::objective::{batch_step, positive_weight, LambdaPolicy, LambdaSchedule};
use crate::tensor::Tensor;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

const SHUFFLE_SALT: u64 = 0x73687566666c65; // "shuffle"
const NOISE_SALT: u64 = 0x6e6f697365; // "noise"
const EVAL_SALT: u64 = 0x6576616c; // "eval"

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub base_lr: f64,
    /// Learning-rate multiplier at epoch 0.
    pub warmup_start_factor: f64,
    /// Epoch at which the learning rate first reaches `base_lr`.
    pub warmup_total_iters: usize,
    pub batch_size: usize,
    /// Monte-Carlo samples per bag when scoring the validation split.
    pub predict_samples: usize,
    pub lambda: LambdaPolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            base_lr: 1e-4,
            warmup_start_factor: 0.1,
            warmup_total_iters: 10,
            batch_size: 8,
            predict_samples: 100,
            lambda: LambdaPolicy::Constant(1.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return Err(Error::InvalidConfig("base_lr must be positive".into()));
        }
        if !(self.warmup_start_factor > 0.0 && self.warmup_start_factor <= 1.0) {
            return Err(Error::InvalidConfig(
                "warmup_start_factor must be in (0, 1]".into(),
            ));
        }
        if self.warmup_total_iters == 0 {
            return Err(Error::InvalidConfig(
                "warmup_total_iters must be >= 1".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.predict_samples == 0 {
            return Err(Error::InvalidConfig("predict_samples must be >= 1".into()));
        }
        Ok(())
    }
}

/// Adds the failing epoch to an error without collapsing its variant, so a
/// numeric failure still surfaces as one downstream.
fn at_epoch(e: Error, epoch: usize) -> Error {
    match e {
        Error::NonFinite { op } => Error::NonFinite {
            op: format!("epoch {}: {}", epoch, op),
        },
        Error::Data(msg) => Error::Data(format!("epoch {}: {}", epoch, msg)),
        Error::DomainViolation { op, detail } => Error::DomainViolation {
            op,
            detail: format!("epoch {}: {}", epoch, detail),
        },
        other => other,
    }
}

/// Epoch-granular warmup: `base_lr * (s + (1-s) * min(epoch, T)/T)`, i.e.
/// linear from `s * base_lr` up to exactly `base_lr` at epoch `T`.
pub fn lr_at(config: &TrainConfig, epoch: usize) -> f64 {
    let s = config.warmup_start_factor;
    let t = config.warmup_total_iters;
    let progress = epoch.min(t) as f64 / t as f64;
    config.base_lr * (s + (1.0 - s) * progress)
}

/// First and second moment buffers, shaped like the parameter set.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros: Vec<Tensor> = params
            .iter()
            .map(|(_, t)| Tensor::zeros(t.shape().to_vec()))
            .collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(
    params: &mut ParamSet,
    grads: &Gradients,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if !(lr.is_finite() && lr > 0.0) {
        return Err(Error::domain("adam_step", "learning rate must be positive"));
    }
    if grads.entries().len() != params.len() || state.m.len() != params.len() {
        return Err(Error::shape(
            "adam_step",
            "parameter, gradient, and state lengths differ".to_string(),
        ));
    }
    state.t += 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(state.t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(state.t as i32);
    for (i, (name, grad)) in grads.entries().iter().enumerate() {
        let (pname, tensor) = &mut params.entries_mut()[i];
        if pname != name || tensor.shape() != grad.shape() {
            return Err(Error::shape(
                "adam_step",
                format!("entry {} does not line up with gradient {}", pname, name),
            ));
        }
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, (p, g)) in tensor.data_mut().iter_mut().zip(grad.data()).enumerate() {
            if !g.is_finite() {
                return Err(Error::non_finite("adam_step"));
            }
            m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * g;
            v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

/// One row of the per-epoch history log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_auroc: f64,
    pub val_f1: f64,
    pub selected: bool,
}

/// One row of the per-step objective log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub lambda: f64,
    pub ll: f64,
    pub kl: f64,
    pub total: f64,
}

pub struct FitResult {
    /// The model restored to the best-validation-AUROC parameters.
    pub model: MilModel,
    pub best_epoch: usize,
    pub best_val_auroc: f64,
    pub history: Vec<EpochRecord>,
    pub steps: Vec<StepRecord>,
}

/// Scores a split with the model's Monte-Carlo predictor. The per-bag seed
/// depends only on `seed` and the bag's position, so repeated calls (e.g.
/// every epoch) reuse identical noise.
pub fn score_split(
    model: &MilModel,
    bags: &[PreparedBag],
    samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    bags.iter()
        .enumerate()
        .map(|(i, b)| model.predict_bag(&b.bag, samples, seed.wrapping_add(i as u64)))
        .collect()
}

pub fn fit(
    model: MilModel,
    train_bags: &[PreparedBag],
    val_bags: &[PreparedBag],
    config: &TrainConfig,
    seed: u64,
) -> Result<FitResult> {
    config.validate()?;
    if train_bags.is_empty() || val_bags.is_empty() {
        return Err(Error::domain("fit", "train and val splits must be non-empty"));
    }
    let mut model = model;
    let steps_per_epoch = train_bags.len().div_ceil(config.batch_size);
    let total_steps = config.epochs * steps_per_epoch;
    let schedule = LambdaSchedule::new(config.lambda, total_steps)?;
    let pos_weight = positive_weight(train_bags);
    let val_labels: Vec<u8> = val_bags.iter().map(|b| b.bag.label).collect();
    let eval_seed = mix_seed(seed, EVAL_SALT);

    let mut adam = AdamState::new(&model.params);
    let mut history: Vec<EpochRecord> = Vec::with_capacity(config.epochs);
    let mut steps: Vec<StepRecord> = Vec::with_capacity(total_steps);
    let mut best: Option<(f64, usize, ParamSet)> = None;
    let mut step = 0usize;

    for epoch in 0..config.epochs {
        let lr = lr_at(config, epoch);
        let mut order: Vec<usize> = (0..train_bags.len()).collect();
        let mut shuffle_rng = derive_rng(seed, SHUFFLE_SALT.wrapping_add(epoch as u64));
        order.shuffle(&mut shuffle_rng);
        let mut noise_rng = derive_rng(seed, NOISE_SALT.wrapping_add(epoch as u64));

        let mut epoch_total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&PreparedBag> = chunk.iter().map(|&i| &train_bags[i]).collect();
            let lambda = schedule.at(step);
            let (stats, grads) =
                batch_step(&model, &batch, lambda, pos_weight, Some(&mut noise_rng))
                    .map_err(|e| at_epoch(e, epoch))?;
            adam_step(&mut model.params, &grads, &mut adam, lr)
                .map_err(|e| at_epoch(e, epoch))?;
            steps.push(StepRecord {
                step,
                lambda,
                ll: stats.ll,
                kl: stats.kl,
                total: stats.total,
            });
            epoch_total += stats.total;
            step += 1;
        }

        let scores = score_split(&model, val_bags, config.predict_samples, eval_seed)
            .map_err(|e| at_epoch(e, epoch))?;
        let val_auroc = auroc(&scores, &val_labels)?;
        let val_f1 = f1(&scores, &val_labels, 0.5)?;
        history.push(EpochRecord {
            epoch,
            lr,
            train_loss: epoch_total / steps_per_epoch as f64,
            val_auroc,
            val_f1,
            selected: false,
        });
        let improved = match &best {
            None => true,
            Some((best_auroc, _, _)) => val_auroc > *best_auroc,
        };
        if improved {
            best = Some((val_auroc, epoch, model.params.clone()));
        }
    }

    let (best_val_auroc, best_epoch, best_params) = best.expect("at least one epoch ran");
    history[best_epoch].selected = true;
    let model = MilModel::from_parts(model.variant, best_params)?;
    Ok(FitResult {
        model,
        best_epoch,
        best_val_auroc,
        history,
        steps,
    })
}

/// CSV `epoch,lr,train_loss,val_auroc,val_f1,selected` with `selected` as
/// 0/1. Floats print in shortest-round-trip form, so identical runs write
/// identical bytes.
pub fn write_history_csv(records: &[EpochRecord], path: &Path) -> Result<()> {
    let mut out = String::from("epoch,lr,train_loss,val_auroc,val_f1,selected\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.epoch,
            r.lr,
            r.train_loss,
            r.val_auroc,
            r.val_f1,
            u8::from(r.selected)
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// CSV `step,lambda,ll,kl,total`.
pub fn write_steps_csv(records: &[StepRecord], path: &Path) -> Result<()> {
    let mut out = String::from("step,lambda,ll,kl,total\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.step, r.lambda, r.ll, r.kl, r.total
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}
