//! Per-bag training objective: class-weighted Bernoulli log-loss on the
//! pooled bag logit plus a λ-scaled divergence between the attention
//! posterior and the graph smoothness prior.
//!
//! The point-mass posterior pays the Dirichlet energy of its means; the
//! diagonal-Gaussian posterior pays the closed-form divergence (energy of
//! the means plus degree-weighted variances minus the entropy term) and
//! feeds the likelihood through a single reparameterized sample
//! `f = mu + sqrt(sigma2) * eps`.

use rand_chacha::ChaCha12Rng;

use crate::autodiff::{Tape, Var};
use crate::data::{standard_normal, PreparedBag};
use crate::error::{Error, Result};
use crate::graph::{dirichlet_energy, gaussian_prior_kl, gaussian_prior_kl_value};
use crate::model::{Gradients, Leases, MilModel, PosteriorKind};
use crate::tensor::Tensor;

/// Cycles in the cyclical λ schedule.
pub const LAMBDA_CYCLES: usize = 5;
/// Fraction of each cycle spent ramping from 0 to 1; the rest holds at 1.
pub const LAMBDA_RAMP_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaPolicy {
    Constant(f64),
    /// Sawtooth ramp restarted [`LAMBDA_CYCLES`] times over the run.
    Cyclical,
}

/// A λ policy bound to a run length, so per-step lookup cannot fail.
#[derive(Debug, Clone, Copy)]
pub struct LambdaSchedule {
    policy: LambdaPolicy,
    cycle_len: usize,
    ramp_steps: usize,
}

impl LambdaSchedule {
    pub fn new(policy: LambdaPolicy, total_steps: usize) -> Result<Self> {
        match policy {
            LambdaPolicy::Constant(v) => {
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::InvalidConfig(format!(
                        "constant lambda must be finite and non-negative, got {}",
                        v
                    )));
                }
                Ok(LambdaSchedule {
                    policy,
                    cycle_len: 0,
                    ramp_steps: 0,
                })
            }
            LambdaPolicy::Cyclical => {
                let cycle_len = total_steps / LAMBDA_CYCLES;
                let ramp_steps = (cycle_len as f64 * LAMBDA_RAMP_FRACTION).floor() as usize;
                if cycle_len == 0 || ramp_steps == 0 {
                    return Err(Error::InvalidConfig(format!(
                        "cyclical lambda needs at least {} steps, got {}",
                        2 * LAMBDA_CYCLES,
                        total_steps
                    )));
                }
                Ok(LambdaSchedule {
                    policy,
                    cycle_len,
                    ramp_steps,
                })
            }
        }
    }

    pub fn at(&self, step: usize) -> f64 {
        match self.policy {
            LambdaPolicy::Constant(v) => v,
            LambdaPolicy::Cyclical => {
                let pos = step % self.cycle_len;
                (pos as f64 / self.ramp_steps as f64).min(1.0)
            }
        }
    }
}

/// Scalar pieces of one loss evaluation. `ll` is the class-weighted
/// negative log-likelihood, `kl` the raw (un-scaled) divergence, and
/// `total = ll + lambda * kl` is what gradients descend.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub ll: f64,
    pub kl: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn zero() -> Self {
        LossBreakdown {
            ll: 0.0,
            kl: 0.0,
            total: 0.0,
        }
    }
}

/// `#negative / #positive` over the given bags, used to up-weight the
/// positive-label log-loss. Degenerate label mixes fall back to 1.
pub fn positive_weight(bags: &[PreparedBag]) -> f64 {
    let pos = bags.iter().filter(|b| b.bag.label == 1).count();
    let neg = bags.len() - pos;
    if pos == 0 || neg == 0 {
        1.0
    } else {
        neg as f64 / pos as f64
    }
}

/// Builds one bag's loss on `tape`. For the Gaussian posterior, `noise`
/// must supply one standard-normal draw per instance; the point-mass
/// posterior ignores it. With `lambda == 0` the divergence is kept off the
/// tape entirely and only reported in the breakdown.
pub fn bag_loss(
    model: &MilModel,
    tape: &Tape,
    leases: &Leases,
    prepared: &PreparedBag,
    lambda: f64,
    pos_weight: f64,
    noise: Option<&[f64]>,
) -> Result<(Var, LossBreakdown)> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::domain("bag_loss", "lambda must be finite and >= 0"));
    }
    if !(pos_weight.is_finite() && pos_weight > 0.0) {
        return Err(Error::domain("bag_loss", "pos_weight must be positive"));
    }
    let bag = &prepared.bag;
    let h = model.bag_transform_fwd(tape, leases, bag)?;
    let (mu, sigma2) = model.attention_posterior_fwd(leases, &h)?;

    let f = match &sigma2 {
        None => mu.clone(),
        Some(s2) => {
            let noise = noise.ok_or_else(|| {
                Error::domain("bag_loss", "Gaussian posterior needs a noise vector")
            })?;
            if noise.len() != bag.n_instances() {
                return Err(Error::shape(
                    "bag_loss",
                    format!(
                        "{} noise values for {} instances",
                        noise.len(),
                        bag.n_instances()
                    ),
                ));
            }
            let eps = tape.constant(Tensor::vector(noise.to_vec()));
            mu.add(&s2.sqrt()?.mul(&eps)?)?
        }
    };

    let logit = model.classify_fwd(leases, &h, &f)?;
    // -log sigmoid(z) = softplus(-z); -log(1 - sigmoid(z)) = softplus(z)
    let ll = if bag.label == 1 {
        logit.neg()?.softplus()?.mul_scalar(pos_weight)?
    } else {
        logit.softplus()?
    };

    let (loss, kl_value) = if lambda == 0.0 {
        let kl_value = match &sigma2 {
            None => prepared.graph.dirichlet_energy_value(&mu.value().into_data())?,
            Some(s2) => gaussian_prior_kl_value(
                &prepared.graph,
                &mu.value().into_data(),
                &s2.value().into_data(),
            )?,
        };
        (ll.clone(), kl_value)
    } else {
        let kl = match &sigma2 {
            None => dirichlet_energy(&mu, &prepared.graph)?,
            Some(s2) => gaussian_prior_kl(&mu, s2, &prepared.graph)?,
        };
        let kl_value = kl.item()?;
        (ll.add(&kl.mul_scalar(lambda)?)?, kl_value)
    };

    let breakdown = LossBreakdown {
        ll: ll.item()?,
        kl: kl_value,
        total: loss.item()?,
    };
    Ok((loss, breakdown))
}

/// Mean loss and mean gradients over a batch. Each bag runs on its own
/// tape; for Gaussian posteriors the noise is drawn from `rng` in batch
/// order, one vector per bag.
pub fn batch_step(
    model: &MilModel,
    batch: &[&PreparedBag],
    lambda: f64,
    pos_weight: f64,
    mut rng: Option<&mut ChaCha12Rng>,
) -> Result<(LossBreakdown, Gradients)> {
    if batch.is_empty() {
        return Err(Error::domain("batch_step", "empty batch"));
    }
    let needs_noise = model.variant.posterior == PosteriorKind::DiagGaussian;
    let mut grads = Gradients::zeros_like(&model.params);
    let mut stats = LossBreakdown::zero();
    for prepared in batch {
        let noise = if needs_noise {
            let rng = rng.as_deref_mut().ok_or_else(|| {
                Error::domain("batch_step", "Gaussian posterior needs an rng")
            })?;
            Some(
                (0..prepared.bag.n_instances())
                    .map(|_| standard_normal(rng))
                    .collect::<Vec<f64>>(),
            )
        } else {
            None
        };
        let tape = Tape::new();
        let leases = model.lease(&tape, true);
        let (loss, breakdown) = bag_loss(
            model,
            &tape,
            &leases,
            prepared,
            lambda,
            pos_weight,
            noise.as_deref(),
        )?;
        loss.backward()?;
        grads.add_assign(&leases.gradients()?)?;
        stats.ll += breakdown.ll;
        stats.kl += breakdown.kl;
        stats.total += breakdown.total;
    }
    let inv = 1.0 / batch.len() as f64;
    grads.scale(inv);
    stats.ll *= inv;
    stats.kl *= inv;
    stats.total *= inv;
    Ok((stats, grads))
}
