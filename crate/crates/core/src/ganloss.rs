//! Critic and generator objectives.
//!
//! The critic minimizes `-W + s * P + drift`, where `W` is the critic
//! difference, `P` the active gradient penalty and `s` its scaling: 1 for the
//! plain penalties and `max(0, W)` for the scaled one-sided penalty, where both
//! occurrences of `W` stay differentiable.

use std::str::FromStr;

use crate::autodiff::{Tensor, Var};
use crate::error::{Error, Result};
use crate::nets::ParamSet;
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PenaltyKind {
    WeightClip,
    TwoSided,
    OneSided,
    ScaledOneSided,
}

impl PenaltyKind {
    pub const ALL: [PenaltyKind; 4] = [
        Self::WeightClip,
        Self::TwoSided,
        Self::OneSided,
        Self::ScaledOneSided,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::WeightClip => "weight-clip",
            Self::TwoSided => "gp-two-sided",
            Self::OneSided => "gp-one-sided",
            Self::ScaledOneSided => "gp-scaled-one-sided",
        }
    }

    pub fn uses_gradient_penalty(self) -> bool {
        self != Self::WeightClip
    }
}

impl FromStr for PenaltyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown penalty kind `{s}`")))
    }
}

impl std::fmt::Display for PenaltyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PenaltyConfig {
    pub kind: PenaltyKind,
    pub lambda: f64,
    pub clip_bound: f64,
    pub drift_epsilon: f64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        PenaltyConfig {
            kind: PenaltyKind::ScaledOneSided,
            lambda: 10.0,
            clip_bound: 0.01,
            drift_epsilon: 0.001,
        }
    }
}

impl PenaltyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda must be finite and >= 0"));
        }
        if !(self.drift_epsilon >= 0.0 && self.drift_epsilon.is_finite()) {
            return Err(Error::invalid("drift epsilon must be finite and >= 0"));
        }
        if self.kind == PenaltyKind::WeightClip
            && !(self.clip_bound > 0.0 && self.clip_bound.is_finite())
        {
            return Err(Error::invalid("clip bound must be finite and > 0"));
        }
        Ok(())
    }
}

/// Scalar summary of one critic (and optionally generator) update.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub critic_difference: f64,
    /// Penalty value including lambda, before scaling.
    pub penalty_value: f64,
    /// What the penalty adds to the loss after scaling.
    pub penalty_contribution: f64,
    pub drift_value: f64,
    pub total_critic_loss: f64,
    pub generator_loss: f64,
}

fn non_empty<T: Real>(v: &Var<'_, T>, what: &str) -> Result<()> {
    if v.value().is_empty() {
        return Err(Error::invalid(format!("{what} batch is empty")));
    }
    Ok(())
}

/// `mean(d_real) - mean(d_fake)`.
pub fn critic_difference<'g, T: Real>(
    d_real: Var<'g, T>,
    d_fake: Var<'g, T>,
) -> Result<Var<'g, T>> {
    non_empty(&d_real, "real")?;
    non_empty(&d_fake, "fake")?;
    d_real.mean_all()?.sub(d_fake.mean_all()?)
}

/// `t_i * real_i + (1 - t_i) * fake_i` with one `t` per pair.
pub fn interpolate_pairs<T: Real>(
    real: &Tensor<T>,
    fake: &Tensor<T>,
    t: &[f64],
) -> Result<Tensor<T>> {
    if real.shape() != fake.shape() {
        return Err(Error::shape(
            "interpolate_pairs",
            format!("{:?} vs {:?}", real.shape(), fake.shape()),
        ));
    }
    let batch = real.shape()[0];
    if t.len() != batch {
        return Err(Error::shape(
            "interpolate_pairs",
            format!("{} weights for {batch} pairs", t.len()),
        ));
    }
    let row = real.len() / batch.max(1);
    let mut data = Vec::with_capacity(real.len());
    for (i, &ti) in t.iter().enumerate() {
        let (a, b) = (T::from_f64(ti), T::from_f64(1.0 - ti));
        let r = &real.data()[i * row..(i + 1) * row];
        let f = &fake.data()[i * row..(i + 1) * row];
        data.extend(r.iter().zip(f).map(|(&x, &y)| a * x + b * y));
    }
    Tensor::new(real.shape(), data)
}

/// Per-sample Euclidean norm of the critic's input gradient at `x_hat`,
/// recorded so that it can be differentiated with respect to the critic.
pub fn input_gradient_norms<'g, T: Real>(
    critic: impl FnOnce(Var<'g, T>) -> Result<Var<'g, T>>,
    x_hat: Var<'g, T>,
) -> Result<Var<'g, T>> {
    let graph = x_hat.graph();
    let scores = critic(x_hat)?;
    let grad = graph.grad(scores.sum_all()?, &[x_hat], true)?[0];
    let shape = grad.shape();
    let mut per_sample = vec![1; shape.len()];
    per_sample[0] = shape[0];
    grad.square()?
        .sum_to(&per_sample)?
        .sqrt()?
        .reshape(&[shape[0]])
}

/// `lambda * mean (|grad| - 1)^2` (two-sided) or `lambda * mean max(0, |grad| - 1)^2`.
pub fn gradient_penalty<'g, T: Real>(
    critic: impl FnOnce(Var<'g, T>) -> Result<Var<'g, T>>,
    x_hat: Var<'g, T>,
    config: &PenaltyConfig,
) -> Result<Var<'g, T>> {
    if !x_hat.requires_grad() {
        return Err(Error::Gradient(
            "interpolates must require gradients".into(),
        ));
    }
    let excess = input_gradient_norms(critic, x_hat)?.add_scalar(-1.0)?;
    let excess = match config.kind {
        PenaltyKind::TwoSided => excess,
        PenaltyKind::OneSided | PenaltyKind::ScaledOneSided => excess.max_const(0.0)?,
        PenaltyKind::WeightClip => {
            return Err(Error::invalid("weight clipping has no gradient penalty"));
        }
    };
    excess.square()?.mean_all()?.scale(config.lambda)
}

/// `-W + max(0, W) * penalty + drift`.
pub fn scaled_critic_loss<'g, T: Real>(
    critic_difference: Var<'g, T>,
    penalty: Var<'g, T>,
    drift: Var<'g, T>,
) -> Result<Var<'g, T>> {
    let scale = critic_difference.max_const(0.0)?;
    critic_difference
        .neg()?
        .add(scale.mul(penalty)?)?
        .add(drift)
}

/// `epsilon * (mean(d_real) + mean(d_fake))^2`.
pub fn drift_term<'g, T: Real>(
    d_real: Var<'g, T>,
    d_fake: Var<'g, T>,
    epsilon: f64,
) -> Result<Var<'g, T>> {
    d_real
        .mean_all()?
        .add(d_fake.mean_all()?)?
        .square()?
        .scale(epsilon)
}

/// `-mean(d_fake)`.
pub fn generator_loss<'g, T: Real>(d_fake: Var<'g, T>) -> Result<Var<'g, T>> {
    non_empty(&d_fake, "fake")?;
    d_fake.mean_all()?.neg()
}

/// Clamp every parameter into `[-bound, bound]`.
pub fn weight_clip<T: Real>(params: &mut ParamSet<T>, bound: f64) -> Result<()> {
    if !(bound > 0.0 && bound.is_finite()) {
        return Err(Error::invalid("clip bound must be finite and > 0"));
    }
    let (lo, hi) = (T::from_f64(-bound), T::from_f64(bound));
    for (_, t) in params.iter_mut() {
        for v in t.data_mut() {
            if *v < lo {
                *v = lo;
            } else if *v > hi {
                *v = hi;
            }
        }
    }
    Ok(())
}

/// The assembled critic objective and its recorded parts.
pub struct CriticObjective<'g, T: Real> {
    pub total: Var<'g, T>,
    pub report: LossReport,
}

/// Critic loss for the configured variant. `x_hat` is only used by
/// gradient-penalty kinds and must then be a differentiable leaf.
pub fn critic_objective<'g, T: Real>(
    config: &PenaltyConfig,
    d_real: Var<'g, T>,
    d_fake: Var<'g, T>,
    penalty: Option<Var<'g, T>>,
) -> Result<CriticObjective<'g, T>> {
    let w = critic_difference(d_real, d_fake)?;
    let drift = drift_term(d_real, d_fake, config.drift_epsilon)?;
    let (total, penalty_value, contribution) = match (config.kind, penalty) {
        (PenaltyKind::WeightClip, _) => (w.neg()?.add(drift)?, 0.0, 0.0),
        (PenaltyKind::ScaledOneSided, Some(p)) => {
            let total = scaled_critic_loss(w, p, drift)?;
            (total, p.item(), w.item().max(0.0) * p.item())
        }
        (_, Some(p)) => (w.neg()?.add(p)?.add(drift)?, p.item(), p.item()),
        (kind, None) => return Err(Error::invalid(format!("{kind} needs a gradient penalty"))),
    };
    let report = LossReport {
        critic_difference: w.item(),
        penalty_value,
        penalty_contribution: contribution,
        drift_value: drift.item(),
        total_critic_loss: total.item(),
        generator_loss: f64::NAN,
    };
    Ok(CriticObjective { total, report })
}
