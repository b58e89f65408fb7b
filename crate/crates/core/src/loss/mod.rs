//! Preference-optimization objectives.
//!
//! For a pair with chosen response `w` and rejected response `l`:
//!
//! ```text
//! margin = beta * ((log pi(w) - log ref(w)) - (log pi(l) - log ref(l)))
//! loss   = mean_i( -log sigmoid(margin_i) ) = mean_i( softplus(-margin_i) )
//! ```
//!
//! Plain DPO uses one `beta` for every pair. The gap-aware loss picks `beta`
//! per pair from a [`BetaSchedule`] according to the pair's [`GapType`].
//! An optional β-DPO style rescaling multiplies each pair's `beta` by
//! `1 + alpha * (M_i - M_0)`; it is off the default path.

mod eval;
mod gradcheck;
mod policy;

use serde::Serialize;
use thiserror::Error;

use crate::exec::{map_ordered, Exec};
use crate::model::{BetaSchedule, GapType, LogProbQuad};

pub use eval::{evaluate_joined, EvalError, LogProbRecord, LossEvaluation, PairRow};
pub use gradcheck::{check_gradient, grad_check, GradCheckReport, GradMismatch, REL_ERROR_FLOOR};
pub use policy::{CogpoObjective, ToyPair, ToyPolicy};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error("non-finite input")]
    NonFinite,
    #[error("beta must be positive and finite (got {0})")]
    InvalidBeta(f64),
    #[error("empty batch")]
    EmptyBatch,
    #[error("adjusted beta {0} is not positive")]
    NonPositiveBeta(f64),
    #[error("token {token} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { token: u32, vocab: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossReport {
    pub loss: f64,
    pub margins: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gradient: Option<Vec<f64>>,
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_beta(beta: f64) -> Result<(), LossError> {
    if beta.is_finite() && beta > 0.0 {
        Ok(())
    } else {
        Err(LossError::InvalidBeta(beta))
    }
}

/// Policy-vs-reference log-ratio of chosen minus that of rejected, unscaled.
pub fn log_ratio_gap(q: &LogProbQuad) -> f64 {
    (q.lp_w_theta - q.lp_w_ref) - (q.lp_l_theta - q.lp_l_ref)
}

pub fn margin(q: &LogProbQuad, beta: f64) -> Result<f64, LossError> {
    if !q.is_finite() || !beta.is_finite() {
        return Err(LossError::NonFinite);
    }
    check_beta(beta)?;
    Ok(beta * log_ratio_gap(q))
}

fn mean_softplus_neg(margins: &[f64]) -> f64 {
    margins.iter().map(|m| softplus(-m)).sum::<f64>() / margins.len() as f64
}

/// Loss over per-pair `(quad, beta)` items; margins are computed under `exec`
/// and reduced in input order.
fn loss_over(exec: Exec, items: &[(LogProbQuad, f64)]) -> Result<LossReport, LossError> {
    if items.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let margins = map_ordered(exec, items, |_, (q, beta)| margin(q, *beta))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    Ok(LossReport {
        loss: mean_softplus_neg(&margins),
        margins,
        gradient: None,
    })
}

pub fn dpo_loss(quads: &[LogProbQuad], beta: f64) -> Result<LossReport, LossError> {
    dpo_loss_with(Exec::Sequential, quads, beta)
}

pub fn dpo_loss_with(exec: Exec, quads: &[LogProbQuad], beta: f64) -> Result<LossReport, LossError> {
    let items: Vec<(LogProbQuad, f64)> = quads.iter().map(|q| (*q, beta)).collect();
    loss_over(exec, &items)
}

/// Gap-aware loss. The schedule's ordering is not re-checked here so that a
/// degenerate (uniform) schedule can be evaluated; each β must be positive.
pub fn cogpo_loss(pairs: &[(LogProbQuad, GapType)], schedule: &BetaSchedule) -> Result<LossReport, LossError> {
    cogpo_loss_with(Exec::Sequential, pairs, schedule)
}

pub fn cogpo_loss_with(
    exec: Exec,
    pairs: &[(LogProbQuad, GapType)],
    schedule: &BetaSchedule,
) -> Result<LossReport, LossError> {
    let items: Vec<(LogProbQuad, f64)> = pairs.iter().map(|(q, gap)| (*q, schedule.beta_for(*gap))).collect();
    loss_over(exec, &items)
}

/// `beta * (1 + alpha * (m_i - m_0))`, written as `beta + alpha*(m_i-m_0)*beta`.
pub fn beta_dpo_adjust(beta: f64, alpha: f64, m_i: f64, m_0: f64) -> Result<f64, LossError> {
    if !(beta.is_finite() && alpha.is_finite() && m_i.is_finite() && m_0.is_finite()) {
        return Err(LossError::NonFinite);
    }
    let adjusted = beta + alpha * (m_i - m_0) * beta;
    if adjusted > 0.0 {
        Ok(adjusted)
    } else {
        Err(LossError::NonPositiveBeta(adjusted))
    }
}

/// Gap-aware loss with per-instance β-DPO rescaling. `M_i` is the pair's
/// margin under its scheduled β; the rescaled β is treated as a constant.
pub fn cogpo_loss_beta_dpo(pairs: &[(LogProbQuad, GapType)], schedule: &BetaSchedule) -> Result<LossReport, LossError> {
    let mut items = Vec::with_capacity(pairs.len());
    for (q, gap) in pairs {
        let beta = schedule.beta_for(*gap);
        let m_i = margin(q, beta)?;
        items.push((*q, beta_dpo_adjust(beta, schedule.alpha, m_i, schedule.m0)?));
    }
    loss_over(Exec::Sequential, &items)
}
