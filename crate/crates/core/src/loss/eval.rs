//! Evaluating the gap-aware loss over externally dumped log-probabilities.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BetaSchedule, GapType, LogProbQuad, PreferencePair};

use super::{cogpo_loss, softplus, LossError};

/// One line of the log-prob input file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogProbRecord {
    pub id: String,
    pub lp_w_theta: f64,
    pub lp_w_ref: f64,
    pub lp_l_theta: f64,
    pub lp_l_ref: f64,
    pub gap: GapType,
}

impl LogProbRecord {
    pub fn quad(&self) -> LogProbQuad {
        LogProbQuad::new(self.lp_w_theta, self.lp_w_ref, self.lp_l_theta, self.lp_l_ref)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("pair {0:?} has no log-prob record")]
    MissingLogProbs(String),
    #[error("log-prob record {0:?} has no matching pair")]
    MissingPair(String),
    #[error("duplicate id {0:?}")]
    Duplicate(String),
    #[error("gap mismatch for {id:?}: pair says {pair}, log-probs say {logprobs}")]
    GapMismatch {
        id: String,
        pair: GapType,
        logprobs: GapType,
    },
    #[error(transparent)]
    Loss(#[from] LossError),
}

impl EvalError {
    pub fn is_join_error(&self) -> bool {
        !matches!(self, Self::Loss(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairRow {
    pub id: String,
    pub gap: GapType,
    pub beta: f64,
    pub margin: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossEvaluation {
    pub loss: f64,
    pub pairs: usize,
    pub mean_margin_by_gap: BTreeMap<GapType, f64>,
    pub rows: Vec<PairRow>,
}

/// Joins pairs with log-probs on id (both sides must match exactly) and
/// evaluates the loss in pair-file order. β comes from `schedule`.
pub fn evaluate_joined(
    pairs: &[PreferencePair],
    logprobs: &[LogProbRecord],
    schedule: &BetaSchedule,
) -> Result<LossEvaluation, EvalError> {
    let mut by_id: HashMap<&str, &LogProbRecord> = HashMap::with_capacity(logprobs.len());
    for lp in logprobs {
        if by_id.insert(lp.id.as_str(), lp).is_some() {
            return Err(EvalError::Duplicate(lp.id.clone()));
        }
    }
    let mut joined = Vec::with_capacity(pairs.len());
    let mut seen = std::collections::HashSet::new();
    for pair in pairs {
        if !seen.insert(pair.id.as_str()) {
            return Err(EvalError::Duplicate(pair.id.clone()));
        }
        let lp = by_id
            .get(pair.id.as_str())
            .ok_or_else(|| EvalError::MissingLogProbs(pair.id.clone()))?;
        if lp.gap != pair.gap {
            return Err(EvalError::GapMismatch {
                id: pair.id.clone(),
                pair: pair.gap,
                logprobs: lp.gap,
            });
        }
        joined.push((lp.quad(), pair.gap));
    }
    if let Some(extra) = logprobs.iter().find(|lp| !seen.contains(lp.id.as_str())) {
        return Err(EvalError::MissingPair(extra.id.clone()));
    }

    let report = cogpo_loss(&joined, schedule)?;
    let mut sums: BTreeMap<GapType, (f64, usize)> = BTreeMap::new();
    let rows = pairs
        .iter()
        .zip(&report.margins)
        .map(|(pair, &margin)| {
            let entry = sums.entry(pair.gap).or_default();
            entry.0 += margin;
            entry.1 += 1;
            PairRow {
                id: pair.id.clone(),
                gap: pair.gap,
                beta: schedule.beta_for(pair.gap),
                margin,
                loss: softplus(-margin),
            }
        })
        .collect();
    Ok(LossEvaluation {
        loss: report.loss,
        pairs: pairs.len(),
        mean_margin_by_gap: sums.into_iter().map(|(g, (s, n))| (g, s / n as f64)).collect(),
        rows,
    })
}
