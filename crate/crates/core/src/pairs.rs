//! Gap-labelled preference pairs from record families.
//!
//! Trace quality classes, best first: correct and suitable (medium or an
//! accepted rewrite), correct but unsuitable (the original easy/hard trace),
//! incorrect (the corrupted trace). Pairs one class apart form the small and
//! medium gaps; suitable vs. incorrect forms the large gap.

use serde::Serialize;
use thiserror::Error;

use crate::model::{BetaSchedule, ComplexityLevel, GapType, PreferencePair, RecordFamily};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PairError {
    #[error("family {0:?} has no constructible pair")]
    EmptyFamily(String),
}

/// Quality class of a trace within its family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Quality {
    Incorrect,
    Unsuitable,
    Suitable,
}

pub fn assign_beta(gap: GapType, schedule: &BetaSchedule) -> f64 {
    schedule.beta_for(gap)
}

/// Chosen and rejected quality classes for a gap.
pub fn gap_classes(gap: GapType) -> (Quality, Quality) {
    match gap {
        GapType::Small => (Quality::Suitable, Quality::Unsuitable),
        GapType::Medium => (Quality::Unsuitable, Quality::Incorrect),
        GapType::Large => (Quality::Suitable, Quality::Incorrect),
    }
}

pub fn pair_id(family_id: &str, gap: GapType) -> String {
    format!("{family_id}/{gap}")
}

/// Every pair the family supports, in small → medium → large order.
pub fn build_pairs(family: &RecordFamily, schedule: &BetaSchedule) -> Result<Vec<PreferencePair>, PairError> {
    let original = Some(family.r_original.as_str());
    let rewritten = family.r_rewritten.as_deref();
    let corrupted = family.r_corrupted.as_deref();

    let candidates: Vec<(GapType, Option<&str>, Option<&str>)> = match family.original_rating {
        ComplexityLevel::Medium => vec![(GapType::Large, original, corrupted)],
        ComplexityLevel::Easy | ComplexityLevel::Hard => vec![
            (GapType::Small, rewritten, original),
            (GapType::Medium, original, corrupted),
            (GapType::Large, rewritten, corrupted),
        ],
    };

    let pairs: Vec<PreferencePair> = candidates
        .into_iter()
        .filter_map(|(gap, chosen, rejected)| match (chosen, rejected) {
            (Some(c), Some(r)) if c != r => Some(PreferencePair {
                id: pair_id(&family.id, gap),
                prompt: family.problem.clone(),
                chosen: c.to_string(),
                rejected: r.to_string(),
                gap,
                beta: assign_beta(gap, schedule),
            }),
            _ => None,
        })
        .collect();

    if pairs.is_empty() {
        Err(PairError::EmptyFamily(family.id.clone()))
    } else {
        Ok(pairs)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct GapCounts {
    pub small: usize,
    pub medium: usize,
    pub large: usize,
}

impl GapCounts {
    pub fn of(pairs: &[PreferencePair]) -> Self {
        let mut c = Self::default();
        for p in pairs {
            match p.gap {
                GapType::Small => c.small += 1,
                GapType::Medium => c.medium += 1,
                GapType::Large => c.large += 1,
            }
        }
        c
    }
}
