//! Domain types shared by the curation pipeline, the pair builder and the
//! loss module, plus the label parsers for raw agent output.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default bound on rethink attempts (and on re-verifications of medium traces).
pub const DEFAULT_RETRY_CAP: u32 = 3;

/// Complexity of a reasoning trace relative to the target small model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComplexityLevel {
    /// Too terse for the small model to follow.
    Easy,
    Medium,
    /// Redundant or convoluted beyond the small model's reach.
    Hard,
}

impl ComplexityLevel {
    pub const ALL: [ComplexityLevel; 3] = [Self::Easy, Self::Medium, Self::Hard];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Easy => "easy",
            Self::Medium => "medium",
            Self::Hard => "hard",
        }
    }
}

impl fmt::Display for ComplexityLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Preference-quality distance between the two members of a pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GapType {
    Small,
    Medium,
    Large,
}

impl GapType {
    pub const ALL: [GapType; 3] = [Self::Small, Self::Medium, Self::Large];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Small => "small",
            Self::Medium => "medium",
            Self::Large => "large",
        }
    }
}

impl fmt::Display for GapType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GapType {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "small" => Ok(Self::Small),
            "medium" => Ok(Self::Medium),
            "large" => Ok(Self::Large),
            other => Err(ParseError::new("gap", other)),
        }
    }
}

/// Where a record's reasoning text came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    #[default]
    Original,
    Rewritten,
    Corrupted,
}

/// One Critic rating round: the individual votes (`None` = abstention after a
/// failed re-sample) and the label the round resolved to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRound {
    pub votes: Vec<Option<ComplexityLevel>>,
    pub result: ComplexityLevel,
}

/// One training tuple: problem, verified answer and reasoning trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoTRecord {
    pub id: String,
    pub problem: String,
    pub answer: String,
    pub reasoning: String,
    #[serde(default)]
    pub source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rating: Option<ComplexityLevel>,
    #[serde(default)]
    pub rating_history: Vec<RatingRound>,
    #[serde(default)]
    pub rewrite_count: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verified: Option<bool>,
}

impl CoTRecord {
    pub fn new(
        id: impl Into<String>,
        problem: impl Into<String>,
        answer: impl Into<String>,
        reasoning: impl Into<String>,
    ) -> Self {
        Self {
            id: id.into(),
            problem: problem.into(),
            answer: answer.into(),
            reasoning: reasoning.into(),
            source: Source::Original,
            rating: None,
            rating_history: Vec::new(),
            rewrite_count: 0,
            verified: None,
        }
    }
}

/// All reasoning variants of one accepted problem.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordFamily {
    pub id: String,
    pub problem: String,
    pub answer: String,
    pub original_rating: ComplexityLevel,
    pub r_original: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_rewritten: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_corrupted: Option<String>,
}

/// A gap-labelled preference pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub id: String,
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
    pub gap: GapType,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScheduleError {
    #[error("beta values must satisfy 0 < small < medium < large (got {small}, {medium}, {large})")]
    Ordering { small: f64, medium: f64, large: f64 },
    #[error("alpha must be finite and non-negative (got {0})")]
    Alpha(f64),
    #[error("m0 must be finite (got {0})")]
    Threshold(f64),
}

/// Gap-dependent β values plus the β-DPO adjustment parameters.
///
/// Constructing through [`BetaSchedule::new`] enforces the strict ordering
/// `0 < small < medium < large`. [`BetaSchedule::uniform`] is the one escape
/// hatch: it yields a degenerate schedule used to check that the gap-aware
/// loss collapses onto plain DPO.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaSchedule {
    pub beta_small: f64,
    pub beta_medium: f64,
    pub beta_large: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub m0: f64,
}

fn default_alpha() -> f64 {
    BetaSchedule::DEFAULT_ALPHA
}

impl BetaSchedule {
    /// Placeholder; no validated value is known.
    pub const DEFAULT_ALPHA: f64 = 0.6;

    pub fn new(beta_small: f64, beta_medium: f64, beta_large: f64) -> Result<Self, ScheduleError> {
        let schedule = Self {
            beta_small,
            beta_medium,
            beta_large,
            alpha: Self::DEFAULT_ALPHA,
            m0: 0.0,
        };
        schedule.validate()?;
        Ok(schedule)
    }

    pub fn with_adjustment(mut self, alpha: f64, m0: f64) -> Result<Self, ScheduleError> {
        self.alpha = alpha;
        self.m0 = m0;
        self.validate()?;
        Ok(self)
    }

    /// All three gaps share one β. Violates the ordering invariant on purpose.
    pub fn uniform(beta: f64) -> Self {
        Self {
            beta_small: beta,
            beta_medium: beta,
            beta_large: beta,
            alpha: Self::DEFAULT_ALPHA,
            m0: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ScheduleError> {
        let (s, m, l) = (self.beta_small, self.beta_medium, self.beta_large);
        let finite = s.is_finite() && m.is_finite() && l.is_finite();
        if !(finite && 0.0 < s && s < m && m < l) {
            return Err(ScheduleError::Ordering {
                small: s,
                medium: m,
                large: l,
            });
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(ScheduleError::Alpha(self.alpha));
        }
        if !self.m0.is_finite() {
            return Err(ScheduleError::Threshold(self.m0));
        }
        Ok(())
    }

    pub fn beta_for(&self, gap: GapType) -> f64 {
        match gap {
            GapType::Small => self.beta_small,
            GapType::Medium => self.beta_medium,
            GapType::Large => self.beta_large,
        }
    }
}

impl Default for BetaSchedule {
    fn default() -> Self {
        Self {
            beta_small: 0.1,
            beta_medium: 0.2,
            beta_large: 0.5,
            alpha: Self::DEFAULT_ALPHA,
            m0: 0.0,
        }
    }
}

/// Sequence log-probabilities of the chosen (`w`) and rejected (`l`)
/// responses under the policy (`theta`) and the reference model (`ref`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogProbQuad {
    pub lp_w_theta: f64,
    pub lp_w_ref: f64,
    pub lp_l_theta: f64,
    pub lp_l_ref: f64,
}

impl LogProbQuad {
    pub fn new(lp_w_theta: f64, lp_w_ref: f64, lp_l_theta: f64, lp_l_ref: f64) -> Self {
        Self {
            lp_w_theta,
            lp_w_ref,
            lp_l_theta,
            lp_l_ref,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.lp_w_theta.is_finite()
            && self.lp_w_ref.is_finite()
            && self.lp_l_theta.is_finite()
            && self.lp_l_ref.is_finite()
    }

    /// Chosen and rejected exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            lp_w_theta: self.lp_l_theta,
            lp_w_ref: self.lp_l_ref,
            lp_l_theta: self.lp_w_theta,
            lp_l_ref: self.lp_w_ref,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelCounts {
    pub easy: usize,
    pub medium: usize,
    pub hard: usize,
}

impl LevelCounts {
    pub fn add(&mut self, level: ComplexityLevel) {
        *self.get_mut(level) += 1;
    }

    pub fn get(&self, level: ComplexityLevel) -> usize {
        match level {
            ComplexityLevel::Easy => self.easy,
            ComplexityLevel::Medium => self.medium,
            ComplexityLevel::Hard => self.hard,
        }
    }

    fn get_mut(&mut self, level: ComplexityLevel) -> &mut usize {
        match level {
            ComplexityLevel::Easy => &mut self.easy,
            ComplexityLevel::Medium => &mut self.medium,
            ComplexityLevel::Hard => &mut self.hard,
        }
    }

    pub fn total(&self) -> usize {
        self.easy + self.medium + self.hard
    }
}

/// Completions and token usage attributed to one agent stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageUsage {
    pub completions: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl StageUsage {
    pub fn merge(&mut self, other: &StageUsage) {
        self.completions += other.completions;
        self.prompt_tokens += other.prompt_tokens;
        self.completion_tokens += other.completion_tokens;
    }
}

/// Run summary. `intake.total() + unrated` is the input size, which always
/// equals `final_size + discarded`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineStats {
    pub intake: LevelCounts,
    /// Records whose first critique failed outright.
    pub unrated: usize,
    /// Accepted records whose final reasoning is a rewrite.
    pub rewritten: usize,
    /// Accepted records whose original medium trace passed verification.
    pub verified_medium: usize,
    pub discarded: usize,
    /// Discards caused by an agent failure rather than a verdict.
    pub agent_failures: usize,
    pub final_size: usize,
    /// Accepted records that ended up without a corrupted trace.
    pub corruption_failures: usize,
    pub usage: BTreeMap<String, StageUsage>,
}

impl PipelineStats {
    pub fn intake_total(&self) -> usize {
        self.intake.total() + self.unrated
    }

    pub fn reconciles(&self) -> bool {
        self.intake_total() == self.final_size + self.discarded
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("cannot parse {expected} from model output {got:?}")]
pub struct ParseError {
    pub expected: &'static str,
    pub got: String,
}

impl ParseError {
    fn new(expected: &'static str, got: &str) -> Self {
        Self {
            expected,
            got: got.to_string(),
        }
    }
}

/// Trim, drop a single trailing period, then trim again.
fn normalize_label(text: &str) -> &str {
    let trimmed = text.trim();
    trimmed.strip_suffix('.').unwrap_or(trimmed).trim_end()
}

/// Parses Critic output. Tolerates surrounding whitespace, case and one
/// trailing period; anything else is a [`ParseError`].
pub fn parse_complexity(text: &str) -> Result<ComplexityLevel, ParseError> {
    let word = normalize_label(text);
    ComplexityLevel::ALL
        .into_iter()
        .find(|level| word.eq_ignore_ascii_case(level.as_str()))
        .ok_or_else(|| ParseError::new("complexity level", text))
}

/// Parses Verifier output: `YES` → true, `NO` → false.
pub fn parse_verdict(text: &str) -> Result<bool, ParseError> {
    let word = normalize_label(text);
    if word.eq_ignore_ascii_case("yes") {
        Ok(true)
    } else if word.eq_ignore_ascii_case("no") {
        Ok(false)
    } else {
        Err(ParseError::new("verdict", text))
    }
}

/// A broken record invariant, rendered as `field: rule`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub field: &'static str,
    pub rule: &'static str,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

pub fn validate_record(record: &CoTRecord, retry_cap: u32) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |field, rule| out.push(Violation { field, rule });
    if record.id.trim().is_empty() {
        push("id", "empty");
    }
    if record.problem.trim().is_empty() {
        push("problem", "empty");
    }
    if record.answer.trim().is_empty() {
        push("answer", "empty");
    }
    if record.reasoning.trim().is_empty() {
        push("reasoning", "empty");
    }
    if record.rewrite_count > retry_cap {
        push("rewrite_count", "exceeds cap");
    }
    if record.source == Source::Corrupted && record.verified == Some(true) {
        push("source", "corrupted record marked verified");
    }
    out
}

/// Per-record violations plus id uniqueness across the whole dataset.
pub fn validate_dataset(records: &[CoTRecord], retry_cap: u32) -> Vec<(String, Violation)> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for record in records {
        for v in validate_record(record, retry_cap) {
            out.push((record.id.clone(), v));
        }
        if !record.id.is_empty() && !seen.insert(record.id.as_str()) {
            out.push((
                record.id.clone(),
                Violation {
                    field: "id",
                    rule: "duplicate",
                },
            ));
        }
    }
    out
}
