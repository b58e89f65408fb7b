//! Critic, Rethinker and Verifier agents.
//!
//! Each agent renders its template, issues one completion through the
//! [`Gateway`], and parses or checks the raw text. Calls are attributed to a
//! [`Session`], which hands out the per-agent attempt indices used as replay
//! keys and accumulates usage for cost accounting.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{CallKey, ChatRequest, Gateway, GatewayError, ModelRole, SamplingParams};
use crate::model::{parse_complexity, parse_verdict, ComplexityLevel, StageUsage};
use crate::prompts::{TemplateName, TemplateSet};

pub const CRITIC: &str = "critic";
pub const RETHINKER: &str = "rethinker";
pub const CORRUPTER: &str = "corrupter";
pub const VERIFIER: &str = "verifier";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Add steps to a terse (easy) trace.
    Expand,
    /// Strip redundancy from an overly complex (hard) trace.
    Simplify,
}

impl Direction {
    /// Rewrite direction for a rating; `None` for medium.
    pub fn for_rating(level: ComplexityLevel) -> Option<Self> {
        match level {
            ComplexityLevel::Easy => Some(Self::Expand),
            ComplexityLevel::Hard => Some(Self::Simplify),
            ComplexityLevel::Medium => None,
        }
    }

    fn template(self) -> TemplateName {
        match self {
            Self::Expand => TemplateName::RethinkerEasy,
            Self::Simplify => TemplateName::RethinkerHard,
        }
    }
}

#[derive(Debug, Clone, Error)]
pub enum AgentError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("critic abstained on {abstained} of {votes} votes")]
    TooManyAbstentions { abstained: u32, votes: u32 },
    #[error("{agent} returned {what} output twice")]
    Unusable { agent: &'static str, what: &'static str },
    #[error("{agent} output unparseable after re-sample: {last:?}")]
    Unparseable { agent: &'static str, last: String },
    #[error("corruption judged correct by the verifier after {attempts} attempts")]
    CorruptionNotIncorrect { attempts: u32 },
    #[error("vote count must be a positive odd integer (got {0})")]
    InvalidVotes(u32),
}

impl AgentError {
    /// Misconfiguration that should abort the whole run.
    pub fn is_fatal(&self) -> bool {
        matches!(self, Self::Gateway(GatewayError::Config(_)) | Self::InvalidVotes(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub votes: u32,
    pub verifier_role: ModelRole,
    pub corruption_gate: bool,
    /// Corruption attempts allowed when the gate is on.
    pub corruption_attempts: u32,
    pub sampling: SamplingParams,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            votes: 3,
            verifier_role: ModelRole::Large,
            corruption_gate: false,
            corruption_attempts: 3,
            sampling: SamplingParams::default(),
        }
    }
}

/// Per-record call bookkeeping.
#[derive(Debug, Clone, Default)]
pub struct Session {
    record_id: String,
    counters: BTreeMap<&'static str, u32>,
    usage: BTreeMap<String, StageUsage>,
}

impl Session {
    pub fn new(record_id: impl Into<String>) -> Self {
        Self {
            record_id: record_id.into(),
            ..Self::default()
        }
    }

    fn next_key(&mut self, agent: &'static str) -> CallKey {
        let counter = self.counters.entry(agent).or_insert(0);
        let key = CallKey::new(agent, self.record_id.clone(), *counter);
        *counter += 1;
        key
    }

    pub fn calls(&self, agent: &str) -> u32 {
        self.counters.get(agent).copied().unwrap_or(0)
    }

    pub fn usage(&self) -> &BTreeMap<String, StageUsage> {
        &self.usage
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Critique {
    pub level: ComplexityLevel,
    pub votes: Vec<Option<ComplexityLevel>>,
}

/// Strict-majority label over `votes` (abstentions count toward the total but
/// never win). A split without a strict majority resolves to medium.
pub fn majority_label(votes: &[Option<ComplexityLevel>]) -> ComplexityLevel {
    let n = votes.len();
    ComplexityLevel::ALL
        .into_iter()
        .find(|level| 2 * votes.iter().filter(|v| **v == Some(*level)).count() > n)
        .unwrap_or(ComplexityLevel::Medium)
}

pub struct Agents<'a> {
    gateway: &'a Gateway,
    templates: &'a TemplateSet,
    config: AgentConfig,
}

impl<'a> Agents<'a> {
    pub fn new(gateway: &'a Gateway, templates: &'a TemplateSet, config: AgentConfig) -> Self {
        Self {
            gateway,
            templates,
            config,
        }
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    #[allow(clippy::too_many_arguments)]
    fn call(
        &self,
        session: &mut Session,
        agent: &'static str,
        role: ModelRole,
        template: TemplateName,
        problem: &str,
        answer: &str,
        reasoning: &str,
    ) -> Result<String, GatewayError> {
        let prompt = self.templates.render(template, problem, answer, reasoning);
        let request = ChatRequest {
            model_role: role,
            system: prompt.system,
            user: prompt.user,
            sampling: self.config.sampling,
            key: session.next_key(agent),
        };
        let response = self.gateway.complete(&request)?;
        let usage = session.usage.entry(agent.to_string()).or_default();
        usage.completions += 1;
        usage.prompt_tokens += response.usage.prompt_tokens;
        usage.completion_tokens += response.usage.completion_tokens;
        Ok(response.text)
    }

    /// Rates `reasoning` with `votes` independent Critic completions.
    pub fn critique(
        &self,
        session: &mut Session,
        problem: &str,
        answer: &str,
        reasoning: &str,
    ) -> Result<Critique, AgentError> {
        let votes = self.config.votes;
        if votes == 0 || votes.is_multiple_of(2) {
            return Err(AgentError::InvalidVotes(votes));
        }
        let mut ballots = Vec::with_capacity(votes as usize);
        for _ in 0..votes {
            let mut vote = None;
            for _ in 0..2 {
                let text = self.call(
                    session,
                    CRITIC,
                    ModelRole::Large,
                    TemplateName::Critic,
                    problem,
                    answer,
                    reasoning,
                )?;
                if let Ok(level) = parse_complexity(&text) {
                    vote = Some(level);
                    break;
                }
            }
            ballots.push(vote);
        }
        let abstained = ballots.iter().filter(|v| v.is_none()).count() as u32;
        if 2 * abstained > votes {
            return Err(AgentError::TooManyAbstentions { abstained, votes });
        }
        Ok(Critique {
            level: majority_label(&ballots),
            votes: ballots,
        })
    }

    /// One rewrite, re-sampled once if empty or unchanged.
    fn rewrite(
        &self,
        session: &mut Session,
        agent: &'static str,
        template: TemplateName,
        problem: &str,
        answer: &str,
        reasoning: &str,
    ) -> Result<String, AgentError> {
        let mut what = "empty";
        for _ in 0..2 {
            let text = self.call(session, agent, ModelRole::Large, template, problem, answer, reasoning)?;
            if text.trim().is_empty() {
                what = "empty";
            } else if text == reasoning {
                what = "unchanged";
            } else {
                return Ok(text);
            }
        }
        Err(AgentError::Unusable { agent, what })
    }

    pub fn rethink(
        &self,
        session: &mut Session,
        problem: &str,
        answer: &str,
        reasoning: &str,
        direction: Direction,
    ) -> Result<String, AgentError> {
        self.rewrite(session, RETHINKER, direction.template(), problem, answer, reasoning)
    }

    /// Produces an incorrect variant of a correct trace. With the corruption
    /// gate on, the Verifier must reject the variant.
    pub fn corrupt(
        &self,
        session: &mut Session,
        problem: &str,
        answer: &str,
        reasoning: &str,
    ) -> Result<String, AgentError> {
        let attempts = if self.config.corruption_gate {
            self.config.corruption_attempts.max(1)
        } else {
            1
        };
        for _ in 0..attempts {
            let text = self.rewrite(
                session,
                CORRUPTER,
                TemplateName::RethinkerIncorrect,
                problem,
                answer,
                reasoning,
            )?;
            if !self.config.corruption_gate || !self.verify(session, problem, answer, &text)? {
                return Ok(text);
            }
        }
        Err(AgentError::CorruptionNotIncorrect { attempts })
    }

    pub fn verify(
        &self,
        session: &mut Session,
        problem: &str,
        answer: &str,
        reasoning: &str,
    ) -> Result<bool, AgentError> {
        let mut last = String::new();
        for _ in 0..2 {
            last = self.call(
                session,
                VERIFIER,
                self.config.verifier_role,
                TemplateName::Verifier,
                problem,
                answer,
                reasoning,
            )?;
            if let Ok(verdict) = parse_verdict(&last) {
                return Ok(verdict);
            }
        }
        Err(AgentError::Unparseable { agent: VERIFIER, last })
    }
}
