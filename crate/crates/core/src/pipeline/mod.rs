//! Critique → rethink → verify curation.
//!
//! Each input record is rated by the Critic. Medium traces are sent to the
//! Verifier (up to `retry_cap` verifications). Easy and hard traces are
//! rewritten, verified, and re-rated, looping until the rewrite is both
//! verified and rated medium or `retry_cap` rethink attempts are spent. Every
//! accepted record then gets one corrupted variant of its original trace for
//! preference-pair construction.
//!
//! Records are independent and are processed by a bounded worker pool; the
//! output always follows input order.

mod checkpoint;
mod report;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentConfig, AgentError, Agents, Direction, Session};
use crate::exec::{map_ordered, Exec};
use crate::gateway::{Gateway, ModelRole, SamplingParams};
use crate::model::{
    validate_dataset, CoTRecord, ComplexityLevel, PipelineStats, RatingRound, RecordFamily, Source, StageUsage,
    DEFAULT_RETRY_CAP,
};
use crate::prompts::TemplateSet;

pub use checkpoint::{Checkpoint, CheckpointError, CHECKPOINT_FORMAT};
pub use report::{complexity_report, ComplexityReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub retry_cap: u32,
    pub votes: u32,
    pub max_concurrency: usize,
    pub verifier_role: ModelRole,
    pub corruption_gate: bool,
    pub sampling: SamplingParams,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            retry_cap: DEFAULT_RETRY_CAP,
            votes: 3,
            max_concurrency: 8,
            verifier_role: ModelRole::Large,
            corruption_gate: false,
            sampling: SamplingParams::default(),
            checkpoint: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.retry_cap < 1 {
            return Err(PipelineError::Config("retry_cap must be at least 1".into()));
        }
        if self.votes == 0 || self.votes.is_multiple_of(2) {
            return Err(PipelineError::Config(format!(
                "votes must be a positive odd integer (got {})",
                self.votes
            )));
        }
        if self.max_concurrency == 0 {
            return Err(PipelineError::Config("max_concurrency must be positive".into()));
        }
        self.sampling
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn agent_config(&self) -> AgentConfig {
        AgentConfig {
            votes: self.votes,
            verifier_role: self.verifier_role,
            corruption_gate: self.corruption_gate,
            corruption_attempts: self.retry_cap,
            sampling: self.sampling,
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("interrupted after {completed} of {total} records")]
    Interrupted { completed: usize, total: usize },
    #[error("duplicate id {0:?} in curated set")]
    DuplicateId(String),
    #[error("record {0:?} is not an accepted medium record")]
    NotAccepted(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Critique,
    Rethink,
    Verify,
    Rerate,
    Corrupt,
}

/// `seq` is the event's ordinal within its record; traces carry no wall-clock
/// time so that replayed runs compare equal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub seq: u32,
    pub stage: Stage,
    pub attempt: u32,
    pub outcome: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalState {
    AcceptedMedium,
    AcceptedRewritten,
    Discarded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordTrace {
    pub id: String,
    pub events: Vec<TraceEvent>,
    pub terminal: TerminalState,
}

impl RecordTrace {
    pub fn rethink_attempts(&self) -> u32 {
        self.events.iter().filter(|e| e.stage == Stage::Rethink).count() as u32
    }
}

/// Discard log line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Discard {
    pub id: String,
    pub reason: String,
    pub attempts: u32,
}

/// Everything one record contributes to the run; this is what checkpoints store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordOutcome {
    pub index: usize,
    pub trace: RecordTrace,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intake: Option<ComplexityLevel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accepted: Option<CoTRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<RecordFamily>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discard: Option<Discard>,
    pub agent_failure: bool,
    pub corruption_failed: bool,
    pub usage: BTreeMap<String, StageUsage>,
}

/// Curated fine-tuning set: verified, medium-rated records only.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CuratedDataset {
    pub records: Vec<CoTRecord>,
}

impl CuratedDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.records.iter().map(|r| r.id.as_str()).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CrvOutput {
    pub curated: CuratedDataset,
    pub families: Vec<RecordFamily>,
    pub discards: Vec<Discard>,
    pub traces: Vec<RecordTrace>,
    pub stats: PipelineStats,
}

/// Run-time hooks that do not affect results.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunControl {
    /// Process at most this many records not already in the checkpoint, then
    /// report [`PipelineError::Interrupted`].
    pub halt_after: Option<usize>,
}

/// Unions verified medium partitions, preserving order and rejecting
/// duplicate ids or records that never passed curation.
pub fn assemble_sft(partitions: &[&[CoTRecord]]) -> Result<CuratedDataset, PipelineError> {
    let mut seen = std::collections::HashSet::new();
    let mut records = Vec::new();
    for record in partitions.iter().flat_map(|p| p.iter()) {
        let accepted = record.verified == Some(true)
            && record.rating == Some(ComplexityLevel::Medium)
            && record.source != Source::Corrupted;
        if !accepted {
            return Err(PipelineError::NotAccepted(record.id.clone()));
        }
        if !seen.insert(record.id.as_str()) {
            return Err(PipelineError::DuplicateId(record.id.clone()));
        }
        records.push(record.clone());
    }
    Ok(CuratedDataset { records })
}

struct RecordRun<'a, 'b> {
    agents: &'b Agents<'a>,
    record: &'b CoTRecord,
    session: Session,
    events: Vec<TraceEvent>,
    history: Vec<RatingRound>,
}

enum Step {
    Accepted { reasoning: String, rewrites: u32 },
    Discarded { reason: String, attempts: u32 },
}

impl<'a, 'b> RecordRun<'a, 'b> {
    fn log(&mut self, stage: Stage, attempt: u32, outcome: impl Into<String>) {
        let seq = self.events.len() as u32;
        self.events.push(TraceEvent {
            seq,
            stage,
            attempt,
            outcome: outcome.into(),
        });
    }

    fn critique(&mut self, stage: Stage, attempt: u32, reasoning: &str) -> Result<ComplexityLevel, AgentError> {
        let r = self.record;
        let c = self
            .agents
            .critique(&mut self.session, &r.problem, &r.answer, reasoning)?;
        self.log(stage, attempt, c.level.as_str());
        self.history.push(RatingRound {
            votes: c.votes,
            result: c.level,
        });
        Ok(c.level)
    }

    fn verify(&mut self, attempt: u32, reasoning: &str) -> Result<bool, AgentError> {
        let r = self.record;
        let ok = self
            .agents
            .verify(&mut self.session, &r.problem, &r.answer, reasoning)?;
        self.log(Stage::Verify, attempt, if ok { "yes" } else { "no" });
        Ok(ok)
    }

    fn medium_path(&mut self, cap: u32) -> Result<Step, AgentError> {
        let original = self.record.reasoning.clone();
        for attempt in 1..=cap {
            if self.verify(attempt, &original)? {
                return Ok(Step::Accepted {
                    reasoning: original,
                    rewrites: 0,
                });
            }
        }
        Ok(Step::Discarded {
            reason: format!("verification failed {cap} times"),
            attempts: cap,
        })
    }

    fn rewrite_path(&mut self, cap: u32, rating: ComplexityLevel) -> Result<Step, AgentError> {
        let r = self.record;
        let mut basis = r.reasoning.clone();
        let mut rating = rating;
        let mut last_failure = "";
        for attempt in 1..=cap {
            let direction = Direction::for_rating(rating).expect("non-medium rating");
            let rewritten = self
                .agents
                .rethink(&mut self.session, &r.problem, &r.answer, &basis, direction)?;
            self.log(
                Stage::Rethink,
                attempt,
                match direction {
                    Direction::Expand => "expand",
                    Direction::Simplify => "simplify",
                },
            );
            if !self.verify(attempt, &rewritten)? {
                last_failure = "rewrite failed verification";
                continue;
            }
            rating = self.critique(Stage::Rerate, attempt, &rewritten)?;
            if rating == ComplexityLevel::Medium {
                return Ok(Step::Accepted {
                    reasoning: rewritten,
                    rewrites: attempt,
                });
            }
            last_failure = "rewrite not re-rated medium";
            basis = rewritten;
        }
        Ok(Step::Discarded {
            reason: format!("{last_failure} after {cap} attempts"),
            attempts: cap,
        })
    }

    fn curate(&mut self, cap: u32) -> Result<(ComplexityLevel, Step), AgentError> {
        let level = self.critique(Stage::Critique, 0, &self.record.reasoning.clone())?;
        let step = match level {
            ComplexityLevel::Medium => self.medium_path(cap)?,
            other => self.rewrite_path(cap, other)?,
        };
        Ok((level, step))
    }
}

fn process_record(
    agents: &Agents<'_>,
    cap: u32,
    index: usize,
    record: &CoTRecord,
) -> Result<RecordOutcome, PipelineError> {
    let mut run = RecordRun {
        agents,
        record,
        session: Session::new(record.id.clone()),
        events: Vec::new(),
        history: Vec::new(),
    };
    let mut agent_failure = false;
    let (intake, step) = match run.curate(cap) {
        Ok((level, step)) => (Some(level), step),
        Err(e) if e.is_fatal() => return Err(PipelineError::Config(e.to_string())),
        Err(e) => {
            agent_failure = true;
            let intake = run.history.first().map(|h| h.result);
            let attempts = run.events.iter().filter(|e| e.stage == Stage::Rethink).count() as u32;
            let stage = if run.history.is_empty() {
                Stage::Critique
            } else {
                Stage::Verify
            };
            run.log(stage, attempts, format!("error: {e}"));
            (
                intake,
                Step::Discarded {
                    reason: format!("agent error: {e}"),
                    attempts,
                },
            )
        }
    };

    let mut outcome = RecordOutcome {
        index,
        trace: RecordTrace {
            id: record.id.clone(),
            events: Vec::new(),
            terminal: TerminalState::Discarded,
        },
        intake,
        accepted: None,
        family: None,
        discard: None,
        agent_failure,
        corruption_failed: false,
        usage: BTreeMap::new(),
    };

    match step {
        Step::Discarded { reason, attempts } => {
            outcome.discard = Some(Discard {
                id: record.id.clone(),
                reason,
                attempts,
            });
        }
        Step::Accepted { reasoning, rewrites } => {
            let rewritten = rewrites > 0;
            outcome.trace.terminal = if rewritten {
                TerminalState::AcceptedRewritten
            } else {
                TerminalState::AcceptedMedium
            };
            let corrupted = match agents.corrupt(&mut run.session, &record.problem, &record.answer, &record.reasoning) {
                Ok(text) => {
                    run.log(Stage::Corrupt, 1, "ok");
                    Some(text)
                }
                Err(e) if e.is_fatal() => return Err(PipelineError::Config(e.to_string())),
                Err(e) => {
                    run.log(Stage::Corrupt, 1, format!("error: {e}"));
                    outcome.corruption_failed = true;
                    None
                }
            };
            let level = intake.expect("accepted records were rated");
            outcome.family = Some(RecordFamily {
                id: record.id.clone(),
                problem: record.problem.clone(),
                answer: record.answer.clone(),
                original_rating: level,
                r_original: record.reasoning.clone(),
                r_rewritten: rewritten.then(|| reasoning.clone()),
                r_corrupted: corrupted,
            });
            outcome.accepted = Some(CoTRecord {
                id: record.id.clone(),
                problem: record.problem.clone(),
                answer: record.answer.clone(),
                reasoning,
                source: if rewritten { Source::Rewritten } else { Source::Original },
                rating: Some(ComplexityLevel::Medium),
                rating_history: run.history.clone(),
                rewrite_count: rewrites,
                verified: Some(true),
            });
        }
    }
    outcome.trace.events = run.events;
    outcome.usage = run.session.usage().clone();
    Ok(outcome)
}

pub struct Pipeline<'a> {
    agents: Agents<'a>,
    config: PipelineConfig,
}

impl<'a> Pipeline<'a> {
    pub fn new(
        gateway: &'a Gateway,
        templates: &'a TemplateSet,
        config: PipelineConfig,
    ) -> Result<Self, PipelineError> {
        config.validate()?;
        Ok(Self {
            agents: Agents::new(gateway, templates, config.agent_config()),
            config,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn run(&self, dataset: &[CoTRecord]) -> Result<CrvOutput, PipelineError> {
        self.run_with(dataset, RunControl::default())
    }

    pub fn run_with(&self, dataset: &[CoTRecord], control: RunControl) -> Result<CrvOutput, PipelineError> {
        let violations = validate_dataset(dataset, self.config.retry_cap);
        if !violations.is_empty() {
            let list: Vec<String> = violations.iter().map(|(id, v)| format!("{id:?} {v}")).collect();
            return Err(PipelineError::InvalidInput(list.join("; ")));
        }

        let ckpt = match &self.config.checkpoint {
            Some(path) => Some(Checkpoint::open(path, dataset, &self.config)?),
            None => None,
        };
        let done: BTreeMap<String, RecordOutcome> = ckpt.as_ref().map(|c| c.completed().clone()).unwrap_or_default();
        let writer = ckpt.map(Mutex::new);
        let started = AtomicUsize::new(0);
        let cap = self.config.retry_cap;

        let exec = Exec::Pool(self.config.max_concurrency);
        let results: Vec<Option<Result<RecordOutcome, PipelineError>>> = map_ordered(exec, dataset, |index, record| {
            if let Some(prev) = done.get(&record.id) {
                return Some(Ok(prev.clone()));
            }
            if let Some(limit) = control.halt_after {
                if started.fetch_add(1, Ordering::SeqCst) >= limit {
                    return None;
                }
            }
            let outcome = process_record(&self.agents, cap, index, record);
            if let (Ok(o), Some(w)) = (&outcome, &writer) {
                if let Err(e) = w.lock().unwrap().record(o.clone()) {
                    return Some(Err(e.into()));
                }
            }
            Some(outcome)
        });

        let mut outcomes = Vec::with_capacity(dataset.len());
        let mut skipped = false;
        for r in results {
            match r {
                Some(Ok(o)) => outcomes.push(o),
                Some(Err(e)) => return Err(e),
                None => skipped = true,
            }
        }
        if skipped {
            return Err(PipelineError::Interrupted {
                completed: outcomes.len(),
                total: dataset.len(),
            });
        }
        Ok(collect_output(outcomes))
    }
}

fn collect_output(outcomes: Vec<RecordOutcome>) -> CrvOutput {
    let mut out = CrvOutput::default();
    for o in outcomes {
        match o.intake {
            Some(level) => out.stats.intake.add(level),
            None => out.stats.unrated += 1,
        }
        for (stage, usage) in &o.usage {
            out.stats.usage.entry(stage.clone()).or_default().merge(usage);
        }
        if o.agent_failure {
            out.stats.agent_failures += 1;
        }
        if o.corruption_failed {
            out.stats.corruption_failures += 1;
        }
        if let Some(rec) = o.accepted {
            match rec.source {
                Source::Rewritten => out.stats.rewritten += 1,
                _ => out.stats.verified_medium += 1,
            }
            out.curated.records.push(rec);
        }
        if let Some(f) = o.family {
            out.families.push(f);
        }
        if let Some(d) = o.discard {
            out.discards.push(d);
        }
        out.traces.push(o.trace);
    }
    out.stats.final_size = out.curated.len();
    out.stats.discarded = out.discards.len();
    out
}

/// Convenience wrapper: one uninterrupted run.
pub fn run_crv(
    dataset: &[CoTRecord],
    gateway: &Gateway,
    templates: &TemplateSet,
    config: PipelineConfig,
) -> Result<CrvOutput, PipelineError> {
    Pipeline::new(gateway, templates, config)?.run(dataset)
}
