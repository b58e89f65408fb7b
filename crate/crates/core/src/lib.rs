//! Curation of cognitively aligned chain-of-thought data and gap-aware
//! preference-optimization losses.
//!
//! - [`model`]: records, families, pairs, schedules and label parsing
//! - [`gateway`]: chat-completion backends (HTTP and scripted replay)
//! - [`agents`] / [`prompts`]: Critic, Rethinker and Verifier
//! - [`pipeline`]: the curation state machine with checkpoint/resume
//! - [`pairs`]: preference pairs labelled by quality gap
//! - [`loss`]: DPO, gap-aware DPO, β-DPO rescaling and gradient checks
//! - [`selftest`]: numeric and prompt conformance checks

pub mod agents;
pub mod exec;
pub mod gateway;
pub mod io;
pub mod loss;
pub mod model;
pub mod pairs;
pub mod pipeline;
pub mod prompts;
pub mod selftest;

pub use model::{
    BetaSchedule, CoTRecord, ComplexityLevel, GapType, LogProbQuad, PipelineStats, PreferencePair, RecordFamily,
};
