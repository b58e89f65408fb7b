//! Deterministic replay backend.
//!
//! A script maps `agent:record_id` to a sequence of responses; the call with
//! attempt index `n` receives the `n`-th response. Because the index comes from
//! the request rather than from backend state, replay does not depend on call
//! interleaving across threads or on whether a run was resumed.

use std::collections::{BTreeSet, HashMap};
use std::io::BufRead;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{BackendError, ChatBackend, ChatRequest, ChatResponse, ModelRole, Usage};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScriptError {
    #[error("script entry {key:?} exhausted after {len} responses")]
    Exhausted { key: String, len: usize },
    #[error("no script entry for key {0:?}")]
    UnknownKey(String),
    #[error("duplicate script key {0:?}")]
    DuplicateKey(String),
    #[error("malformed script line {line}: {message}")]
    Malformed { line: usize, message: String },
}

/// One line of a script file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub key: String,
    pub responses: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    entries: HashMap<String, Vec<String>>,
    fallback: Option<String>,
    roles: BTreeSet<ModelRole>,
    latency: Option<Duration>,
}

impl Default for ScriptedBackend {
    fn default() -> Self {
        Self::new()
    }
}

impl ScriptedBackend {
    /// Strict, empty script serving both roles.
    pub fn new() -> Self {
        Self {
            entries: HashMap::new(),
            fallback: None,
            roles: [ModelRole::Base, ModelRole::Large].into_iter().collect(),
            latency: None,
        }
    }

    pub fn from_entries(entries: impl IntoIterator<Item = ScriptEntry>) -> Result<Self, ScriptError> {
        let mut backend = Self::new();
        for entry in entries {
            if backend.entries.contains_key(&entry.key) {
                return Err(ScriptError::DuplicateKey(entry.key));
            }
            backend.entries.insert(entry.key, entry.responses);
        }
        Ok(backend)
    }

    /// Reads the JSON Lines script format; blank lines are skipped.
    pub fn from_jsonl(reader: impl BufRead) -> Result<Self, ScriptError> {
        let mut entries = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| ScriptError::Malformed {
                line: i + 1,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ScriptEntry = serde_json::from_str(&line).map_err(|e| ScriptError::Malformed {
                line: i + 1,
                message: e.to_string(),
            })?;
            entries.push(entry);
        }
        Self::from_entries(entries)
    }

    /// Appends responses to `key`, creating the entry if needed.
    pub fn with<I, S>(mut self, key: impl Into<String>, responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.entries
            .entry(key.into())
            .or_default()
            .extend(responses.into_iter().map(Into::into));
        self
    }

    /// Unknown keys (not exhausted ones) answer with `fallback`.
    pub fn lenient(mut self, fallback: impl Into<String>) -> Self {
        self.fallback = Some(fallback.into());
        self
    }

    pub fn with_roles(mut self, roles: &[ModelRole]) -> Self {
        self.roles = roles.iter().copied().collect();
        self
    }

    /// Sleep before answering; used to exercise concurrency bounds.
    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = Some(latency);
        self
    }

    pub fn entries(&self) -> Vec<ScriptEntry> {
        let mut out: Vec<ScriptEntry> = self
            .entries
            .iter()
            .map(|(key, responses)| ScriptEntry {
                key: key.clone(),
                responses: responses.clone(),
            })
            .collect();
        out.sort_by(|a, b| a.key.cmp(&b.key));
        out
    }

    pub fn lookup(&self, key: &str, attempt: u32) -> Result<String, ScriptError> {
        match self.entries.get(key) {
            Some(seq) => seq
                .get(attempt as usize)
                .cloned()
                .ok_or_else(|| ScriptError::Exhausted {
                    key: key.to_string(),
                    len: seq.len(),
                }),
            None => self
                .fallback
                .clone()
                .ok_or_else(|| ScriptError::UnknownKey(key.to_string())),
        }
    }
}

fn word_count(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

impl ChatBackend for ScriptedBackend {
    fn has_role(&self, role: ModelRole) -> bool {
        self.roles.contains(&role)
    }

    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        if let Some(latency) = self.latency {
            std::thread::sleep(latency);
        }
        let text = self.lookup(&request.key.script_key(), request.key.attempt)?;
        Ok(ChatResponse {
            usage: Usage {
                prompt_tokens: word_count(&request.system) + word_count(&request.user),
                completion_tokens: word_count(&text),
            },
            text,
            latency: self.latency.unwrap_or_default(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replays_in_order_then_exhausts() {
        let b = ScriptedBackend::new().with("critic:r1", ["easy", "easy", "medium"]);
        let got: Vec<String> = (0..3).map(|i| b.lookup("critic:r1", i).unwrap()).collect();
        assert_eq!(got, ["easy", "easy", "medium"]);
        assert_eq!(
            b.lookup("critic:r1", 3),
            Err(ScriptError::Exhausted {
                key: "critic:r1".into(),
                len: 3
            })
        );
    }

    #[test]
    fn strict_and_lenient_unknown_keys() {
        let strict = ScriptedBackend::new();
        assert_eq!(
            strict.lookup("verifier:9", 0),
            Err(ScriptError::UnknownKey("verifier:9".into()))
        );
        let lenient = ScriptedBackend::new().lenient("YES");
        assert_eq!(lenient.lookup("verifier:9", 0).unwrap(), "YES");
    }

    #[test]
    fn jsonl_roundtrip_and_duplicates() {
        let text = "{\"key\":\"critic:1\",\"responses\":[\"easy\",\"medium\"]}\n\n{\"key\":\"verifier:1\",\"responses\":[\"YES\"]}\n";
        let b = ScriptedBackend::from_jsonl(text.as_bytes()).unwrap();
        assert_eq!(b.lookup("critic:1", 1).unwrap(), "medium");
        assert_eq!(b.entries().len(), 2);

        let dup = "{\"key\":\"a:1\",\"responses\":[]}\n{\"key\":\"a:1\",\"responses\":[]}\n";
        assert_eq!(
            ScriptedBackend::from_jsonl(dup.as_bytes()).unwrap_err(),
            ScriptError::DuplicateKey("a:1".into())
        );
        assert!(matches!(
            ScriptedBackend::from_jsonl("not json".as_bytes()),
            Err(ScriptError::Malformed { line: 1, .. })
        ));
    }
}
