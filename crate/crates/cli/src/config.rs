//! TOML configuration.
//!
//! ```toml
//! request_timeout_secs = 120
//!
//! [endpoints.base]
//! url = "http://localhost:8000/v1/chat/completions"
//! model = "qwen2.5-7b-instruct"
//!
//! [endpoints.large]
//! url = "http://localhost:8001/v1/chat/completions"
//! model = "qwen2.5-72b-instruct"
//!
//! [sampling]
//! temperature = 0.7
//!
//! [pipeline]
//! retry_cap = 3
//! votes = 3
//! max_concurrency = 8
//! verifier_role = "large"
//!
//! [schedule]
//! beta_small = 0.1
//! beta_medium = 0.2
//! beta_large = 0.5
//!
//! [paths]
//! templates = "templates/v1"
//! ```
//!
//! Every section is optional. Command-line flags take precedence over the
//! file; the only value read from the environment is the API key.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use cogforge_core::gateway::{Endpoint, ModelRole, RetryPolicy, SamplingParams, API_KEY_ENV};
use cogforge_core::pipeline::PipelineConfig;
use cogforge_core::BetaSchedule;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub discards: Option<PathBuf>,
    pub families: Option<PathBuf>,
    pub traces: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub pairs: Option<PathBuf>,
    pub logprobs: Option<PathBuf>,
    pub templates: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub endpoints: BTreeMap<ModelRole, Endpoint>,
    /// Secret; the `COGFORGE_API_KEY` environment variable wins over this.
    pub api_key: Option<String>,
    pub request_timeout_secs: u64,
    pub retry: RetryPolicy,
    pub sampling: SamplingParams,
    pub pipeline: PipelineConfig,
    pub schedule: BetaSchedule,
    pub paths: Paths,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            endpoints: BTreeMap::new(),
            api_key: None,
            request_timeout_secs: 120,
            retry: RetryPolicy::default(),
            sampling: SamplingParams::default(),
            pipeline: PipelineConfig::default(),
            schedule: BetaSchedule::default(),
            paths: Paths::default(),
        }
    }
}

impl AppConfig {
    /// Defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                Self::parse(&text).with_context(|| format!("in config {}", p.display()))?
            }
            None => Self::default(),
        };
        if let Ok(key) = std::env::var(API_KEY_ENV) {
            if !key.is_empty() {
                config.api_key = Some(key);
            }
        }
        Ok(config)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut config: Self = toml::from_str(text)?;
        config.pipeline.sampling = config.sampling;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.pipeline.validate()?;
        for (role, endpoint) in &self.endpoints {
            endpoint
                .validate()
                .map_err(|e| anyhow::anyhow!("endpoints.{role}: {e}"))?;
        }
        if self.request_timeout_secs == 0 {
            bail!("request_timeout_secs must be positive");
        }
        Ok(())
    }

    pub fn request_timeout(&self) -> Duration {
        Duration::from_secs(self.request_timeout_secs)
    }
}

/// `small,medium,large` β triple.
pub fn parse_schedule(text: &str, base: &BetaSchedule) -> Result<BetaSchedule> {
    let values: Vec<f64> = text
        .split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("schedule {text:?} is not three numbers"))?;
    let [small, medium, large] = values[..] else {
        bail!("schedule {text:?} must have exactly three values");
    };
    Ok(BetaSchedule::new(small, medium, large)?.with_adjustment(base.alpha, base.m0)?)
}
