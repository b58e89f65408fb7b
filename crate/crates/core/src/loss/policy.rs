//! Miniature differentiable policy used to exercise the losses end to end.
//!
//! The policy is a table of logits indexed by (context bucket, token). The
//! bucket for a position is FNV-1a over the prompt tokens, a separator, and
//! the response tokens emitted so far, reduced modulo the bucket count.

use crate::exec::{map_ordered, Exec};
use crate::model::{BetaSchedule, GapType, LogProbQuad};

use super::{cogpo_loss_with, sigmoid, LossError, LossReport};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
const SEPARATOR: u32 = u32::MAX;

fn fnv_push(hash: u64, token: u32) -> u64 {
    token
        .to_le_bytes()
        .iter()
        .fold(hash, |h, b| (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyPolicy {
    vocab: usize,
    buckets: usize,
    logits: Vec<f64>,
}

impl ToyPolicy {
    /// All-zero logits (uniform next-token distribution).
    pub fn uniform(vocab: usize, buckets: usize) -> Self {
        assert!(vocab > 0 && buckets > 0, "vocab and buckets must be positive");
        Self {
            vocab,
            buckets,
            logits: vec![0.0; vocab * buckets],
        }
    }

    pub fn from_logits(vocab: usize, buckets: usize, logits: Vec<f64>) -> Self {
        assert_eq!(logits.len(), vocab * buckets, "logit table shape");
        Self { vocab, buckets, logits }
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn buckets(&self) -> usize {
        self.buckets
    }

    pub fn params(&self) -> &[f64] {
        &self.logits
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    pub fn num_params(&self) -> usize {
        self.logits.len()
    }

    /// Frozen copy, e.g. to serve as the reference model.
    pub fn snapshot(&self) -> ToyPolicy {
        self.clone()
    }

    pub fn with_params(&self, params: &[f64]) -> ToyPolicy {
        Self::from_logits(self.vocab, self.buckets, params.to_vec())
    }

    fn row(&self, bucket: usize) -> &[f64] {
        &self.logits[bucket * self.vocab..(bucket + 1) * self.vocab]
    }

    pub fn log_softmax(&self, bucket: usize) -> Vec<f64> {
        let row = self.row(bucket);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        // the max entry contributes exactly 1; ln_1p over the rest avoids
        // cancellation when one logit dominates
        let argmax = row.iter().position(|x| *x == max).unwrap_or(0);
        let rest: f64 = row
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != argmax)
            .map(|(_, x)| (x - max).exp())
            .sum();
        let log_norm = rest.ln_1p();
        row.iter().map(|x| (x - max) - log_norm).collect()
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<(), LossError> {
        match tokens.iter().find(|t| **t as usize >= self.vocab) {
            Some(&token) => Err(LossError::TokenOutOfRange {
                token,
                vocab: self.vocab,
            }),
            None => Ok(()),
        }
    }

    /// Bucket index for every response position.
    fn contexts(&self, prompt: &[u32], response: &[u32]) -> Vec<usize> {
        let mut hash = prompt.iter().fold(FNV_OFFSET, |h, t| fnv_push(h, *t));
        hash = fnv_push(hash, SEPARATOR);
        let mut out = Vec::with_capacity(response.len());
        for token in response {
            out.push((hash % self.buckets as u64) as usize);
            hash = fnv_push(hash, *token);
        }
        out
    }

    /// `log p(response | prompt)`: sum over positions of the log-softmax of
    /// the bucket's logits at the emitted token.
    pub fn sequence_logprob(&self, prompt: &[u32], response: &[u32]) -> Result<f64, LossError> {
        self.check_tokens(prompt)?;
        self.check_tokens(response)?;
        Ok(self
            .contexts(prompt, response)
            .into_iter()
            .zip(response)
            .map(|(b, t)| self.log_softmax(b)[*t as usize])
            .sum())
    }

    /// Adds `scale * d log p(response | prompt) / d logits` into `grad`.
    fn accumulate_logprob_grad(&self, prompt: &[u32], response: &[u32], scale: f64, grad: &mut [f64]) {
        for (b, t) in self.contexts(prompt, response).into_iter().zip(response) {
            let probs = self.log_softmax(b);
            let base = b * self.vocab;
            for (v, lp) in probs.iter().enumerate() {
                let indicator = if v == *t as usize { 1.0 } else { 0.0 };
                grad[base + v] += scale * (indicator - lp.exp());
            }
        }
    }
}

/// Token-level preference pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToyPair {
    pub prompt: Vec<u32>,
    pub chosen: Vec<u32>,
    pub rejected: Vec<u32>,
    pub gap: GapType,
}

/// Gap-aware loss of a policy against a frozen reference over toy pairs.
#[derive(Debug, Clone)]
pub struct CogpoObjective<'a> {
    pub reference: &'a ToyPolicy,
    pub pairs: &'a [ToyPair],
    pub schedule: BetaSchedule,
    pub exec: Exec,
}

impl<'a> CogpoObjective<'a> {
    pub fn new(reference: &'a ToyPolicy, pairs: &'a [ToyPair], schedule: BetaSchedule) -> Self {
        Self {
            reference,
            pairs,
            schedule,
            exec: Exec::Sequential,
        }
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn quads(&self, policy: &ToyPolicy) -> Result<Vec<(LogProbQuad, GapType)>, LossError> {
        map_ordered(self.exec, self.pairs, |_, p| {
            Ok((
                LogProbQuad {
                    lp_w_theta: policy.sequence_logprob(&p.prompt, &p.chosen)?,
                    lp_w_ref: self.reference.sequence_logprob(&p.prompt, &p.chosen)?,
                    lp_l_theta: policy.sequence_logprob(&p.prompt, &p.rejected)?,
                    lp_l_ref: self.reference.sequence_logprob(&p.prompt, &p.rejected)?,
                },
                p.gap,
            ))
        })
        .into_iter()
        .collect()
    }

    pub fn loss(&self, policy: &ToyPolicy) -> Result<f64, LossError> {
        Ok(cogpo_loss_with(Exec::Sequential, &self.quads(policy)?, &self.schedule)?.loss)
    }

    /// Loss, margins and the analytic gradient with respect to the policy's
    /// logits (the reference is held fixed).
    pub fn evaluate(&self, policy: &ToyPolicy) -> Result<LossReport, LossError> {
        let quads = self.quads(policy)?;
        let mut report = cogpo_loss_with(Exec::Sequential, &quads, &self.schedule)?;
        let n = quads.len() as f64;
        // dL/dm_i = -sigmoid(-m_i) / n ; dm_i/dlogp(w) = beta_i ; dm_i/dlogp(l) = -beta_i
        let partials = map_ordered(self.exec, self.pairs, |i, p| {
            let beta = self.schedule.beta_for(p.gap);
            let coeff = -sigmoid(-report.margins[i]) / n * beta;
            let mut g = vec![0.0; policy.num_params()];
            policy.accumulate_logprob_grad(&p.prompt, &p.chosen, coeff, &mut g);
            policy.accumulate_logprob_grad(&p.prompt, &p.rejected, -coeff, &mut g);
            g
        });
        let mut grad = vec![0.0; policy.num_params()];
        for g in partials {
            for (acc, x) in grad.iter_mut().zip(g) {
                *acc += x;
            }
        }
        report.gradient = Some(grad);
        Ok(report)
    }
}
