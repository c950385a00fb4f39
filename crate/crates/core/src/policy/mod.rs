//! Generative policy contract and sampling.
//!
//! A [`Policy`] maps a prompt and token prefix to a next-token distribution
//! and can differentiate the log-probability of a token sequence with respect
//! to its flat parameter vector. [`TinyLm`] is the concrete implementation;
//! tests substitute their own oracle policies.

mod checkpoint;
mod tinylm;
mod vocab;

pub use checkpoint::{read_tlm, write_tlm, TLM_FORMAT_VERSION};
pub use tinylm::{encode_prompt, prompt_tokens, TinyLm, TinyPrompt};
pub use vocab::{Vocab, BOS, EOS};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::QaExample;
use crate::hashing::{fnv1a, mix_seed};

pub type TokenId = usize;

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("non-finite logits")]
    NonFiniteLogits,
    #[error("token id {0} is out of range or cannot be generated")]
    InvalidToken(TokenId),
    #[error("token sequence must be non-empty and end with <eos>")]
    NotEosTerminated,
    #[error("group size must be >= 2 (got {0})")]
    GroupTooSmall(usize),
    #[error("invalid vocabulary: {0}")]
    InvalidVocab(String),
    #[error("invalid sampling config: {0}")]
    InvalidSampling(String),
    #[error("invalid policy shape: {0}")]
    InvalidShape(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// A differentiable autoregressive policy over a fixed vocabulary.
///
/// Prompts are produced by [`Policy::prompt`] from the current parameters and
/// must not be reused after the parameters change.
pub trait Policy {
    type Prompt;

    fn vocab(&self) -> &Vocab;

    fn prompt(&self, example: &QaExample) -> Result<Self::Prompt, PolicyError>;

    /// Distribution over the whole vocabulary for the token following
    /// `prefix` (which starts with BOS).
    fn next_token_dist(&self, prompt: &Self::Prompt, prefix: &[TokenId], temperature: f64) -> Result<Vec<f64>, PolicyError>;

    /// Per-token log-probabilities (temperature 1) of `tokens`, which follow
    /// an implicit BOS. If `grad` is given, adds `sum_t weights[t] * d log p_t`
    /// into it.
    fn token_logprobs(
        &self,
        prompt: &Self::Prompt,
        tokens: &[TokenId],
        weights_and_grad: Option<(&[f64], &mut [f64])>,
    ) -> Result<Vec<f64>, PolicyError>;

    fn params(&self) -> &[f64];

    fn params_mut(&mut self) -> &mut [f64];

    fn num_params(&self) -> usize {
        self.params().len()
    }

    /// Total log-probability of an EOS-terminated sequence and its gradient.
    fn sequence_logprob_and_grad(&self, prompt: &Self::Prompt, tokens: &[TokenId]) -> Result<(f64, Vec<f64>), PolicyError> {
        let mut grad = vec![0.0; self.num_params()];
        let ones = vec![1.0; tokens.len()];
        let lps = self.token_logprobs(prompt, tokens, Some((&ones, &mut grad)))?;
        Ok((lps.iter().sum(), grad))
    }
}

/// Checks that `tokens` is non-empty, in range, free of BOS and ends at its
/// only EOS.
pub fn validate_sequence(vocab: &Vocab, tokens: &[TokenId]) -> Result<(), PolicyError> {
    let Some((&last, body)) = tokens.split_last() else {
        return Err(PolicyError::NotEosTerminated);
    };
    for &t in tokens {
        if t >= vocab.len() || t == vocab.bos() {
            return Err(PolicyError::InvalidToken(t));
        }
    }
    if last != vocab.eos() || body.contains(&vocab.eos()) {
        return Err(PolicyError::NotEosTerminated);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    pub temperature: f64,
    pub top_p: f64,
    /// Content tokens per rollout; EOS is appended if the limit is hit.
    pub max_tokens: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self { temperature: 1.0, top_p: 0.9, max_tokens: 16 }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(PolicyError::InvalidSampling(format!("temperature must be positive (got {})", self.temperature)));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(PolicyError::InvalidSampling(format!("top_p must be in (0, 1] (got {})", self.top_p)));
        }
        if self.max_tokens == 0 {
            return Err(PolicyError::InvalidSampling("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    /// Sampled tokens (BOS excluded), EOS-terminated.
    pub tokens: Vec<TokenId>,
    pub text: String,
    /// Sum of per-token log-probabilities under the unfiltered,
    /// temperature-scaled distribution at sampling time.
    pub logprob: f64,
}

/// Keeps the smallest set of most-probable tokens (ties broken by lower id)
/// whose mass reaches `top_p`, then renormalizes.
pub fn nucleus_filter(probs: &[f64], top_p: f64) -> Vec<f64> {
    if top_p >= 1.0 {
        return probs.to_vec();
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut out = vec![0.0; probs.len()];
    let mut mass = 0.0;
    for &i in &order {
        out[i] = probs[i];
        mass += probs[i];
        if mass >= top_p {
            break;
        }
    }
    if mass > 0.0 {
        out.iter_mut().for_each(|p| *p /= mass);
    }
    out
}

fn draw(probs: &[f64], u: f64) -> TokenId {
    let total: f64 = probs.iter().sum();
    let target = u * total;
    let mut acc = 0.0;
    let mut last_nonzero = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_nonzero = i;
            if target < acc {
                return i;
            }
        }
    }
    last_nonzero
}

fn argmax(probs: &[f64]) -> TokenId {
    // first maximum wins ties
    probs.iter().enumerate().fold(0, |best, (i, &p)| if p > probs[best] { i } else { best })
}

/// One rollout from BOS. The recorded log-probability uses the unfiltered
/// distribution so it matches the policy's own `token_logprobs` when the
/// temperature is 1.
pub fn generate<P: Policy, R: Rng>(
    policy: &P,
    prompt: &P::Prompt,
    cfg: &SamplingConfig,
    rng: &mut R,
) -> Result<Generation, PolicyError> {
    rollout(policy, prompt, cfg.max_tokens, cfg.temperature, |probs| {
        let filtered = nucleus_filter(probs, cfg.top_p);
        draw(&filtered, rng.random::<f64>())
    })
}

/// Argmax decoding without nucleus filtering.
pub fn greedy_decode<P: Policy>(policy: &P, prompt: &P::Prompt, max_tokens: usize) -> Result<Generation, PolicyError> {
    rollout(policy, prompt, max_tokens, 1.0, argmax)
}

fn rollout<P: Policy>(
    policy: &P,
    prompt: &P::Prompt,
    max_tokens: usize,
    temperature: f64,
    mut choose: impl FnMut(&[f64]) -> TokenId,
) -> Result<Generation, PolicyError> {
    let vocab = policy.vocab();
    let mut prefix = vec![vocab.bos()];
    let mut logprob = 0.0;
    loop {
        let probs = policy.next_token_dist(prompt, &prefix, temperature)?;
        let tok = if prefix.len() > max_tokens { vocab.eos() } else { choose(&without_bos(&probs, vocab.bos())) };
        logprob += probs[tok].ln();
        prefix.push(tok);
        if tok == vocab.eos() {
            break;
        }
    }
    let tokens = prefix.split_off(1);
    Ok(Generation { text: vocab.decode(&tokens), tokens, logprob })
}

/// BOS can never be emitted; its mass is spread over the other tokens before
/// a choice is made.
fn without_bos(probs: &[f64], bos: TokenId) -> Vec<f64> {
    let rest = 1.0 - probs[bos];
    probs.iter().enumerate().map(|(i, &p)| if i == bos { 0.0 } else { p / rest }).collect()
}

/// Seed of group member `k` for `example` under the caller's `seed`.
pub fn member_rng(seed: u64, example: &QaExample, k: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, fnv1a(example.question_id.as_bytes())]));
    rng.set_stream(k as u64);
    rng
}

/// `k` independent rollouts for one example. Member `i` draws from its own
/// generator keyed by `(seed, question_id, i)`, so the group does not depend on
/// the order in which members are produced.
pub fn sample_group<P: Policy>(
    policy: &P,
    example: &QaExample,
    k: usize,
    cfg: &SamplingConfig,
    seed: u64,
) -> Result<Vec<Generation>, PolicyError> {
    if k < 2 {
        return Err(PolicyError::GroupTooSmall(k));
    }
    cfg.validate()?;
    let prompt = policy.prompt(example)?;
    (0..k).map(|i| generate(policy, &prompt, cfg, &mut member_rng(seed, example, i))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nucleus_examples() {
        let out = nucleus_filter(&[0.5, 0.3, 0.15, 0.05], 0.9);
        let expect = [0.5 / 0.95, 0.3 / 0.95, 0.15 / 0.95, 0.0];
        for (a, b) in out.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        let p = [0.1, 0.2, 0.3, 0.4];
        assert_eq!(nucleus_filter(&p, 1.0), p.to_vec());
        assert_eq!(nucleus_filter(&[0.0, 1.0, 0.0], 0.3), vec![0.0, 1.0, 0.0]);
        // ties go to the lower id
        assert_eq!(nucleus_filter(&[0.25, 0.25, 0.25, 0.25], 0.5), vec![0.5, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn draw_respects_mass() {
        let p = [0.0, 0.5, 0.0, 0.5];
        assert_eq!(draw(&p, 0.0), 1);
        assert_eq!(draw(&p, 0.49), 1);
        assert_eq!(draw(&p, 0.5), 3);
        assert_eq!(draw(&p, 0.999_999_999), 3);
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
    }

    #[test]
    fn sampling_config_validation() {
        assert!(SamplingConfig::default().validate().is_ok());
        assert!(SamplingConfig { top_p: 0.0, ..Default::default() }.validate().is_err());
        assert!(SamplingConfig { top_p: 1.1, ..Default::default() }.validate().is_err());
        assert!(SamplingConfig { temperature: 0.0, ..Default::default() }.validate().is_err());
    }
}
