//! Group-relative policy optimization.
//!
//! Each step samples `K` answers per example, scores them, centers the scaled
//! rewards within the group and takes one descent step on
//! `-sum(A * logprob) / (B * K) + kl_coefficient * kl_estimate`, where the KL
//! term anchors the policy to a frozen copy of its initial parameters.

mod sweep;
mod train;

pub use sweep::{apply_override, sequential_sweep, sweep, SelectionMetric, SweepReport, SweepRow, SweepSpec};
pub use train::{train, LogRecord, TrainOptions, TrainOutcome};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::QaExample;
use crate::hashing::mix_seed;
use crate::policy::{sample_group, Generation, Policy, PolicyError, SamplingConfig};
use crate::reward::{combined_reward, extract_final_answer, RewardConfig, RewardError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid train config: {0}")]
    InvalidConfig(String),
    #[error("group size must be >= 2 (got {0})")]
    GroupTooSmall(usize),
    #[error("dataset {0} is empty")]
    EmptyDataset(&'static str),
    #[error("non-finite loss at step {step} on example {example_id}")]
    NonFiniteLoss { step: usize, example_id: String },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Optimizer {
    /// Plain gradient descent.
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Where the KL penalty enters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlPlacement {
    /// Additive loss term.
    Loss,
    /// Subtracted from each generation's scaled reward before centering.
    Reward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub group_size: usize,
    pub learning_rate: f64,
    pub kl_coefficient: f64,
    pub reward_scaling: f64,
    pub max_steps: usize,
    /// Examples per step.
    pub batch_size: usize,
    /// Steps between validation evaluations; 0 evaluates only after the last step.
    pub eval_every: usize,
    pub grad_clip_norm: f64,
    pub seed: u64,
    pub sampling: SamplingConfig,
    /// Divide centered rewards by the group standard deviation.
    pub normalize_advantages: bool,
    pub kl_placement: KlPlacement,
    pub optimizer: Optimizer,
    /// Open-ended reward at or above which an answer counts as correct.
    pub eval_threshold: f64,
    /// Stop after this many evaluations without improvement; 0 disables.
    pub early_stop_patience: usize,
    /// Taken from the run's reward section rather than serialized here.
    #[serde(skip)]
    pub reward_cfg: RewardConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            learning_rate: 1e-4,
            kl_coefficient: 0.01,
            reward_scaling: 2.0,
            max_steps: 1000,
            batch_size: 1,
            eval_every: 100,
            grad_clip_norm: 1.0,
            seed: 0,
            sampling: SamplingConfig::default(),
            normalize_advantages: false,
            kl_placement: KlPlacement::Loss,
            optimizer: Optimizer::Sgd,
            eval_threshold: 0.65,
            early_stop_patience: 0,
            reward_cfg: RewardConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if self.group_size < 2 {
            return bad(format!("group_size must be \u{2265} 2 (got {})", self.group_size));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive (got {})", self.learning_rate));
        }
        if !(self.kl_coefficient >= 0.0 && self.kl_coefficient.is_finite()) {
            return bad(format!("kl_coefficient must be non-negative (got {})", self.kl_coefficient));
        }
        if !(self.reward_scaling > 0.0 && self.reward_scaling.is_finite()) {
            return bad(format!("reward_scaling must be positive (got {})", self.reward_scaling));
        }
        if self.max_steps == 0 {
            return bad("max_steps must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.grad_clip_norm > 0.0) {
            return bad(format!("grad_clip_norm must be positive (got {})", self.grad_clip_norm));
        }
        if !(0.0..=1.0).contains(&self.eval_threshold) {
            return bad(format!("eval_threshold must be in [0, 1] (got {})", self.eval_threshold));
        }
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0) {
                return bad("adam needs 0 <= beta < 1 and eps > 0".into());
            }
        }
        self.sampling.validate()?;
        self.reward_cfg.validate()?;
        Ok(())
    }
}

/// `r_i - mean(r)`.
pub fn compute_advantages(rewards: &[f64]) -> Result<Vec<f64>, TrainError> {
    if rewards.len() < 2 {
        return Err(TrainError::GroupTooSmall(rewards.len()));
    }
    // summation error would otherwise leave tied groups slightly off zero
    if rewards.iter().all(|r| *r == rewards[0]) {
        return Ok(vec![0.0; rewards.len()]);
    }
    let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
    Ok(rewards.iter().map(|r| r - mean).collect())
}

/// Centered rewards divided by the population standard deviation; an all-tie
/// group stays all zero.
pub fn compute_normalized_advantages(rewards: &[f64]) -> Result<Vec<f64>, TrainError> {
    let mut adv = compute_advantages(rewards)?;
    let var = adv.iter().map(|a| a * a).sum::<f64>() / adv.len() as f64;
    let std = var.sqrt();
    if std > 1e-12 {
        adv.iter_mut().for_each(|a| *a /= std);
    }
    Ok(adv)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleGroup {
    pub example_id: String,
    pub generations: Vec<Generation>,
    /// Scaled rewards.
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainStepReport {
    pub step: usize,
    /// Pre-scaling mean over the batch and group.
    pub mean_reward: f64,
    pub loss: f64,
    pub kl_estimate: f64,
    pub grad_norm: f64,
}

/// Mean over every sampled token of `log p_current - log p_reference`.
pub fn kl_estimate<P: Policy>(current: &P, reference: &P, example: &QaExample, group: &SampleGroup) -> Result<f64, PolicyError> {
    let (sum, n) = kl_sums(current, reference, example, &group.generations)?;
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

fn kl_sums<P: Policy>(current: &P, reference: &P, example: &QaExample, gens: &[Generation]) -> Result<(f64, usize), PolicyError> {
    let cp = current.prompt(example)?;
    let rp = reference.prompt(example)?;
    let mut sum = 0.0;
    let mut n = 0;
    for g in gens {
        let c = current.token_logprobs(&cp, &g.tokens, None)?;
        let r = reference.token_logprobs(&rp, &g.tokens, None)?;
        sum += c.iter().zip(&r).map(|(a, b)| a - b).sum::<f64>();
        n += c.len();
    }
    Ok((sum, n))
}

/// Exact `KL(current || reference)` of the next-token distributions after
/// `prefix`.
pub fn categorical_kl<P: Policy>(current: &P, reference: &P, example: &QaExample, prefix: &[usize]) -> Result<f64, PolicyError> {
    let p = current.next_token_dist(&current.prompt(example)?, prefix, 1.0)?;
    let q = reference.next_token_dist(&reference.prompt(example)?, prefix, 1.0)?;
    Ok(p.iter().zip(&q).filter(|(pi, _)| **pi > 0.0).map(|(pi, qi)| pi * (pi / qi).ln()).sum())
}

pub fn global_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[derive(Debug, Clone)]
struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

/// Current params, frozen reference and optimizer state.
#[derive(Debug, Clone)]
pub struct Trainer<P: Policy + Clone> {
    pub policy: P,
    reference: P,
    cfg: TrainConfig,
    adam: Option<AdamState>,
    step: usize,
}

impl<P: Policy + Clone> Trainer<P> {
    pub fn new(initial: P, cfg: TrainConfig) -> Result<Self, TrainError> {
        cfg.validate()?;
        Ok(Self::with_reference(initial.clone(), initial, cfg))
    }

    /// Starts from `current` while anchoring the KL term to `reference`.
    pub fn with_reference(current: P, reference: P, cfg: TrainConfig) -> Self {
        let adam = match cfg.optimizer {
            Optimizer::Sgd => None,
            Optimizer::Adam { .. } => {
                let n = current.num_params();
                Some(AdamState { m: vec![0.0; n], v: vec![0.0; n], t: 0 })
            }
        };
        Self { policy: current, reference, cfg, adam, step: 0 }
    }

    pub fn reference(&self) -> &P {
        &self.reference
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    fn step_seed(&self) -> u64 {
        mix_seed(&[self.cfg.seed, self.step as u64])
    }

    /// Samples and scores one group for each example without touching the
    /// parameters. Also returns the pre-scaling rewards.
    pub fn sample_groups(&self, batch: &[QaExample]) -> Result<(Vec<SampleGroup>, Vec<f64>), TrainError> {
        let seed = self.step_seed();
        let mut groups = Vec::with_capacity(batch.len());
        let mut raw_all = Vec::new();
        for ex in batch {
            let gens = sample_group(&self.policy, ex, self.cfg.group_size, &self.cfg.sampling, seed)?;
            let mut rewards = Vec::with_capacity(gens.len());
            for g in &gens {
                let pred = extract_final_answer(&g.text, &self.cfg.reward_cfg);
                let r = combined_reward(pred, &ex.answer, &self.cfg.reward_cfg)?.reward;
                raw_all.push(r);
                rewards.push(self.cfg.reward_scaling * r);
            }
            let mut shaped = rewards.clone();
            if self.cfg.kl_placement == KlPlacement::Reward && self.cfg.kl_coefficient > 0.0 {
                let cp = self.policy.prompt(ex)?;
                let rp = self.reference.prompt(ex)?;
                for (s, g) in shaped.iter_mut().zip(&gens) {
                    let c: f64 = self.policy.token_logprobs(&cp, &g.tokens, None)?.iter().sum();
                    let r: f64 = self.reference.token_logprobs(&rp, &g.tokens, None)?.iter().sum();
                    *s -= self.cfg.kl_coefficient * (c - r);
                }
            }
            let advantages = if self.cfg.normalize_advantages {
                compute_normalized_advantages(&shaped)?
            } else {
                compute_advantages(&shaped)?
            };
            groups.push(SampleGroup { example_id: ex.question_id.clone(), generations: gens, rewards, advantages });
        }
        Ok((groups, raw_all))
    }

    /// One full step: sample, score, update.
    pub fn grpo_step(&mut self, batch: &[QaExample]) -> Result<TrainStepReport, TrainError> {
        if batch.is_empty() {
            return Err(TrainError::EmptyDataset("batch"));
        }
        let (groups, raw) = self.sample_groups(batch)?;
        let mean_reward = raw.iter().sum::<f64>() / raw.len() as f64;
        self.apply_groups(batch, &groups, mean_reward)
    }

    /// Gradient step on already-sampled groups; `groups[i]` belongs to
    /// `batch[i]`. Advantages are taken from the groups as given.
    pub fn apply_groups(&mut self, batch: &[QaExample], groups: &[SampleGroup], mean_reward: f64) -> Result<TrainStepReport, TrainError> {
        let n_params = self.policy.num_params();
        let mut grad = vec![0.0; n_params];
        let bk = groups.iter().map(|g| g.generations.len()).sum::<usize>() as f64;
        let n_tokens: usize = groups.iter().flat_map(|g| &g.generations).map(|g| g.tokens.len()).sum();
        let kl_in_loss = self.cfg.kl_placement == KlPlacement::Loss && self.cfg.kl_coefficient > 0.0;
        let mut pg_loss = 0.0;
        let mut kl_sum = 0.0;
        for (ex, group) in batch.iter().zip(groups) {
            let cp = self.policy.prompt(ex)?;
            let rp = self.reference.prompt(ex)?;
            for (gen, &adv) in group.generations.iter().zip(&group.advantages) {
                let lp = self.policy.token_logprobs(&cp, &gen.tokens, None)?;
                let rl = self.reference.token_logprobs(&rp, &gen.tokens, None)?;
                let delta: Vec<f64> = lp.iter().zip(&rl).map(|(a, b)| a - b).collect();
                let seq_lp: f64 = lp.iter().sum();
                pg_loss -= adv * seq_lp / bk;
                kl_sum += delta.iter().sum::<f64>();
                if !pg_loss.is_finite() || !kl_sum.is_finite() {
                    return Err(TrainError::NonFiniteLoss { step: self.step, example_id: ex.question_id.clone() });
                }
                // d(loss)/d(logprob_t)
                let mut weights = vec![-adv / bk; lp.len()];
                if kl_in_loss {
                    let scale = self.cfg.kl_coefficient / n_tokens as f64;
                    let mut tail = 0.0;
                    for t in (0..delta.len()).rev() {
                        tail += delta[t];
                        weights[t] += scale * tail;
                    }
                }
                if weights.iter().any(|w| *w != 0.0) {
                    self.policy.token_logprobs(&cp, &gen.tokens, Some((&weights, &mut grad)))?;
                }
            }
        }
        let kl = if n_tokens == 0 { 0.0 } else { kl_sum / n_tokens as f64 };
        let loss = pg_loss + if self.cfg.kl_placement == KlPlacement::Loss { self.cfg.kl_coefficient * kl } else { 0.0 };
        let grad_norm = global_norm(&grad);
        if !loss.is_finite() || !grad_norm.is_finite() {
            let id = batch.first().map(|e| e.question_id.clone()).unwrap_or_default();
            return Err(TrainError::NonFiniteLoss { step: self.step, example_id: id });
        }
        if grad_norm > self.cfg.grad_clip_norm {
            let s = self.cfg.grad_clip_norm / grad_norm;
            grad.iter_mut().for_each(|g| *g *= s);
        }
        self.update(&grad);
        let report = TrainStepReport { step: self.step, mean_reward, loss, kl_estimate: kl, grad_norm };
        self.step += 1;
        Ok(report)
    }

    fn update(&mut self, grad: &[f64]) {
        let lr = self.cfg.learning_rate;
        let params = self.policy.params_mut();
        match (&mut self.adam, self.cfg.optimizer) {
            (Some(st), Optimizer::Adam { beta1, beta2, eps }) => {
                st.t += 1;
                let c1 = 1.0 - beta1.powi(st.t);
                let c2 = 1.0 - beta2.powi(st.t);
                for i in 0..params.len() {
                    let g = grad[i];
                    if g == 0.0 && st.m[i] == 0.0 && st.v[i] == 0.0 {
                        continue;
                    }
                    st.m[i] = beta1 * st.m[i] + (1.0 - beta1) * g;
                    st.v[i] = beta2 * st.v[i] + (1.0 - beta2) * g * g;
                    params[i] -= lr * (st.m[i] / c1) / ((st.v[i] / c2).sqrt() + eps);
                }
            }
            _ => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
        }
    }
}
