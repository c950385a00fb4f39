//! Open-ended and multiple-choice evaluation.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Category, Dataset, QaExample};
use crate::hashing::{fnv1a, mix_seed};
use crate::policy::{greedy_decode, Policy, PolicyError};
use crate::reward::{combined_reward, extract_final_answer, tokenize_answer, RewardConfig, RewardError};

pub const DEFAULT_THRESHOLD: f64 = 0.65;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("nothing to evaluate: the dataset is empty")]
    EmptyDataset,
    #[error("InsufficientAnswers: need {needed} distinct answers, found {distinct}")]
    InsufficientAnswers { distinct: usize, needed: usize },
    #[error("n_options must be between 2 and 6 (got {0})")]
    InvalidOptionCount(usize),
    #[error("threshold must be in [0, 1] (got {0})")]
    InvalidThreshold(f64),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Reward(#[from] RewardError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McqMode {
    /// Pick the option with the highest sequence log-probability.
    ScoreOptions,
    /// Decode once, pick the option closest to the decode by reward.
    GenerateThenMatch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McqItem {
    pub base: QaExample,
    pub options: Vec<String>,
    pub gold_index: usize,
}

/// On-disk form of an [`McqItem`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McqRecord {
    pub question_id: String,
    pub episode_id: String,
    pub question: String,
    pub context_text: String,
    pub frame_refs: Vec<u64>,
    pub category: Category,
    pub options: Vec<String>,
    pub gold_index: usize,
}

impl From<&McqItem> for McqRecord {
    fn from(item: &McqItem) -> Self {
        let b = &item.base;
        Self {
            question_id: b.question_id.clone(),
            episode_id: b.episode_id.clone(),
            question: b.question.clone(),
            context_text: b.context_text.clone(),
            frame_refs: b.frame_refs.clone(),
            category: b.category,
            options: item.options.clone(),
            gold_index: item.gold_index,
        }
    }
}

pub fn write_mcq_jsonl<W: Write>(items: &[McqItem], mut out: W) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, &McqRecord::from(item))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryScore {
    pub n: usize,
    pub top1_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split_name: String,
    pub n: usize,
    /// Open-ended only.
    pub mean_reward: Option<f64>,
    /// Percentage.
    pub top1_accuracy: f64,
    pub per_category: BTreeMap<Category, CategoryScore>,
}

impl EvalReport {
    fn from_outcomes(split_name: &str, outcomes: &[(Category, bool)], mean_reward: Option<f64>) -> Self {
        let mut per: BTreeMap<Category, (usize, usize)> = BTreeMap::new();
        for &(c, ok) in outcomes {
            let e = per.entry(c).or_default();
            e.0 += 1;
            e.1 += usize::from(ok);
        }
        let correct: usize = per.values().map(|v| v.1).sum();
        let pct = |hit: usize, n: usize| 100.0 * hit as f64 / n as f64;
        Self {
            split_name: split_name.to_string(),
            n: outcomes.len(),
            mean_reward,
            top1_accuracy: pct(correct, outcomes.len()),
            per_category: per.into_iter().map(|(c, (n, hit))| (c, CategoryScore { n, top1_accuracy: pct(hit, n) })).collect(),
        }
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "split\t{}", self.split_name)?;
        writeln!(f, "n\t{}", self.n)?;
        if let Some(r) = self.mean_reward {
            writeln!(f, "mean_reward\t{r:.4}")?;
        }
        writeln!(f, "top1\t{:.2}", self.top1_accuracy)?;
        for (c, s) in &self.per_category {
            writeln!(f, "  {}\t{}\t{:.2}", c.as_str(), s.n, s.top1_accuracy)?;
        }
        Ok(())
    }
}

/// Greedy decode per example, scored against the gold answer.
pub fn eval_open_ended<P: Policy>(
    policy: &P,
    data: &Dataset,
    reward_cfg: &RewardConfig,
    threshold: f64,
    max_tokens: usize,
) -> Result<EvalReport, EvalError> {
    if data.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    if !(0.0..=1.0).contains(&threshold) {
        return Err(EvalError::InvalidThreshold(threshold));
    }
    let mut total = 0.0;
    let mut outcomes = Vec::with_capacity(data.len());
    for ex in &data.examples {
        let gen = greedy_decode(policy, &policy.prompt(ex)?, max_tokens)?;
        let r = combined_reward(extract_final_answer(&gen.text, reward_cfg), &ex.answer, reward_cfg)?.reward;
        total += r;
        outcomes.push((ex.category, r >= threshold));
    }
    Ok(EvalReport::from_outcomes("open_ended", &outcomes, Some(total / data.len() as f64)))
}

fn answer_key(a: &str) -> String {
    tokenize_answer(a).join(" ")
}

/// Builds `n_options`-way items. Distractors are other examples' answers,
/// same category first, then any category; every option is distinct after
/// normalization.
pub fn make_mcq(data: &Dataset, n_options: usize, seed: u64) -> Result<Vec<McqItem>, EvalError> {
    if !(2..=6).contains(&n_options) {
        return Err(EvalError::InvalidOptionCount(n_options));
    }
    // first spelling of each distinct answer, in dataset order
    let mut seen = HashSet::new();
    let mut pool: Vec<(String, Category, String)> = Vec::new();
    for ex in &data.examples {
        let key = answer_key(&ex.answer);
        if seen.insert(key.clone()) {
            pool.push((key, ex.category, ex.answer.clone()));
        }
    }
    if pool.len() < n_options {
        return Err(EvalError::InsufficientAnswers { distinct: pool.len(), needed: n_options });
    }
    let mut items = Vec::with_capacity(data.len());
    for ex in &data.examples {
        let gold_key = answer_key(&ex.answer);
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, fnv1a(ex.question_id.as_bytes())]));
        let mut same: Vec<&String> = pool.iter().filter(|p| p.0 != gold_key && p.1 == ex.category).map(|p| &p.2).collect();
        let mut other: Vec<&String> = pool.iter().filter(|p| p.0 != gold_key && p.1 != ex.category).map(|p| &p.2).collect();
        same.shuffle(&mut rng);
        other.shuffle(&mut rng);
        let mut options: Vec<String> = vec![ex.answer.clone()];
        options.extend(same.into_iter().chain(other).take(n_options - 1).cloned());
        options.shuffle(&mut rng);
        let gold_index = options.iter().position(|o| *o == ex.answer).expect("gold is among the options");
        items.push(McqItem { base: ex.clone(), options, gold_index });
    }
    Ok(items)
}

/// The item's example with its options appended to the question.
pub fn mcq_prompt_example(item: &McqItem) -> QaExample {
    let mut ex = item.base.clone();
    ex.question = format!("{} Options: {}", ex.question, item.options.join("; "));
    ex
}

fn first_argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Index chosen by the policy for one item.
pub fn select_option<P: Policy>(
    policy: &P,
    item: &McqItem,
    mode: McqMode,
    reward_cfg: &RewardConfig,
    max_tokens: usize,
) -> Result<usize, EvalError> {
    let scores = match mode {
        McqMode::ScoreOptions => {
            let prompt = policy.prompt(&mcq_prompt_example(item))?;
            let mut scores = Vec::with_capacity(item.options.len());
            for opt in &item.options {
                scores.push(match policy.vocab().encode_answer(opt) {
                    Some(tokens) => policy.token_logprobs(&prompt, &tokens, None)?.iter().sum(),
                    None => f64::NEG_INFINITY,
                });
            }
            scores
        }
        McqMode::GenerateThenMatch => {
            let gen = greedy_decode(policy, &policy.prompt(&item.base)?, max_tokens)?;
            let pred = extract_final_answer(&gen.text, reward_cfg);
            item.options
                .iter()
                .map(|o| combined_reward(pred, o, reward_cfg).map(|b| b.reward))
                .collect::<Result<Vec<_>, _>>()?
        }
    };
    Ok(first_argmax(&scores))
}

pub fn eval_mcq<P: Policy>(
    policy: &P,
    items: &[McqItem],
    mode: McqMode,
    reward_cfg: &RewardConfig,
    max_tokens: usize,
) -> Result<EvalReport, EvalError> {
    if items.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let mut outcomes = Vec::with_capacity(items.len());
    for item in items {
        let pick = select_option(policy, item, mode, reward_cfg, max_tokens)?;
        outcomes.push((item.base.category, pick == item.gold_index));
    }
    let name = match mode {
        McqMode::ScoreOptions => "mcq_score_options",
        McqMode::GenerateThenMatch => "mcq_generate_then_match",
    };
    Ok(EvalReport::from_outcomes(name, &outcomes, None))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::tests::example;

    fn ten() -> Dataset {
        let answers = ["left", "right", "up", "down", "three", "four", "red", "blue", "the bridge", "a boat"];
        let cats = [Category::Navigation, Category::SpatialLocation];
        let ex = answers.iter().enumerate().map(|(i, a)| example("ep", i, a, cats[i % 2])).collect();
        Dataset::new(ex, "t").unwrap()
    }

    #[test]
    fn mcq_construction() {
        let d = ten();
        let items = make_mcq(&d, 4, 5).unwrap();
        assert_eq!(items.len(), 10);
        for it in &items {
            assert_eq!(it.options.len(), 4);
            assert_eq!(it.options[it.gold_index], it.base.answer);
            let keys: HashSet<String> = it.options.iter().map(|o| answer_key(o)).collect();
            assert_eq!(keys.len(), 4);
            // 5 answers per category, so all distractors share the category
            for (i, o) in it.options.iter().enumerate() {
                if i != it.gold_index {
                    let src = d.examples.iter().find(|e| e.answer == *o).unwrap();
                    assert_eq!(src.category, it.base.category);
                }
            }
        }
        assert_eq!(items, make_mcq(&d, 4, 5).unwrap());
    }

    #[test]
    fn mcq_errors() {
        let ex = (0..5).map(|i| example("ep", i, "Same!", Category::Counting)).collect();
        let d = Dataset::new(ex, "t").unwrap();
        assert!(matches!(make_mcq(&d, 4, 0), Err(EvalError::InsufficientAnswers { distinct: 1, needed: 4 })));
        assert!(matches!(make_mcq(&ten(), 7, 0), Err(EvalError::InvalidOptionCount(7))));
    }

    #[test]
    fn report_aggregation() {
        let outcomes = [(Category::Counting, true), (Category::Counting, false), (Category::Navigation, true), (Category::Navigation, true)];
        let r = EvalReport::from_outcomes("x", &outcomes, None);
        assert_eq!(r.top1_accuracy, 75.0);
        assert_eq!(r.per_category[&Category::Counting].top1_accuracy, 50.0);
        let weighted: f64 = r.per_category.values().map(|s| s.n as f64 * s.top1_accuracy).sum::<f64>() / r.n as f64;
        assert_eq!(weighted, r.top1_accuracy);
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(first_argmax(&[1.0, 2.0, 2.0]), 1);
        assert_eq!(first_argmax(&[f64::NEG_INFINITY; 3]), 0);
    }
}
