//! Answer reward: `alpha * token_F1 + beta * (1 - lev / max_len)`.
//!
//! F1 is computed over lowercased, punctuation-stripped whitespace tokens with
//! bag (multiset) semantics. The Levenshtein term works on Unicode scalar
//! values of the raw strings. Scaling for training is left to the trainer so
//! that a [`RewardBreakdown`] always lies in `[0, 1]`.

use std::collections::HashMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    /// Weight on token F1.
    pub alpha: f64,
    /// Weight on normalized Levenshtein similarity.
    pub beta: f64,
    /// Multiplier applied by the trainer before advantages are computed.
    pub scaling: f64,
    /// Final-answer markers, searched for their last occurrence.
    pub answer_markers: Vec<String>,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            alpha: 0.3,
            beta: 0.7,
            scaling: 2.0,
            answer_markers: vec!["Answer:".into(), "Final answer:".into()],
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) || (self.alpha + self.beta - 1.0).abs() > 1e-12 {
            return Err(RewardError::InvalidConfig(format!(
                "alpha and beta must be non-negative and sum to 1 (got {} + {})",
                self.alpha, self.beta
            )));
        }
        if !(self.scaling > 0.0 && self.scaling.is_finite()) {
            return Err(RewardError::InvalidConfig(format!("scaling must be positive (got {})", self.scaling)));
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RewardError {
    #[error("gold answer is empty")]
    EmptyGold,
    #[error("invalid reward config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub f1: f64,
    pub lev_distance: usize,
    pub lev_sim: f64,
    pub reward: f64,
}

fn punct_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[\p{P}!-/:-@\[-`{-~]").unwrap())
}

/// Lowercases, strips punctuation and splits on whitespace.
pub fn tokenize_answer(text: &str) -> Vec<String> {
    let lowered = text.to_lowercase();
    punct_re().replace_all(&lowered, "").split_whitespace().map(str::to_owned).collect()
}

/// Bag-of-tokens F1. Both empty scores 1, exactly one empty scores 0.
pub fn token_f1<S: AsRef<str>>(pred: &[S], gold: &[S]) -> f64 {
    match (pred.is_empty(), gold.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for g in gold {
        *counts.entry(g.as_ref()).or_default() += 1;
    }
    let mut overlap = 0usize;
    for p in pred {
        if let Some(c) = counts.get_mut(p.as_ref()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / pred.len() as f64;
    let recall = overlap as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Character-level edit distance (insert / delete / substitute, unit costs).
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let (short, long) = if a.len() <= b.len() { (&a, &b) } else { (&b, &a) };
    if short.is_empty() {
        return long.len();
    }
    let mut row: Vec<usize> = (0..=short.len()).collect();
    for (i, lc) in long.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, sc) in short.iter().enumerate() {
            let above = row[j + 1];
            let cost = usize::from(lc != sc);
            row[j + 1] = (diag + cost).min(above + 1).min(row[j] + 1);
            diag = above;
        }
    }
    row[short.len()]
}

/// Scores `pred_text` against `gold_text`; the result is pre-scaling.
pub fn combined_reward(pred_text: &str, gold_text: &str, cfg: &RewardConfig) -> Result<RewardBreakdown, RewardError> {
    if gold_text.is_empty() {
        return Err(RewardError::EmptyGold);
    }
    let f1 = token_f1(&tokenize_answer(pred_text), &tokenize_answer(gold_text));
    let lev_distance = levenshtein(pred_text, gold_text);
    let longest = pred_text.chars().count().max(gold_text.chars().count());
    let lev_sim = if longest == 0 { 1.0 } else { 1.0 - lev_distance as f64 / longest as f64 };
    let reward = (cfg.alpha * f1 + cfg.beta * lev_sim).clamp(0.0, 1.0);
    Ok(RewardBreakdown { f1, lev_distance, lev_sim, reward })
}

/// Pulls the final answer out of a free-form generation: the text after the
/// last answer marker, else the last non-empty line.
pub fn extract_final_answer<'a>(generation: &'a str, cfg: &RewardConfig) -> &'a str {
    let last_marker = cfg
        .answer_markers
        .iter()
        .filter(|m| !m.is_empty())
        .filter_map(|m| generation.rfind(m.as_str()).map(|pos| pos + m.len()))
        .max();
    if let Some(end) = last_marker {
        return generation[end..].trim();
    }
    generation.lines().rev().map(str::trim).find(|l| !l.is_empty()).unwrap_or_else(|| generation.trim())
}
