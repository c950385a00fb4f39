//! Rule-based mining of context–question–pause–answer structures.
//!
//! A question is any sentence ending in `?` that is not a rhetorical tag. It
//! becomes an example when a silent gap of `[pause_min_ms, pause_max_ms]`
//! follows it (directly, or after at most two short prompt cues) and at least
//! one non-question sentence starts within `answer_window_ms` of the gap's end.

use std::collections::BTreeSet;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::{Category, Dataset, Modality, PauseSpan, QaExample, Reasoning};
use crate::reward::tokenize_answer;
use crate::transcript::CueList;

/// Keyword lexicons used to tag examples. Phrases match as contiguous runs of
/// lowercased, punctuation-stripped words.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lexicons {
    pub counting: Vec<String>,
    pub navigation: Vec<String>,
    pub spatial_location: Vec<String>,
    pub object_selection_trigger: Vec<String>,
    pub object_nouns: Vec<String>,
    pub problem_solving: Vec<String>,
    pub sequential: Vec<String>,
}

impl Default for Lexicons {
    fn default() -> Self {
        serde_json::from_str(include_str!("../data/lexicons.json")).expect("bundled lexicons are valid")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QpaConfig {
    pub pause_min_ms: u64,
    pub pause_max_ms: u64,
    pub context_window_ms: u64,
    pub answer_window_ms: u64,
    /// Frame timestamps per example, the last one at the question itself.
    pub frame_sample_count: usize,
    /// Regexes matched against the lowercased sentence; a match marks a tag
    /// question ("..., right?") that is not a real question.
    pub rhetorical_patterns: Vec<String>,
    /// Leading sentences dropped from an answer (compared case-insensitively).
    pub affirmations: Vec<String>,
    pub lexicons: Lexicons,
}

impl Default for QpaConfig {
    fn default() -> Self {
        Self {
            pause_min_ms: 2000,
            pause_max_ms: 15000,
            context_window_ms: 60000,
            answer_window_ms: 8000,
            frame_sample_count: 8,
            rhetorical_patterns: vec![
                r"^(right|okay|ok|huh|yeah|really|ready|remember)\?$".into(),
                r",\s*(right|okay|ok|huh|yeah|remember)\?$".into(),
            ],
            affirmations: vec!["Yeah!".into(), "Right!".into(), "\u{a1}S\u{ed}!".into(), "Yes!".into(), "S\u{ed}!".into()],
            lexicons: Lexicons::default(),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("invalid extraction config: {0}")]
    Invalid(String),
}

impl QpaConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if !(0 < self.pause_min_ms && self.pause_min_ms < self.pause_max_ms) {
            return bad("require 0 < pause_min_ms < pause_max_ms");
        }
        if self.context_window_ms == 0 || self.answer_window_ms == 0 {
            return bad("context_window_ms and answer_window_ms must be positive");
        }
        if self.frame_sample_count == 0 {
            return bad("frame_sample_count must be at least 1");
        }
        for p in &self.rhetorical_patterns {
            if let Err(e) = Regex::new(p) {
                return Err(ConfigError::Invalid(format!("rhetorical pattern {p:?}: {e}")));
            }
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form of the config.
    pub fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    fn compiled_rhetorical(&self) -> Vec<Regex> {
        self.rhetorical_patterns.iter().filter_map(|p| Regex::new(p).ok()).collect()
    }
}

/// Splits text after runs of sentence-final punctuation followed by whitespace
/// or end of text.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?' | '\u{2026}') {
            let mut end = i + c.len_utf8();
            while let Some(&(j, d)) = chars.peek() {
                if matches!(d, '.' | '!' | '?' | '\u{2026}') {
                    end = j + d.len_utf8();
                    chars.next();
                } else {
                    break;
                }
            }
            let at_boundary = chars.peek().is_none_or(|&(_, d)| d.is_whitespace());
            if at_boundary {
                let s = text[start..end].trim();
                if !s.is_empty() {
                    out.push(s);
                }
                start = end;
            }
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail);
    }
    out
}

fn is_question(sentence: &str) -> bool {
    sentence.ends_with('?')
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct QuestionHit {
    pub cue_index: usize,
    pub sentence: String,
    /// End time of the containing cue.
    pub ts_ms: u64,
}

pub fn detect_questions(cues: &CueList, cfg: &QpaConfig) -> Vec<QuestionHit> {
    let rhetorical = cfg.compiled_rhetorical();
    let mut hits = Vec::new();
    for cue in &cues.cues {
        for sentence in split_sentences(&cue.text) {
            if !is_question(sentence) {
                continue;
            }
            let lowered = sentence.to_lowercase();
            if rhetorical.iter().any(|re| re.is_match(&lowered)) {
                continue;
            }
            hits.push(QuestionHit { cue_index: cue.index, sentence: sentence.to_string(), ts_ms: cue.end_ms });
        }
    }
    hits
}

/// Finds the pedagogical pause after the question cue at `hit_index`.
///
/// Gaps after the question cue and after up to two following cues are
/// examined in order. Gaps shorter than `pause_min_ms` are passed over; the
/// first gap at least that long is the pause if it does not exceed
/// `pause_max_ms`, otherwise there is no pause.
pub fn detect_pause(cues: &CueList, hit_index: usize, cfg: &QpaConfig) -> Option<PauseSpan> {
    let c = &cues.cues;
    for j in hit_index..=hit_index + 2 {
        let (Some(cur), Some(next)) = (c.get(j), c.get(j + 1)) else {
            return None;
        };
        if next.start_ms <= cur.end_ms {
            continue;
        }
        let gap = next.start_ms - cur.end_ms;
        if gap >= cfg.pause_min_ms {
            return (gap <= cfg.pause_max_ms).then_some(PauseSpan { start_ms: cur.end_ms, end_ms: next.start_ms });
        }
    }
    None
}

/// Collects the answer spoken after `pause`: sentences of cues starting within
/// the answer window, up to the first question, with leading affirmations
/// removed.
pub fn extract_answer(cues: &CueList, pause: PauseSpan, cfg: &QpaConfig) -> Option<String> {
    let window_end = pause.end_ms + cfg.answer_window_ms;
    let affirmations: Vec<String> = cfg.affirmations.iter().map(|a| a.to_lowercase()).collect();
    let mut parts: Vec<&str> = Vec::new();
    'cues: for cue in cues.cues.iter().filter(|c| c.start_ms >= pause.end_ms && c.start_ms < window_end) {
        for sentence in split_sentences(&cue.text) {
            if is_question(sentence) {
                break 'cues;
            }
            if parts.is_empty() && affirmations.contains(&sentence.to_lowercase()) {
                continue;
            }
            parts.push(sentence);
        }
    }
    (!parts.is_empty()).then(|| parts.join(" "))
}

fn contains_phrase(words: &[String], phrase: &str) -> bool {
    let needle: Vec<&str> = phrase.split_whitespace().collect();
    !needle.is_empty() && words.windows(needle.len()).any(|w| w.iter().zip(&needle).all(|(a, b)| a == b))
}

fn any_phrase(words: &[String], phrases: &[String]) -> bool {
    phrases.iter().any(|p| contains_phrase(words, p))
}

/// Keyword-rule category. Rules are tried in order: counting, navigation,
/// spatial location, object selection ("which" + object noun), problem
/// solving; anything else is knowledge recall.
pub fn categorize(question: &str, lex: &Lexicons) -> Category {
    let words = tokenize_answer(question);
    if any_phrase(&words, &lex.counting) {
        Category::Counting
    } else if any_phrase(&words, &lex.navigation) {
        Category::Navigation
    } else if any_phrase(&words, &lex.spatial_location) {
        Category::SpatialLocation
    } else if any_phrase(&words, &lex.object_selection_trigger) && any_phrase(&words, &lex.object_nouns) {
        Category::ObjectSelection
    } else if any_phrase(&words, &lex.problem_solving) {
        Category::ProblemSolving
    } else {
        Category::KnowledgeRecall
    }
}

/// `visual_only` when there is no context, `text_only` when the answer (case
/// folded, outer punctuation trimmed) occurs in the context, else `multimodal`.
pub fn assign_modality(answer: &str, context: &str) -> Modality {
    if context.trim().is_empty() {
        return Modality::VisualOnly;
    }
    let core = answer.trim_matches(|c: char| c.is_whitespace() || !c.is_alphanumeric()).to_lowercase();
    if !core.is_empty() && context.to_lowercase().contains(&core) {
        Modality::TextOnly
    } else {
        Modality::Multimodal
    }
}

pub fn assign_reasoning(question: &str, lex: &Lexicons) -> Reasoning {
    if any_phrase(&tokenize_answer(question), &lex.sequential) {
        Reasoning::Sequential
    } else {
        Reasoning::Immediate
    }
}

/// `frame_sample_count` timestamps evenly spaced from the window start to the
/// question timestamp inclusive.
pub fn frame_refs(window_start_ms: u64, question_ts_ms: u64, count: usize) -> Vec<u64> {
    if count <= 1 {
        return vec![question_ts_ms];
    }
    let span = question_ts_ms - window_start_ms;
    (0..count).map(|i| window_start_ms + span * i as u64 / (count as u64 - 1)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    NoPause,
    NoAnswer,
    /// Another question earlier in the same run already claimed this pause.
    DuplicatePause,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub episode_id: String,
    pub cue_index: usize,
    pub reason: SkipReason,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub dataset: Dataset,
    pub skips: Vec<SkipRecord>,
}

impl Extraction {
    pub fn skips_jsonl(&self) -> String {
        self.skips.iter().map(|s| serde_json::to_string(s).expect("skip record serializes") + "\n").collect()
    }
}

pub fn build_examples(cues: &CueList, cfg: &QpaConfig) -> Extraction {
    let mut examples = Vec::new();
    let mut skips = Vec::new();
    let mut used_pauses = BTreeSet::new();
    let skip = |skips: &mut Vec<SkipRecord>, cue_index, reason| {
        skips.push(SkipRecord { episode_id: cues.episode_id.clone(), cue_index, reason })
    };

    for hit in detect_questions(cues, cfg) {
        let Some(pause) = detect_pause(cues, hit.cue_index, cfg) else {
            skip(&mut skips, hit.cue_index, SkipReason::NoPause);
            continue;
        };
        if !used_pauses.insert((pause.start_ms, pause.end_ms)) {
            skip(&mut skips, hit.cue_index, SkipReason::DuplicatePause);
            continue;
        }
        let Some(answer) = extract_answer(cues, pause, cfg) else {
            skip(&mut skips, hit.cue_index, SkipReason::NoAnswer);
            continue;
        };

        let question_ts_ms = hit.ts_ms;
        let window_start = question_ts_ms.saturating_sub(cfg.context_window_ms);
        let context_text = cues.cues[..hit.cue_index]
            .iter()
            .filter(|c| c.start_ms >= window_start && c.start_ms < question_ts_ms)
            .map(|c| c.text.as_str())
            .collect::<Vec<_>>()
            .join(" ");

        examples.push(QaExample {
            episode_id: cues.episode_id.clone(),
            question_id: format!("{}-q{:04}", cues.episode_id, examples.len()),
            question_ts_ms,
            frame_refs: frame_refs(window_start, question_ts_ms, cfg.frame_sample_count),
            category: categorize(&hit.sentence, &cfg.lexicons),
            modality: assign_modality(&answer, &context_text),
            reasoning: assign_reasoning(&hit.sentence, &cfg.lexicons),
            context_text,
            question: hit.sentence,
            pause,
            answer,
        });
    }

    let dataset = Dataset { examples, config_fingerprint: cfg.fingerprint() };
    Extraction { dataset, skips }
}

/// Runs [`build_examples`] over several episodes and concatenates the results.
pub fn build_dataset(episodes: &[CueList], cfg: &QpaConfig) -> Extraction {
    let mut examples = Vec::new();
    let mut skips = Vec::new();
    for cues in episodes {
        let e = build_examples(cues, cfg);
        examples.extend(e.dataset.examples);
        skips.extend(e.skips);
    }
    Extraction { dataset: Dataset { examples, config_fingerprint: cfg.fingerprint() }, skips }
}
