//! A synthetic question set small enough to learn in seconds: 20 facts, each
//! keyed by a topic word, with 1 to 3 word answers over a 48-word vocabulary
//! (50 with BOS and EOS). Every fact has four phrasings of its question;
//! phrasing 0 is for training and phrasings 1 to 3 are held out.

use crate::dataset::{Category, Dataset, Modality, PauseSpan, QaExample, Reasoning};
use crate::grpo::{Optimizer, TrainConfig};
use crate::policy::{SamplingConfig, TinyLm, Vocab};

/// Hash buckets for curriculum prompts. At 64 the 20 topic words collide often
/// enough to cap the reward near 0.87.
pub const FEATURE_DIM: usize = 256;

pub const ANSWER_WORDS: [&str; 48] = [
    "left", "right", "up", "down", "north", "south", "east", "west", "red", "blue", "green", "yellow", "big", "small",
    "tall", "short", "one", "two", "three", "four", "the", "of", "seven", "eight", "tree", "rock", "bridge",
    "river", "boat", "house", "door", "window", "table", "chair", "box", "ball", "star", "moon", "sun", "cloud",
    "hill", "cave", "road", "train", "bird", "fish", "under", "over",
];

pub const TOPICS: [&str; 20] = [
    "lamp", "clock", "kite", "drum", "shell", "leaf", "hat", "cup", "key", "bell", "map", "coin", "rope", "sock",
    "bag", "egg", "nest", "pond", "tent", "wagon",
];

const ANSWERS: [&str; 20] = [
    "left",
    "blue tree",
    "big red boat",
    "north",
    "under the bridge",
    "red door",
    "seven",
    "small yellow fish",
    "over the hill",
    "moon",
    "tall chair",
    "the river",
    "cave",
    "green ball",
    "tall house",
    "up the road",
    "window box",
    "south",
    "west train",
    "one small bird",
];

pub const PHRASINGS: [&str; 4] =
    ["what about the {}", "and the {} what is it", "do you remember the {}", "say the answer for the {}"];

const CATEGORIES: [Category; 4] =
    [Category::SpatialLocation, Category::Navigation, Category::ObjectSelection, Category::Counting];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fact {
    pub topic: &'static str,
    pub answer: &'static str,
    pub category: Category,
}

pub fn facts() -> Vec<Fact> {
    TOPICS
        .iter()
        .zip(ANSWERS)
        .enumerate()
        .map(|(i, (&topic, answer))| Fact { topic, answer, category: CATEGORIES[i % CATEGORIES.len()] })
        .collect()
}

pub fn vocab() -> Vocab {
    Vocab::new(ANSWER_WORDS).expect("answer words are distinct")
}

pub fn example(fact_index: usize, phrasing: usize) -> QaExample {
    let f = &facts()[fact_index];
    let ts = 10_000 * (fact_index as u64 + 1);
    QaExample {
        episode_id: format!("curriculum-p{phrasing}"),
        question_id: format!("curriculum-p{phrasing}-q{fact_index:04}"),
        question_ts_ms: ts,
        frame_refs: Vec::new(),
        context_text: String::new(),
        question: PHRASINGS[phrasing].replace("{}", f.topic),
        pause: PauseSpan { start_ms: ts, end_ms: ts + 3_000 },
        answer: f.answer.to_string(),
        category: f.category,
        modality: Modality::VisualOnly,
        reasoning: Reasoning::Immediate,
    }
}

/// All facts under the given phrasings.
pub fn dataset(phrasings: &[usize]) -> Dataset {
    let examples = phrasings.iter().flat_map(|&p| (0..TOPICS.len()).map(move |i| example(i, p))).collect();
    Dataset::new(examples, "curriculum").expect("question ids are unique")
}

pub fn train_set() -> Dataset {
    dataset(&[0])
}

pub fn held_out() -> Dataset {
    dataset(&[1, 2, 3])
}

/// All-zero policy over the curriculum vocabulary.
pub fn initial_policy() -> TinyLm {
    TinyLm::zeros(vocab(), FEATURE_DIM, 0).expect("feature dim is positive")
}

/// Settings that learn the curriculum in 2000 steps: group 8, batch 8, Adam
/// at 1e-2, rollouts capped at 4 tokens. Everything else is the default.
pub fn train_config() -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-2,
        batch_size: 8,
        max_steps: 2000,
        eval_every: 250,
        optimizer: Optimizer::adam(),
        sampling: SamplingConfig { max_tokens: 4, ..SamplingConfig::default() },
        ..TrainConfig::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reward::tokenize_answer;
    use std::collections::HashSet;

    #[test]
    fn shape() {
        let v = vocab();
        assert_eq!(v.len(), 50);
        let fs = facts();
        assert_eq!(fs.len(), 20);
        let answers: HashSet<_> = fs.iter().map(|f| f.answer).collect();
        assert_eq!(answers.len(), 20);
        for f in &fs {
            let n = tokenize_answer(f.answer).len();
            assert!((1..=3).contains(&n), "{}", f.answer);
            assert!(v.encode_answer(f.answer).is_some(), "{} not in vocab", f.answer);
        }
        assert_eq!(train_set().len(), 20);
        assert_eq!(held_out().len(), 60);
    }
}
