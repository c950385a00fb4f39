//! QA example records, JSONL serialization, episode-level splits and
//! distribution statistics.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{self, BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    SpatialLocation,
    ObjectSelection,
    Navigation,
    KnowledgeRecall,
    ProblemSolving,
    Counting,
    Other,
}

impl Category {
    pub const ALL: [Category; 7] = [
        Category::SpatialLocation,
        Category::ObjectSelection,
        Category::Navigation,
        Category::KnowledgeRecall,
        Category::ProblemSolving,
        Category::Counting,
        Category::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::SpatialLocation => "spatial_location",
            Category::ObjectSelection => "object_selection",
            Category::Navigation => "navigation",
            Category::KnowledgeRecall => "knowledge_recall",
            Category::ProblemSolving => "problem_solving",
            Category::Counting => "counting",
            Category::Other => "other",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    TextOnly,
    VisualOnly,
    Multimodal,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::TextOnly, Modality::VisualOnly, Modality::Multimodal];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reasoning {
    Immediate,
    Sequential,
}

impl Reasoning {
    pub const ALL: [Reasoning; 2] = [Reasoning::Immediate, Reasoning::Sequential];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PauseSpan {
    pub start_ms: u64,
    pub end_ms: u64,
}

impl PauseSpan {
    pub fn duration_ms(&self) -> u64 {
        self.end_ms - self.start_ms
    }
}

/// One training tuple: frame references, context transcript, question and
/// gold answer, plus the pause that separated question from answer.
///
/// Field order is the JSONL field order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QaExample {
    pub episode_id: String,
    pub question_id: String,
    pub question_ts_ms: u64,
    pub frame_refs: Vec<u64>,
    pub context_text: String,
    pub question: String,
    pub pause: PauseSpan,
    pub answer: String,
    pub category: Category,
    pub modality: Modality,
    pub reasoning: Reasoning,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub examples: Vec<QaExample>,
    /// Hex digest of the extraction config that produced the examples, if known.
    pub config_fingerprint: String,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("duplicate question_id {0:?}")]
    DuplicateId(String),
    #[error("split ratios must be non-negative and sum to 1 (got {0:?})")]
    InvalidRatios([f64; 3]),
    #[error("{episodes} episode(s) cannot fill {needed} non-empty splits")]
    InsufficientEpisodes { episodes: usize, needed: usize },
}

impl Dataset {
    pub fn new(examples: Vec<QaExample>, config_fingerprint: impl Into<String>) -> Result<Self, DatasetError> {
        let mut seen = BTreeSet::new();
        for ex in &examples {
            if !seen.insert(ex.question_id.as_str()) {
                return Err(DatasetError::DuplicateId(ex.question_id.clone()));
            }
        }
        Ok(Self { examples, config_fingerprint: config_fingerprint.into() })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Episode ids in first-appearance order.
    pub fn episode_ids(&self) -> Vec<&str> {
        let mut seen = BTreeSet::new();
        self.examples.iter().map(|e| e.episode_id.as_str()).filter(|id| seen.insert(*id)).collect()
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for ex in &self.examples {
            serde_json::to_writer(&mut out, ex)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    pub fn to_jsonl_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self, DatasetError> {
        let mut examples = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let ex: QaExample = serde_json::from_str(&line).map_err(|source| DatasetError::Json { line: i + 1, source })?;
            examples.push(ex);
        }
        Self::new(examples, "")
    }

    pub fn load(path: &std::path::Path) -> Result<Self, DatasetError> {
        Self::read_jsonl(io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), DatasetError> {
        self.write_jsonl(io::BufWriter::new(std::fs::File::create(path)?))?;
        Ok(())
    }

    fn subset(&self, episodes: &BTreeSet<&str>) -> Dataset {
        Dataset {
            examples: self.examples.iter().filter(|e| episodes.contains(e.episode_id.as_str())).cloned().collect(),
            config_fingerprint: self.config_fingerprint.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Splits by episode so that no episode contributes to more than one split.
///
/// Episode counts per split come from largest-remainder rounding of
/// `ratios * n_episodes`, so each lands within one episode of its target.
pub fn split_dataset(d: &Dataset, ratios: [f64; 3], seed: u64) -> Result<Splits, DatasetError> {
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(DatasetError::InvalidRatios(ratios));
    }
    let mut episodes = d.episode_ids();
    let needed = ratios.iter().filter(|r| **r > 0.0).count();
    if episodes.len() < needed {
        return Err(DatasetError::InsufficientEpisodes { episodes: episodes.len(), needed });
    }
    episodes.sort_unstable();
    episodes.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let n = episodes.len();
    let targets: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut counts: Vec<usize> = targets.iter().map(|t| t.floor() as usize).collect();
    let mut order: Vec<usize> = (0..3).collect();
    // stable sort: equal remainders go to the earlier split
    order.sort_by(|&a, &b| (targets[b] - targets[b].floor()).total_cmp(&(targets[a] - targets[a].floor())));
    let mut remaining = n - counts.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        if ratios[i] > 0.0 {
            counts[i] += 1;
            remaining -= 1;
        }
    }

    let (train_eps, rest) = episodes.split_at(counts[0]);
    let (val_eps, test_eps) = rest.split_at(counts[1]);
    Ok(Splits {
        train: d.subset(&to_set(train_eps)),
        val: d.subset(&to_set(val_eps)),
        test: d.subset(&to_set(test_eps)),
    })
}

fn to_set<'a>(s: &[&'a str]) -> BTreeSet<&'a str> {
    s.iter().copied().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Share {
    pub count: usize,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_examples: usize,
    pub n_episodes: usize,
    pub questions_per_episode: f64,
    pub category: BTreeMap<Category, Share>,
    pub modality: BTreeMap<Modality, Share>,
    pub reasoning: BTreeMap<Reasoning, Share>,
}

fn shares<K: Ord + Copy>(keys: &[K], values: impl Iterator<Item = K>, n: usize) -> BTreeMap<K, Share> {
    let mut counts: BTreeMap<K, usize> = keys.iter().map(|k| (*k, 0)).collect();
    for v in values {
        *counts.entry(v).or_default() += 1;
    }
    counts
        .into_iter()
        .map(|(k, count)| {
            let percent = if n == 0 { 0.0 } else { 100.0 * count as f64 / n as f64 };
            (k, Share { count, percent })
        })
        .collect()
}

pub fn dataset_stats(d: &Dataset) -> DatasetStats {
    let n = d.len();
    let n_episodes = d.episode_ids().len();
    DatasetStats {
        n_examples: n,
        n_episodes,
        questions_per_episode: if n_episodes == 0 { 0.0 } else { n as f64 / n_episodes as f64 },
        category: shares(&Category::ALL, d.examples.iter().map(|e| e.category), n),
        modality: shares(&Modality::ALL, d.examples.iter().map(|e| e.modality), n),
        reasoning: shares(&Reasoning::ALL, d.examples.iter().map(|e| e.reasoning), n),
    }
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "examples={} episodes={} questions/episode={:.2}",
            self.n_examples, self.n_episodes, self.questions_per_episode
        )?;
        for (k, s) in &self.category {
            writeln!(f, "category\t{k}\t{}\t{:.1}%", s.count, s.percent)?;
        }
        for (k, s) in &self.modality {
            writeln!(f, "modality\t{}\t{}\t{:.1}%", serde_json::to_value(k).unwrap().as_str().unwrap(), s.count, s.percent)?;
        }
        for (k, s) in &self.reasoning {
            writeln!(f, "reasoning\t{}\t{}\t{:.1}%", serde_json::to_value(k).unwrap().as_str().unwrap(), s.count, s.percent)?;
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn example(episode: &str, ordinal: usize, answer: &str, category: Category) -> QaExample {
        QaExample {
            episode_id: episode.to_string(),
            question_id: format!("{episode}-q{ordinal:04}"),
            question_ts_ms: 10_000,
            frame_refs: vec![5_000, 10_000],
            context_text: "we walk".into(),
            question: "where now?".into(),
            pause: PauseSpan { start_ms: 10_000, end_ms: 12_500 },
            answer: answer.into(),
            category,
            modality: Modality::Multimodal,
            reasoning: Reasoning::Immediate,
        }
    }

    fn episodes(n: usize) -> Dataset {
        let examples = (0..n).flat_map(|e| (0..3).map(move |q| example(&format!("ep{e:02}"), q, "x", Category::Other))).collect();
        Dataset::new(examples, "").unwrap()
    }

    #[test]
    fn split_sizes_and_determinism() {
        let d = episodes(10);
        let a = split_dataset(&d, [0.8, 0.1, 0.1], 7).unwrap();
        let sizes = |s: &Splits| [s.train.episode_ids().len(), s.val.episode_ids().len(), s.test.episode_ids().len()];
        assert_eq!(sizes(&a), [8, 1, 1]);
        let b = split_dataset(&d, [0.8, 0.1, 0.1], 7).unwrap();
        assert_eq!(a, b);
        let c = split_dataset(&d, [0.8, 0.1, 0.1], 8).unwrap();
        assert_eq!(sizes(&c), [8, 1, 1]);
    }

    #[test]
    fn split_errors() {
        let d = episodes(2);
        assert!(matches!(
            split_dataset(&d, [0.5, 0.25, 0.25], 0),
            Err(DatasetError::InsufficientEpisodes { episodes: 2, needed: 3 })
        ));
        assert!(matches!(split_dataset(&d, [0.5, 0.5, 0.1], 0), Err(DatasetError::InvalidRatios(_))));
        assert!(matches!(split_dataset(&d, [1.2, -0.2, 0.0], 0), Err(DatasetError::InvalidRatios(_))));
        let s = split_dataset(&d, [0.5, 0.5, 0.0], 0).unwrap();
        assert!(s.test.is_empty());
        assert_eq!(s.train.episode_ids().len() + s.val.episode_ids().len(), 2);
    }

    #[test]
    fn stats_examples() {
        let d = Dataset::new(
            vec![
                example("a", 0, "x", Category::Navigation),
                example("a", 1, "x", Category::Navigation),
                example("b", 0, "x", Category::Counting),
                example("b", 1, "x", Category::Counting),
            ],
            "",
        )
        .unwrap();
        let s = dataset_stats(&d);
        assert_eq!(s.category[&Category::Navigation].percent, 50.0);
        assert_eq!(s.category[&Category::Counting].percent, 50.0);
        assert_eq!(s.category[&Category::SpatialLocation].count, 0);
        assert_eq!(s.questions_per_episode, 2.0);

        let empty = dataset_stats(&Dataset::new(vec![], "").unwrap());
        assert_eq!(empty.n_examples, 0);
        assert!(empty.category.values().all(|s| s.count == 0 && s.percent == 0.0));
        assert_eq!(empty.questions_per_episode, 0.0);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let e = example("a", 0, "x", Category::Other);
        assert!(matches!(Dataset::new(vec![e.clone(), e], ""), Err(DatasetError::DuplicateId(_))));
    }

    #[test]
    fn jsonl_field_order_is_stable() {
        let d = Dataset::new(vec![example("a", 0, "The tree!", Category::SpatialLocation)], "").unwrap();
        let line = d.to_jsonl_string();
        assert!(line.starts_with(r#"{"episode_id":"a","question_id":"a-q0000","question_ts_ms":10000,"frame_refs":[5000,10000],"context_text":"we walk","question":"where now?","pause":{"start_ms":10000,"end_ms":12500},"answer":"The tree!","category":"spatial_location","modality":"multimodal","reasoning":"immediate"}"#));
        let back = Dataset::read_jsonl(line.as_bytes()).unwrap();
        assert_eq!(back.examples, d.examples);
    }
}
