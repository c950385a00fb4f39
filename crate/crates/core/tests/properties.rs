use std::collections::BTreeSet;

use proptest::prelude::*;
use qpa_grpo::dataset::{split_dataset, Category, Dataset, Modality, PauseSpan, QaExample, Reasoning};
use qpa_grpo::extract::{build_examples, QpaConfig};
use qpa_grpo::grpo::{compute_advantages, compute_normalized_advantages};
use qpa_grpo::reward::{combined_reward, levenshtein, token_f1, tokenize_answer, RewardConfig};
use qpa_grpo::transcript::{format_srt_timestamp, format_vtt_timestamp, normalize_cue_text, parse_timestamp, Cue, CueList, SubtitleFormat};

/// Full-matrix edit distance over chars.
fn dp_levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d[a.len()][b.len()]
}

fn short_text() -> impl Strategy<Value = String> {
    prop::string::string_regex("[a-cé ñ]{0,12}").unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn levenshtein_matches_dp(a in "\\PC{0,40}", b in "\\PC{0,40}") {
        prop_assert_eq!(levenshtein(&a, &b), dp_levenshtein(&a, &b));
    }

    #[test]
    fn levenshtein_is_a_metric(a in short_text(), b in short_text(), c in short_text()) {
        prop_assert_eq!(levenshtein(&a, &b), levenshtein(&b, &a));
        prop_assert_eq!(levenshtein(&a, &a), 0);
        prop_assert!(levenshtein(&a, &c) <= levenshtein(&a, &b) + levenshtein(&b, &c));
    }
}

proptest! {
    #[test]
    fn f1_ignores_order(words in prop::collection::vec("[a-d]{1,3}", 0..8), gold in prop::collection::vec("[a-d]{1,3}", 0..8), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut shuffled = words.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(token_f1(&words, &gold), token_f1(&shuffled, &gold));
        let f = token_f1(&words, &gold);
        prop_assert!((0.0..=1.0).contains(&f));
        prop_assert_eq!(f, token_f1(&gold, &words));
    }

    #[test]
    fn reward_is_bounded_and_exact_on_identity(a in "\\PC{1,30}", b in "\\PC{0,30}") {
        let cfg = RewardConfig::default();
        let r = combined_reward(&b, &a, &cfg).unwrap();
        prop_assert!((0.0..=1.0).contains(&r.reward));
        prop_assert_eq!(combined_reward(&a, &a, &cfg).unwrap().reward, 1.0);
    }

    #[test]
    fn tokenize_is_idempotent(s in "\\PC{0,40}") {
        let once = tokenize_answer(&s);
        prop_assert_eq!(tokenize_answer(&once.join(" ")), once);
    }

    #[test]
    fn cue_normalization_is_idempotent(s in "[a-zA-Z<>/&;{}\\\\ \t\u{301}éi]{0,40}") {
        let once = normalize_cue_text(&s);
        prop_assert_eq!(normalize_cue_text(&once), once);
    }

    #[test]
    fn timestamps_round_trip(ms in 0u64..360_000_000) {
        prop_assert_eq!(parse_timestamp(&format_srt_timestamp(ms), SubtitleFormat::Srt), Some(ms));
        prop_assert_eq!(parse_timestamp(&format_vtt_timestamp(ms), SubtitleFormat::Vtt), Some(ms));
    }

    #[test]
    fn advantages_sum_to_zero(rewards in prop::collection::vec(0.0f64..2.0, 2..17)) {
        let a = compute_advantages(&rewards).unwrap();
        prop_assert!(a.iter().sum::<f64>().abs() <= 1e-9);
        let n = compute_normalized_advantages(&rewards).unwrap();
        prop_assert!(n.iter().sum::<f64>().abs() <= 1e-9);
    }

    #[test]
    fn advantages_scale_and_shift(rewards in prop::collection::vec(0.0f64..1.0, 2..17), c in 0.1f64..10.0, shift in -5.0f64..5.0) {
        let base = compute_advantages(&rewards).unwrap();
        let scaled = compute_advantages(&rewards.iter().map(|r| c * r).collect::<Vec<_>>()).unwrap();
        let shifted = compute_advantages(&rewards.iter().map(|r| r + shift).collect::<Vec<_>>()).unwrap();
        for ((b, s), t) in base.iter().zip(&scaled).zip(&shifted) {
            prop_assert!((c * b - s).abs() <= 1e-9);
            prop_assert!((b - t).abs() <= 1e-9);
        }
    }
}

const LINES: [&str; 12] = [
    "Where is the map?",
    "How many stars?",
    "Look at the river.",
    "Yeah!",
    "The big tree! Is it?",
    "That is nice, right?",
    "We go up the hill.",
    "Red.",
    "Which path do we take?",
    "Ok?",
    "Swiper, no swiping!",
    "One. Two. Three.",
];

fn random_transcript() -> impl Strategy<Value = CueList> {
    prop::collection::vec((0usize..LINES.len(), 300u64..3000, prop::sample::select(vec![0u64, 200, 900, 2500, 5000, 9000, 14000, 16000, 20000])), 1..40)
        .prop_map(|spec| {
            let mut t = 0;
            let cues = spec
                .into_iter()
                .map(|(line, dur, gap)| {
                    let c = Cue { index: 0, start_ms: t, end_ms: t + dur, text: LINES[line].into(), speaker: None };
                    t += dur + gap;
                    c
                })
                .collect();
            CueList::new("rnd", cues).unwrap()
        })
}

proptest! {
    #[test]
    fn extracted_examples_respect_the_rules(cues in random_transcript()) {
        let cfg = QpaConfig::default();
        let out = build_examples(&cues, &cfg);
        let mut pauses = BTreeSet::new();
        for e in &out.dataset.examples {
            let gap = e.pause.duration_ms();
            prop_assert!((cfg.pause_min_ms..=cfg.pause_max_ms).contains(&gap));
            prop_assert!(e.question.ends_with('?'));
            prop_assert!(!e.answer.is_empty() && !e.answer.ends_with('?'));
            prop_assert!(e.question_ts_ms <= e.pause.start_ms);
            prop_assert_eq!(e.frame_refs.len(), cfg.frame_sample_count);
            prop_assert_eq!(*e.frame_refs.last().unwrap(), e.question_ts_ms);
            prop_assert!(e.frame_refs.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(e.question_ts_ms - e.frame_refs[0] <= cfg.context_window_ms);
            prop_assert!(pauses.insert((e.pause.start_ms, e.pause.end_ms)));
            if e.context_text.is_empty() {
                prop_assert_eq!(e.modality, Modality::VisualOnly);
            }
        }
        let ids: BTreeSet<_> = out.dataset.examples.iter().map(|e| &e.question_id).collect();
        prop_assert_eq!(ids.len(), out.dataset.len());
    }
}

fn example(episode: usize, q: usize) -> QaExample {
    QaExample {
        episode_id: format!("ep{episode:03}"),
        question_id: format!("ep{episode:03}-q{q:04}"),
        question_ts_ms: 5_000,
        frame_refs: vec![5_000],
        context_text: String::new(),
        question: "where?".into(),
        pause: PauseSpan { start_ms: 5_000, end_ms: 8_000 },
        answer: "here".into(),
        category: Category::SpatialLocation,
        modality: Modality::VisualOnly,
        reasoning: Reasoning::Immediate,
    }
}

proptest! {
    #[test]
    fn splits_partition_by_episode(sizes in prop::collection::vec(1usize..5, 3..30), seed in any::<u64>()) {
        let examples = sizes.iter().enumerate().flat_map(|(e, &n)| (0..n).map(move |q| example(e, q))).collect();
        let d = Dataset::new(examples, "").unwrap();
        let s = split_dataset(&d, [0.8, 0.1, 0.1], seed).unwrap();
        prop_assert_eq!(s.train.len() + s.val.len() + s.test.len(), d.len());
        let eps = |x: &Dataset| x.episode_ids().into_iter().map(String::from).collect::<BTreeSet<_>>();
        let (a, b, c) = (eps(&s.train), eps(&s.val), eps(&s.test));
        prop_assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
        prop_assert_eq!(a.len() + b.len() + c.len(), sizes.len());
        for (got, ratio) in [(a.len(), 0.8), (b.len(), 0.1), (c.len(), 0.1)] {
            prop_assert!((got as f64 - ratio * sizes.len() as f64).abs() < 1.0 + 1e-9);
        }
        prop_assert_eq!(split_dataset(&d, [0.8, 0.1, 0.1], seed).unwrap(), s);
    }
}
