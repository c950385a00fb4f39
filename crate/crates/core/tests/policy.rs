use std::fs;
use std::path::Path;

use qpa_grpo::dataset::{Category, Modality, PauseSpan, QaExample, Reasoning};
use qpa_grpo::policy::{encode_prompt, prompt_tokens, sample_group, Policy, SamplingConfig, TinyLm, Vocab};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

fn example(question: &str, context: &str, frames: Vec<u64>) -> QaExample {
    QaExample {
        episode_id: "ep".into(),
        question_id: format!("ep-{}", question.len()),
        question_ts_ms: frames.last().copied().unwrap_or(0),
        frame_refs: frames,
        context_text: context.into(),
        question: question.into(),
        pause: PauseSpan { start_ms: 0, end_ms: 3000 },
        answer: "blue".into(),
        category: Category::KnowledgeRecall,
        modality: Modality::Multimodal,
        reasoning: Reasoning::Immediate,
    }
}

#[derive(Deserialize)]
struct OracleCase {
    question: String,
    context: String,
    frames: Vec<u64>,
    dim: usize,
    seed: u64,
    tokens: Vec<String>,
    vector: Vec<f64>,
}

#[test]
fn feature_hashing_matches_the_scripted_oracle() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/hashing_oracle.json");
    let cases: Vec<OracleCase> = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    assert_eq!(cases.len(), 4);
    for c in cases {
        let e = example(&c.question, &c.context, c.frames);
        assert_eq!(prompt_tokens(&e), c.tokens);
        let v = encode_prompt(&e, c.dim, c.seed);
        assert_eq!(v.len(), c.vector.len());
        for (a, b) in v.iter().zip(&c.vector) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
    }
}

fn random_sequence(rng: &mut ChaCha8Rng, vocab: &Vocab) -> Vec<usize> {
    let len = rng.random_range(0..5);
    let mut seq: Vec<usize> = (0..len).map(|_| rng.random_range(2..vocab.len())).collect();
    seq.push(vocab.eos());
    seq
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let words: Vec<String> = (0..rng.random_range(2..6)).map(|i| format!("w{i}")).collect();
        let vocab = Vocab::new(words).unwrap();
        let dim = rng.random_range(2..6);
        let mut lm = TinyLm::random(vocab.clone(), dim, case, 0.7, case).unwrap();
        let e = example("where is the ball?", "the ball rolls", vec![1000, 9000]);
        let seq = random_sequence(&mut rng, &vocab);
        let prompt = lm.prompt(&e).unwrap();
        let (_, grad) = lm.sequence_logprob_and_grad(&prompt, &seq).unwrap();
        for i in 0..lm.num_params() {
            let orig = lm.params()[i];
            lm.params_mut()[i] = orig + eps;
            let up = lm.sequence_logprob_and_grad(&lm.prompt(&e).unwrap(), &seq).unwrap().0;
            lm.params_mut()[i] = orig - eps;
            let down = lm.sequence_logprob_and_grad(&lm.prompt(&e).unwrap(), &seq).unwrap().0;
            lm.params_mut()[i] = orig;
            let fd = (up - down) / (2.0 * eps);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-3);
            worst = worst.max(rel);
        }
    }
    assert!(worst <= 1e-5, "max relative error {worst:e}");
}

#[test]
fn recorded_logprob_matches_rescoring_without_nucleus() {
    let vocab = Vocab::new(["red", "blue", "green"]).unwrap();
    let lm = TinyLm::random(vocab, 8, 1, 0.8, 2).unwrap();
    let e = example("what color?", "", vec![]);
    let cfg = SamplingConfig { top_p: 1.0, ..SamplingConfig::default() };
    let prompt = lm.prompt(&e).unwrap();
    for g in sample_group(&lm, &e, 16, &cfg, 9).unwrap() {
        let lp: f64 = lm.token_logprobs(&prompt, &g.tokens, None).unwrap().iter().sum();
        assert!((lp - g.logprob).abs() <= 1e-12, "{lp} vs {}", g.logprob);
    }
}

#[test]
fn groups_are_reproducible_and_seed_dependent() {
    let vocab = Vocab::new(["a", "b", "c", "d"]).unwrap();
    let lm = TinyLm::random(vocab, 8, 0, 0.5, 3).unwrap();
    let e = example("which one?", "", vec![]);
    let cfg = SamplingConfig::default();
    let a = sample_group(&lm, &e, 8, &cfg, 11).unwrap();
    assert_eq!(a, sample_group(&lm, &e, 8, &cfg, 11).unwrap());
    assert_ne!(a, sample_group(&lm, &e, 8, &cfg, 12).unwrap());
}

#[test]
fn a_peaked_policy_always_says_blue() {
    let vocab = Vocab::new(["red", "blue"]).unwrap();
    let blue = vocab.id("blue").unwrap();
    let mut lm = TinyLm::zeros(vocab.clone(), 4, 0).unwrap();
    lm.set_weight(blue, lm.prev_col(vocab.bos()), 12.0);
    lm.set_weight(vocab.eos(), lm.prev_col(blue), 12.0);
    let e = example("what color is the sky?", "", vec![]);
    let p = lm.prompt(&e).unwrap();
    assert!(lm.next_token_dist(&p, &[vocab.bos()], 1.0).unwrap()[blue] >= 0.99);
    for g in sample_group(&lm, &e, 4, &SamplingConfig::default(), 0).unwrap() {
        assert_eq!(g.text, "blue");
    }
}

#[test]
fn checkpoints_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let lm = TinyLm::random(Vocab::new(["x", "y", "zé"]).unwrap(), 5, 77, 1.0, 5).unwrap();
    let path = dir.path().join("p.tlm");
    lm.save(&path).unwrap();
    let back = TinyLm::load(&path).unwrap();
    assert_eq!(back, lm);
    let mut bytes = fs::read(&path).unwrap();
    bytes.truncate(bytes.len() - 3);
    fs::write(&path, bytes).unwrap();
    assert!(TinyLm::load(&path).is_err());
}
