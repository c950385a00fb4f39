use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{validate_sequence, Policy, PolicyError, TokenId, Vocab};
use crate::dataset::QaExample;
use crate::hashing::seeded_str_hash;
use crate::reward::tokenize_answer;

/// Milliseconds per frame-timestamp bucket.
const FRAME_BUCKET_MS: u64 = 10_000;

/// Linear-softmax policy: `logits = W · [prompt_features ; onehot(prev)]`.
///
/// `W` has `vocab.len()` rows and `feature_dim + vocab.len()` columns and is
/// stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyLm {
    vocab: Vocab,
    feature_dim: usize,
    hash_seed: u64,
    weights: Vec<f64>,
}

/// Prompt features plus their contribution to every logit, computed once per
/// prompt so each decoding step only adds one column of `W`.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyPrompt {
    pub features: Vec<f64>,
    base_logits: Vec<f64>,
}

/// The token bag hashed for a prompt: question words, context words and
/// frame-timestamp buckets, each namespaced so they never collide by text.
pub fn prompt_tokens(example: &QaExample) -> Vec<String> {
    let mut out: Vec<String> = tokenize_answer(&example.question).into_iter().map(|w| format!("q:{w}")).collect();
    out.extend(tokenize_answer(&example.context_text).into_iter().map(|w| format!("c:{w}")));
    out.extend(example.frame_refs.iter().map(|ts| format!("f:{}", ts / FRAME_BUCKET_MS)));
    out
}

/// Signed feature hashing of [`prompt_tokens`] into `feature_dim` buckets,
/// L2-normalized. An empty bag gives the zero vector.
pub fn encode_prompt(example: &QaExample, feature_dim: usize, hash_seed: u64) -> Vec<f64> {
    let mut v = vec![0.0; feature_dim];
    for tok in prompt_tokens(example) {
        let h = seeded_str_hash(hash_seed, &tok);
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        v[(h % feature_dim as u64) as usize] += sign;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

fn softmax_in_place(logits: &mut [f64]) -> Result<(), PolicyError> {
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(PolicyError::NonFiniteLogits);
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in logits.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    logits.iter_mut().for_each(|x| *x /= sum);
    Ok(())
}

impl TinyLm {
    pub fn zeros(vocab: Vocab, feature_dim: usize, hash_seed: u64) -> Result<Self, PolicyError> {
        if feature_dim == 0 {
            return Err(PolicyError::InvalidShape("feature_dim must be positive".into()));
        }
        let n = vocab.len() * (feature_dim + vocab.len());
        Ok(Self { vocab, feature_dim, hash_seed, weights: vec![0.0; n] })
    }

    /// Weights drawn i.i.d. from N(0, scale^2).
    pub fn random(vocab: Vocab, feature_dim: usize, hash_seed: u64, scale: f64, seed: u64) -> Result<Self, PolicyError> {
        let mut lm = Self::zeros(vocab, feature_dim, hash_seed)?;
        let normal = Normal::new(0.0, scale).map_err(|e| PolicyError::InvalidShape(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        lm.weights.iter_mut().for_each(|w| *w = normal.sample(&mut rng));
        Ok(lm)
    }

    pub fn from_parts(vocab: Vocab, feature_dim: usize, hash_seed: u64, weights: Vec<f64>) -> Result<Self, PolicyError> {
        let mut lm = Self::zeros(vocab, feature_dim, hash_seed)?;
        if weights.len() != lm.weights.len() {
            return Err(PolicyError::InvalidShape(format!(
                "expected {} weights, got {}",
                lm.weights.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(PolicyError::InvalidShape("weights must be finite".into()));
        }
        lm.weights = weights;
        Ok(lm)
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn hash_seed(&self) -> u64 {
        self.hash_seed
    }

    pub fn rows(&self) -> usize {
        self.vocab.len()
    }

    pub fn cols(&self) -> usize {
        self.feature_dim + self.vocab.len()
    }

    /// Column of `W` that multiplies the one-hot of previous token `prev`.
    pub fn prev_col(&self, prev: TokenId) -> usize {
        self.feature_dim + prev
    }

    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.cols() + col]
    }

    pub fn set_weight(&mut self, row: usize, col: usize, value: f64) {
        let cols = self.cols();
        self.weights[row * cols + col] = value;
    }

    pub fn encode(&self, example: &QaExample) -> Vec<f64> {
        encode_prompt(example, self.feature_dim, self.hash_seed)
    }

    /// Prompt state for arbitrary features (length `feature_dim`).
    pub fn prompt_from_features(&self, features: Vec<f64>) -> Result<TinyPrompt, PolicyError> {
        if features.len() != self.feature_dim {
            return Err(PolicyError::InvalidShape(format!(
                "expected {} features, got {}",
                self.feature_dim,
                features.len()
            )));
        }
        let cols = self.cols();
        let base_logits = self
            .weights
            .chunks_exact(cols)
            .map(|row| row[..self.feature_dim].iter().zip(&features).map(|(w, f)| w * f).sum())
            .collect();
        Ok(TinyPrompt { features, base_logits })
    }

    fn probs(&self, prompt: &TinyPrompt, prev: TokenId, temperature: f64) -> Result<Vec<f64>, PolicyError> {
        if prev >= self.vocab.len() {
            return Err(PolicyError::InvalidToken(prev));
        }
        let col = self.prev_col(prev);
        let cols = self.cols();
        let mut logits: Vec<f64> =
            prompt.base_logits.iter().enumerate().map(|(j, b)| (b + self.weights[j * cols + col]) / temperature).collect();
        softmax_in_place(&mut logits)?;
        Ok(logits)
    }
}

impl Policy for TinyLm {
    type Prompt = TinyPrompt;

    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn prompt(&self, example: &QaExample) -> Result<TinyPrompt, PolicyError> {
        self.prompt_from_features(self.encode(example))
    }

    fn next_token_dist(&self, prompt: &TinyPrompt, prefix: &[TokenId], temperature: f64) -> Result<Vec<f64>, PolicyError> {
        let prev = prefix.last().copied().unwrap_or(self.vocab.bos());
        self.probs(prompt, prev, temperature)
    }

    fn token_logprobs(
        &self,
        prompt: &TinyPrompt,
        tokens: &[TokenId],
        weights_and_grad: Option<(&[f64], &mut [f64])>,
    ) -> Result<Vec<f64>, PolicyError> {
        validate_sequence(&self.vocab, tokens)?;
        let v = self.vocab.len();
        let cols = self.cols();
        let mut grad = weights_and_grad;
        if let Some((w, g)) = &grad {
            if w.len() != tokens.len() || g.len() != self.weights.len() {
                return Err(PolicyError::InvalidShape("gradient buffer or step weights have the wrong length".into()));
            }
        }
        // accumulated coefficient of the prompt features for each row
        let mut feat_coef = vec![0.0; v];
        let mut out = Vec::with_capacity(tokens.len());
        let mut prev = self.vocab.bos();
        for (t, &tok) in tokens.iter().enumerate() {
            let p = self.probs(prompt, prev, 1.0)?;
            out.push(p[tok].ln());
            if let Some((w, g)) = grad.as_mut() {
                let wt = w[t];
                if wt != 0.0 {
                    let col = self.prev_col(prev);
                    for j in 0..v {
                        let d = wt * (f64::from(u8::from(j == tok)) - p[j]);
                        feat_coef[j] += d;
                        g[j * cols + col] += d;
                    }
                }
            }
            prev = tok;
        }
        if let Some((_, g)) = grad {
            for (j, c) in feat_coef.iter().enumerate() {
                if *c != 0.0 {
                    let row = &mut g[j * cols..j * cols + self.feature_dim];
                    row.iter_mut().zip(&prompt.features).for_each(|(gk, f)| *gk += c * f);
                }
            }
        }
        Ok(out)
    }

    fn params(&self) -> &[f64] {
        &self.weights
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::tests::example;

    fn vocab() -> Vocab {
        Vocab::new(["blue", "tree", "left"]).unwrap()
    }

    #[test]
    fn zero_weights_are_uniform() {
        let lm = TinyLm::zeros(vocab(), 8, 0).unwrap();
        let ex = example("ep", 0, "blue", crate::dataset::Category::KnowledgeRecall);
        let prompt = lm.prompt(&ex).unwrap();
        let p = lm.next_token_dist(&prompt, &[0], 1.0).unwrap();
        for x in p {
            assert!((x - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn huge_temperature_is_nearly_uniform() {
        let lm = TinyLm::random(vocab(), 8, 0, 0.5, 11).unwrap();
        let ex = example("ep", 0, "blue", crate::dataset::Category::KnowledgeRecall);
        let prompt = lm.prompt(&ex).unwrap();
        let p = lm.next_token_dist(&prompt, &[0, 2], 1e6).unwrap();
        assert!(p.iter().all(|x| (x - 0.2).abs() < 1e-6));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_single_token_gradient() {
        let v = Vocab::new(["a", "b"]).unwrap();
        let lm = TinyLm::zeros(v, 4, 3).unwrap();
        let prompt = lm.prompt_from_features(vec![0.5, -0.5, 0.5, 0.5]).unwrap();
        // a lone EOS is a valid one-token sequence
        let (lp, g) = lm.sequence_logprob_and_grad(&prompt, &[1]).unwrap();
        assert!((lp - (0.25f64).ln()).abs() < 1e-15);
        for row in 0..4 {
            let coef = if row == 1 { 0.75 } else { -0.25 };
            for k in 0..4 {
                assert!((g[row * lm.cols() + k] - coef * prompt.features[k]).abs() < 1e-15);
            }
            assert!((g[row * lm.cols() + lm.prev_col(0)] - coef).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_bad_sequences() {
        let lm = TinyLm::zeros(vocab(), 4, 0).unwrap();
        let prompt = lm.prompt_from_features(vec![0.0; 4]).unwrap();
        assert_eq!(lm.token_logprobs(&prompt, &[9, 1], None), Err(PolicyError::InvalidToken(9)));
        assert_eq!(lm.token_logprobs(&prompt, &[0, 1], None), Err(PolicyError::InvalidToken(0)));
        assert_eq!(lm.token_logprobs(&prompt, &[2], None), Err(PolicyError::NotEosTerminated));
        assert_eq!(lm.token_logprobs(&prompt, &[], None), Err(PolicyError::NotEosTerminated));
    }

    #[test]
    fn non_finite_logits() {
        let mut lm = TinyLm::zeros(vocab(), 2, 0).unwrap();
        lm.set_weight(2, 0, f64::INFINITY);
        let prompt = lm.prompt_from_features(vec![1.0, 0.0]).unwrap();
        assert_eq!(lm.next_token_dist(&prompt, &[0], 1.0), Err(PolicyError::NonFiniteLogits));
    }

    #[test]
    fn encoding_is_normalized_and_seeded() {
        let ex = example("ep", 0, "blue", crate::dataset::Category::KnowledgeRecall);
        let a = encode_prompt(&ex, 32, 1);
        let b = encode_prompt(&ex, 32, 2);
        assert!((a.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(a, encode_prompt(&ex, 32, 1));
        assert_ne!(a, b);
        let mut empty = ex.clone();
        empty.question.clear();
        empty.context_text.clear();
        empty.frame_refs.clear();
        assert_eq!(encode_prompt(&empty, 8, 1), vec![0.0; 8]);
    }
}
