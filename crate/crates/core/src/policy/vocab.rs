use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{PolicyError, TokenId};
use crate::dataset::Dataset;
use crate::reward::tokenize_answer;

pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";

/// Output vocabulary of a policy, including the reserved BOS / EOS symbols.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    bos: TokenId,
    eos: TokenId,
}

impl Vocab {
    /// `BOS`, `EOS`, then `words` in the given order.
    pub fn new<I, S>(words: I) -> Result<Self, PolicyError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut tokens = vec![BOS.to_string(), EOS.to_string()];
        tokens.extend(words.into_iter().map(Into::into));
        Self::from_tokens(tokens)
    }

    /// Builds a vocabulary from a complete token list that already contains
    /// the reserved symbols exactly once each.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, PolicyError> {
        if tokens.len() < 3 {
            return Err(PolicyError::InvalidVocab(format!("need at least 3 tokens, got {}", tokens.len())));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() {
                return Err(PolicyError::InvalidVocab(format!("empty token at position {i}")));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(PolicyError::InvalidVocab(format!("duplicate token {t:?}")));
            }
        }
        let bos = *index.get(BOS).ok_or_else(|| PolicyError::InvalidVocab("missing <bos>".into()))?;
        let eos = *index.get(EOS).ok_or_else(|| PolicyError::InvalidVocab("missing <eos>".into()))?;
        Ok(Self { tokens, index, bos, eos })
    }

    /// Every answer token in the dataset, sorted, after the reserved symbols.
    pub fn from_dataset(d: &Dataset) -> Result<Self, PolicyError> {
        let words: BTreeSet<String> = d.examples.iter().flat_map(|e| tokenize_answer(&e.answer)).collect();
        Self::new(words)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn bos(&self) -> TokenId {
        self.bos
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn is_reserved(&self, id: TokenId) -> bool {
        id == self.bos || id == self.eos
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Tokenizes `text` like the reward does and appends EOS. `None` if any
    /// word is outside the vocabulary.
    pub fn encode_answer(&self, text: &str) -> Option<Vec<TokenId>> {
        let mut ids = tokenize_answer(text)
            .iter()
            .map(|w| self.id(w).filter(|&id| !self.is_reserved(id)))
            .collect::<Option<Vec<_>>>()?;
        ids.push(self.eos);
        Some(ids)
    }

    /// Space-joined words; reserved symbols are dropped.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .filter(|&&id| !self.is_reserved(id))
            .filter_map(|&id| self.token(id))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = PolicyError;

    fn try_from(tokens: Vec<String>) -> Result<Self, Self::Error> {
        Self::from_tokens(tokens)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_rules() {
        let v = Vocab::new(["blue", "tree"]).unwrap();
        assert_eq!(v.len(), 4);
        assert_eq!((v.bos(), v.eos()), (0, 1));
        assert!(Vocab::new(Vec::<String>::new()).is_err());
        assert!(Vocab::new(["a", "a"]).is_err());
        assert!(Vocab::new(["a", EOS]).is_err());
        assert!(Vocab::from_tokens(vec!["a".into(), "b".into(), EOS.into()]).is_err());
    }

    #[test]
    fn encode_decode() {
        let v = Vocab::new(["blue", "tree"]).unwrap();
        assert_eq!(v.encode_answer("The blue tree!"), None);
        assert_eq!(v.encode_answer("Blue tree!"), Some(vec![2, 3, 1]));
        assert_eq!(v.encode_answer(""), Some(vec![1]));
        assert_eq!(v.decode(&[0, 2, 3, 1]), "blue tree");
    }
}
