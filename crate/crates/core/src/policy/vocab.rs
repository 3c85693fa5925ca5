use std::collections::{BTreeSet, HashMap};

use sha2::{Digest, Sha256};

use crate::grammar::TAGS;
use crate::tasks::{TaskRegistry, RANGE_WORDS};

pub const BOS: usize = 0;
pub const EOS: usize = 1;
/// Id of the first tag token; the six tags follow in [`TAGS`] order.
pub const FIRST_TAG: usize = 2;
pub const BOS_TOKEN: &str = "<bos>";
pub const EOS_TOKEN: &str = "<eos>";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VocabError {
    #[error("vocabulary must start with <bos>, <eos> and the six tags")]
    MissingSpecials,
    #[error("duplicate token {0:?}")]
    Duplicate(String),
    #[error("token {0:?} is empty or contains whitespace")]
    BadToken(String),
    #[error("unknown token {token:?} at word {index}")]
    Unknown { token: String, index: usize },
}

/// Dense token table. Tags are single tokens; everything else is a
/// whitespace-free word.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// `tokens` must begin with `<bos>`, `<eos>` and the six tags in order.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, VocabError> {
        let specials = [BOS_TOKEN, EOS_TOKEN].into_iter().chain(TAGS);
        if tokens.len() < 8 || !specials.zip(&tokens).all(|(a, b)| a == b) {
            return Err(VocabError::MissingSpecials);
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(VocabError::BadToken(t.clone()));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(VocabError::Duplicate(t.clone()));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    /// Specials, then every class label in registry order, then the sorted
    /// reasoning words, then the sorted extension words.
    pub fn for_registry(registry: &TaskRegistry) -> Self {
        let mut tokens: Vec<String> = [BOS_TOKEN, EOS_TOKEN]
            .into_iter()
            .chain(TAGS)
            .map(String::from)
            .collect();
        let mut seen: BTreeSet<String> = tokens.iter().cloned().collect();
        let mut push = |tokens: &mut Vec<String>, w: &str| {
            if seen.insert(w.to_string()) {
                tokens.push(w.to_string());
            }
        };
        for spec in &registry.tasks {
            for c in &spec.classes {
                push(&mut tokens, c);
            }
        }
        let mut reasoning: BTreeSet<&str> = RANGE_WORDS.into_iter().collect();
        let mut extension = BTreeSet::new();
        for spec in &registry.tasks {
            reasoning.extend(spec.evidence.values().flatten().map(String::as_str));
            for r in spec.rubric.values() {
                extension.extend(r.keywords.iter().map(String::as_str));
                extension.extend(r.depth_markers.iter().map(String::as_str));
                for phrase in &r.generic_phrases {
                    extension.extend(phrase.split_whitespace());
                }
            }
        }
        for w in reasoning.into_iter().chain(extension) {
            push(&mut tokens, w);
        }
        Vocabulary::from_tokens(tokens).expect("registry words are valid tokens")
    }

    /// Specials plus `extra` placeholder words `w0`, `w1`, … (for tests).
    pub fn synthetic(size: usize) -> Self {
        let mut tokens: Vec<String> = [BOS_TOKEN, EOS_TOKEN]
            .into_iter()
            .chain(TAGS)
            .map(String::from)
            .collect();
        let extra = size.saturating_sub(tokens.len());
        tokens.extend((0..extra).map(|i| format!("w{i}")));
        Vocabulary::from_tokens(tokens).expect("synthetic tokens are valid")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn is_tag(&self, id: usize) -> bool {
        (FIRST_TAG..FIRST_TAG + TAGS.len()).contains(&id)
    }

    /// SHA-256 over the newline-joined token list.
    pub fn fingerprint(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        h.finalize().into()
    }

    /// Splits text into tag tokens and whitespace-separated words and appends
    /// `<eos>`.
    pub fn tokenize(&self, text: &str) -> Result<Vec<usize>, VocabError> {
        let mut out = Vec::new();
        let mut words = 0;
        let mut rest = text;
        while !rest.is_empty() {
            let tag = TAGS
                .iter()
                .enumerate()
                .filter_map(|(i, t)| rest.find(t).map(|p| (p, i)))
                .min();
            let (before, after) = match tag {
                Some((p, i)) => (&rest[..p], Some((i, &rest[p + TAGS[i].len()..]))),
                None => (rest, None),
            };
            for w in before.split_whitespace() {
                let id = self.id(w).filter(|&id| id > EOS && !self.is_tag(id));
                out.push(id.ok_or_else(|| VocabError::Unknown {
                    token: w.to_string(),
                    index: words,
                })?);
                words += 1;
            }
            match after {
                Some((i, r)) => {
                    out.push(FIRST_TAG + i);
                    rest = r;
                }
                None => break,
            }
        }
        out.push(EOS);
        Ok(out)
    }

    /// Renders tokens up to the first `<eos>`. Tags are glued to their
    /// neighbours; adjacent words are separated by one space.
    pub fn detokenize(&self, ids: &[usize]) -> String {
        let mut out = String::new();
        let mut prev_word = false;
        for &id in ids {
            if id == EOS {
                break;
            }
            let is_word = !self.is_tag(id);
            if is_word && prev_word {
                out.push(' ');
            }
            out.push_str(&self.tokens[id]);
            prev_word = is_word;
        }
        out
    }
}
