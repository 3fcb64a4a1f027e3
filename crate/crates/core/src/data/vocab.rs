use std::collections::{HashMap, HashSet};

use crate::data::race::RawExample;
use crate::data::text::tokenize;
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::from_tokens(Vec::<String>::new()).expect("empty vocabulary")
    }
}

impl Vocabulary {
    /// Builds a vocabulary from non-reserved tokens in index order (indices
    /// start at 2). Duplicates and reserved names are rejected.
    pub fn from_tokens<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Result<Self> {
        let mut v = Vocabulary {
            tokens: vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()],
            index: HashMap::new(),
        };
        v.index.insert(PAD_TOKEN.to_string(), PAD);
        v.index.insert(UNK_TOKEN.to_string(), UNK);
        for t in tokens {
            let t = t.into();
            if v.index.contains_key(&t) {
                return Err(Error::Validation(format!(
                    "duplicate vocabulary entry {t:?}"
                )));
            }
            v.index.insert(t.clone(), v.tokens.len());
            v.tokens.push(t);
        }
        Ok(v)
    }

    /// Every token including the two reserved entries, in index order.
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    pub fn lookup(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Index of `token`, falling back to UNK.
    pub fn get(&self, token: &str) -> usize {
        match self.index.get(token) {
            Some(&i) if i != PAD => i,
            _ => UNK,
        }
    }

    pub fn token(&self, index: usize) -> &str {
        self.tokens.get(index).map_or(UNK_TOKEN, String::as_str)
    }
}

/// Counts tokens over articles (each distinct article once), questions and
/// options. Tokens seen at least `min_count` times are indexed by descending
/// frequency, ties broken lexicographically.
pub fn build_vocab(examples: &[RawExample], min_count: usize) -> Result<Vocabulary> {
    if min_count == 0 {
        return Err(Error::Config("min_count must be at least 1".into()));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    let mut seen_articles = HashSet::new();
    let mut add = |text: &str| {
        for t in tokenize(text) {
            *counts.entry(t).or_default() += 1;
        }
    };
    for ex in examples {
        if seen_articles.insert(ex.article_id.as_str()) {
            add(&ex.article);
        }
        add(&ex.question);
        for o in &ex.options {
            add(o);
        }
    }
    let mut kept: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(t, c)| *c >= min_count && t != PAD_TOKEN && t != UNK_TOKEN)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Vocabulary::from_tokens(kept.into_iter().map(|(t, _)| t))
}
