use std::collections::HashMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{DartError, Result};

pub type TokenId = usize;

pub const PAD: &str = "[PAD]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";
pub const UNK: &str = "[UNK]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecialIds {
    pub pad: TokenId,
    pub cls: TokenId,
    pub sep: TokenId,
    pub mask: TokenId,
}

/// Token table laid out as `[PAD] [CLS] [SEP] [MASK]`, the natural tokens,
/// then a block of reserved `[unusedN]` slots at the end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "VocabRepr", try_from = "VocabRepr")]
pub struct Vocabulary {
    tokens: Vec<String>,
    natural_count: usize,
    reserved_count: usize,
    unk: Option<TokenId>,
    index: HashMap<String, TokenId>,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    natural: Vec<String>,
    reserved_count: usize,
}

impl From<Vocabulary> for VocabRepr {
    fn from(v: Vocabulary) -> Self {
        VocabRepr {
            natural: v.natural_tokens().to_vec(),
            reserved_count: v.reserved_count,
        }
    }
}

impl TryFrom<VocabRepr> for Vocabulary {
    type Error = DartError;

    fn try_from(r: VocabRepr) -> Result<Self> {
        build_vocab(&r.natural, r.reserved_count)
    }
}

const NUM_SPECIAL: usize = 4;

pub fn build_vocab<S: AsRef<str>>(natural_tokens: &[S], reserved_count: usize) -> Result<Vocabulary> {
    if reserved_count == 0 {
        return Err(DartError::Validation("reserved_count must be at least 1".into()));
    }
    let mut tokens: Vec<String> = [PAD, CLS, SEP, MASK].iter().map(|s| s.to_string()).collect();
    let mut index = HashMap::new();
    for (i, t) in tokens.iter().enumerate() {
        index.insert(t.clone(), i);
    }
    for t in natural_tokens {
        let t = t.as_ref();
        if t.is_empty() || t.chars().any(char::is_whitespace) {
            return Err(DartError::Validation(format!("invalid natural token {t:?}")));
        }
        if index.contains_key(t) {
            return Err(DartError::Validation(format!("duplicate natural token {t:?}")));
        }
        index.insert(t.to_string(), tokens.len());
        tokens.push(t.to_string());
    }
    for r in 1..=reserved_count {
        let name = format!("[unused{r}]");
        if index.contains_key(&name) {
            return Err(DartError::Validation(format!(
                "natural token {name:?} collides with a reserved slot"
            )));
        }
        index.insert(name.clone(), tokens.len());
        tokens.push(name);
    }
    let unk = index.get(UNK).copied();
    Ok(Vocabulary {
        tokens,
        natural_count: natural_tokens.len(),
        reserved_count,
        unk,
        index,
    })
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn special(&self) -> SpecialIds {
        SpecialIds {
            pad: 0,
            cls: 1,
            sep: 2,
            mask: 3,
        }
    }

    pub fn natural_range(&self) -> Range<TokenId> {
        NUM_SPECIAL..NUM_SPECIAL + self.natural_count
    }

    pub fn reserved_range(&self) -> Range<TokenId> {
        let start = NUM_SPECIAL + self.natural_count;
        start..start + self.reserved_count
    }

    pub fn natural_tokens(&self) -> &[String] {
        &self.tokens[self.natural_range()]
    }

    pub fn is_natural(&self, id: TokenId) -> bool {
        self.natural_range().contains(&id)
    }

    pub fn is_reserved(&self, id: TokenId) -> bool {
        self.reserved_range().contains(&id)
    }

    pub fn unk_id(&self) -> Option<TokenId> {
        self.unk
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Whitespace split, lowercased. Unknown words become `[UNK]`, or are
    /// dropped when the vocabulary has no `[UNK]` token.
    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        text.split_whitespace()
            .filter_map(|w| self.id(&w.to_lowercase()).or(self.unk))
            .collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or("[?]"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Resolve natural words to ids, failing on anything unknown or non-natural.
    pub fn natural_ids<S: AsRef<str>>(&self, words: &[S]) -> Result<Vec<TokenId>> {
        words
            .iter()
            .map(|w| {
                let w = w.as_ref();
                self.id(w)
                    .filter(|&id| self.is_natural(id))
                    .ok_or_else(|| DartError::Validation(format!("unknown natural token {w:?}")))
            })
            .collect()
    }
}
