use super::vocab::TokenId;
use crate::error::{DartError, Result};

/// Token-id sentences used for masked-LM pre-training.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    sentences: Vec<Vec<TokenId>>,
}

impl Corpus {
    pub fn new(sentences: Vec<Vec<TokenId>>) -> Self {
        Self { sentences }
    }

    /// Sentences cycling deterministically through `tokens`
    /// (`a b a b ...` for two tokens), each starting at a random phase.
    pub fn cyclic(tokens: &[TokenId], count: usize, len: usize, phase_seed: u64) -> Self {
        let mut state = phase_seed;
        let sentences = (0..count)
            .map(|_| {
                // splitmix64 step for the starting phase
                state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
                let mut z = state;
                z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
                z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
                let start = (z ^ (z >> 31)) as usize % tokens.len();
                (0..len).map(|i| tokens[(start + i) % tokens.len()]).collect()
            })
            .collect();
        Self { sentences }
    }

    pub fn sentences(&self) -> &[Vec<TokenId>] {
        &self.sentences
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Split off the last `frac` of sentences as a held-out slice.
    pub fn split_held_out(&self, frac: f32) -> (Corpus, Corpus) {
        let held = ((self.sentences.len() as f32) * frac).round() as usize;
        let cut = self.sentences.len() - held.min(self.sentences.len());
        (
            Corpus::new(self.sentences[..cut].to_vec()),
            Corpus::new(self.sentences[cut..].to_vec()),
        )
    }

    /// Every id below `vocab_size`; no sentence longer than `max_len - 2`
    /// so `[CLS] ... [SEP]` always fits.
    pub fn validate(&self, vocab_size: usize, max_len: usize) -> Result<()> {
        for (i, s) in self.sentences.iter().enumerate() {
            if let Some(&bad) = s.iter().find(|&&id| id >= vocab_size) {
                return Err(DartError::Validation(format!(
                    "sentence {i} has id {bad} outside vocabulary of {vocab_size}"
                )));
            }
            if s.len() + 2 > max_len {
                return Err(DartError::Validation(format!(
                    "sentence {i} has {} tokens; limit is {}",
                    s.len(),
                    max_len.saturating_sub(2)
                )));
            }
        }
        Ok(())
    }
}
