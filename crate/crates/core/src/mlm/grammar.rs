//! Seeded probabilistic grammar over short review-like sentences.
//!
//! A clause is always five words, `the|this NOUN VERB MOD ADJ`, with MOD
//! either `not` or an intensifier. Most sentences pair a clause with a second
//! segment after `[SEP]` (a summary `it was ADJ .`, a verdict, a topic
//! mention) that agrees with the clause's effective polarity or topic, which
//! is the same layout a prompt uses: `[CLS] input [SEP] template [SEP]`.
//!
//! Pre-training runs in two stages. The warmup corpus is dense agreement
//! sentences where the summary usually repeats the clause adjective; the
//! main corpus mixes every sentence kind with negation.

use rand::seq::IndexedRandom;
use rand::Rng;

use super::corpus::Corpus;
use super::vocab::{build_vocab, TokenId, Vocabulary, SEP, UNK};
use crate::error::Result;

pub const NOUN_GROUPS: [(&str, [&str; 3]); 8] = [
    ("film", ["movie", "film", "show"]),
    ("book", ["book", "story", "novel"]),
    ("music", ["song", "album", "band"]),
    ("food", ["meal", "food", "dish"]),
    ("drink", ["coffee", "tea", "wine"]),
    ("lodging", ["hotel", "room", "bed"]),
    ("tech", ["phone", "camera", "laptop"]),
    ("vehicle", ["car", "bike", "truck"]),
];

pub const POSITIVE: [&str; 12] = [
    "great",
    "good",
    "wonderful",
    "excellent",
    "amazing",
    "fun",
    "lovely",
    "brilliant",
    "superb",
    "fantastic",
    "enjoyable",
    "perfect",
];

pub const NEGATIVE: [&str; 12] = [
    "terrible",
    "bad",
    "awful",
    "boring",
    "horrible",
    "poor",
    "dull",
    "weak",
    "dreadful",
    "lousy",
    "mediocre",
    "disappointing",
];

pub const NEUTRAL: [&str; 8] = ["new", "old", "big", "small", "cheap", "long", "short", "red"];
pub const VERBS: [&str; 5] = ["was", "is", "seemed", "felt", "looked"];
pub const INTENSIFIERS: [&str; 5] = ["very", "really", "quite", "so", "truly"];
pub const FUNCTION_WORDS: [&str; 19] = [
    "the", "a", "this", "it", "and", "but", "not", "i", "think", "overall", "honestly", ".", "about", "like", "my",
    "we", "loved", "hated", "saw",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Polarity {
    Negative,
    Positive,
}

impl Polarity {
    pub fn flip(self) -> Self {
        match self {
            Polarity::Negative => Polarity::Positive,
            Polarity::Positive => Polarity::Negative,
        }
    }

    pub fn class_index(self) -> usize {
        match self {
            Polarity::Negative => 0,
            Polarity::Positive => 1,
        }
    }

    pub fn words(self) -> &'static [&'static str; 12] {
        match self {
            Polarity::Negative => &NEGATIVE,
            Polarity::Positive => &POSITIVE,
        }
    }

    fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        if rng.random_bool(0.5) {
            Polarity::Positive
        } else {
            Polarity::Negative
        }
    }
}

/// Every natural word the grammar can emit, plus `[UNK]`.
pub fn natural_words() -> Vec<&'static str> {
    let mut words = vec![UNK];
    for (_, nouns) in NOUN_GROUPS {
        words.extend(nouns);
    }
    words.extend(POSITIVE);
    words.extend(NEGATIVE);
    words.extend(NEUTRAL);
    words.extend(VERBS);
    words.extend(INTENSIFIERS);
    words.extend(FUNCTION_WORDS);
    words
}

pub fn vocabulary(reserved_count: usize) -> Result<Vocabulary> {
    build_vocab(&natural_words(), reserved_count)
}

/// Word-level sentence builder shared by corpus and task generation.
#[derive(Debug, Clone, Copy)]
pub struct Grammar;

impl Grammar {
    pub fn noun<R: Rng + ?Sized>(rng: &mut R, group: usize) -> &'static str {
        NOUN_GROUPS[group].1.choose(rng).unwrap()
    }

    pub fn adjective<R: Rng + ?Sized>(rng: &mut R, polarity: Polarity) -> &'static str {
        polarity.words().choose(rng).unwrap()
    }

    /// `the|this NOUN VERB MOD ADJ`, where MOD is `not` when negated and an
    /// intensifier otherwise.
    pub fn clause<R: Rng + ?Sized>(rng: &mut R, group: usize, adjective: Polarity, negated: bool) -> Vec<&'static str> {
        let det = if rng.random_bool(0.7) { "the" } else { "this" };
        let noun = Self::noun(rng, group);
        let verb = *VERBS.choose(rng).unwrap();
        let modifier = if negated {
            "not"
        } else {
            INTENSIFIERS.choose(rng).unwrap()
        };
        vec![det, noun, verb, modifier, Self::adjective(rng, adjective)]
    }

    /// Un-negated clause plus a summary that repeats the clause adjective
    /// 80% of the time and otherwise picks another of the same polarity.
    pub fn warmup_sentence<R: Rng + ?Sized>(rng: &mut R) -> Vec<&'static str> {
        let group = rng.random_range(0..NOUN_GROUPS.len());
        let pol = Polarity::random(rng);
        let mut s = Self::clause(rng, group, pol, false);
        let summary = if rng.random_bool(0.8) {
            s[4]
        } else {
            Self::adjective(rng, pol)
        };
        s.extend([".", SEP, "it", "was", summary, "."]);
        s
    }

    /// One main-corpus sentence.
    pub fn corpus_sentence<R: Rng + ?Sized>(rng: &mut R) -> Vec<&'static str> {
        let group = rng.random_range(0..NOUN_GROUPS.len());
        let pol = Polarity::random(rng);
        let negated = rng.random_bool(0.4);
        let effective = if negated { pol.flip() } else { pol };
        let mut s = Vec::new();
        match rng.random_range(0..100) {
            0..=44 => {
                s.extend(Self::clause(rng, group, pol, negated));
                let summary = if negated || rng.random_bool(0.5) {
                    Self::adjective(rng, effective)
                } else {
                    s[4]
                };
                s.extend([".", SEP, "it", "was", summary, "."]);
            }
            45..=54 => {
                s.extend(Self::clause(rng, group, pol, false));
                s.extend(["and", Self::adjective(rng, pol), "."]);
            }
            55..=59 => {
                s.extend(Self::clause(rng, group, pol, false));
                s.push("but");
                let other = rng.random_range(0..NOUN_GROUPS.len());
                s.extend(Self::clause(rng, other, pol.flip(), false));
                s.push(".");
            }
            60..=74 => {
                s.extend(Self::clause(rng, group, pol, negated));
                let verb = match effective {
                    Polarity::Positive => "loved",
                    Polarity::Negative => "hated",
                };
                s.extend([".", SEP, "i", verb, "it", "."]);
            }
            75..=82 => {
                s.extend(Self::clause(rng, group, pol, negated));
                s.extend([".", SEP, "overall", "i", "think", "it", "was"]);
                s.extend([Self::adjective(rng, effective), "."]);
            }
            83..=89 => {
                s.extend(["we", "saw", "the", Self::noun(rng, group), "and", "the"]);
                s.extend([Self::noun(rng, group), "."]);
            }
            90..=96 => {
                s.extend(Self::clause(rng, group, pol, negated));
                s.extend([".", SEP, "about", "the", Self::noun(rng, group), "."]);
            }
            _ => {
                s.extend(["honestly", "my", Self::noun(rng, group), VERBS.choose(rng).unwrap()]);
                s.extend([NEUTRAL.choose(rng).unwrap(), "."]);
            }
        }
        s
    }

    pub fn corpus<R: Rng + ?Sized>(vocab: &Vocabulary, rng: &mut R, sentences: usize) -> Corpus {
        let sentences = (0..sentences)
            .map(|_| to_ids(vocab, &Self::corpus_sentence(rng)))
            .collect();
        Corpus::new(sentences)
    }

    pub fn warmup_corpus<R: Rng + ?Sized>(vocab: &Vocabulary, rng: &mut R, sentences: usize) -> Corpus {
        let sentences = (0..sentences)
            .map(|_| to_ids(vocab, &Self::warmup_sentence(rng)))
            .collect();
        Corpus::new(sentences)
    }
}

pub fn to_ids(vocab: &Vocabulary, words: &[&str]) -> Vec<TokenId> {
    words
        .iter()
        .map(|w| vocab.id(w).expect("grammar word missing from vocabulary"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn vocabulary_covers_grammar() {
        let v = vocabulary(100).unwrap();
        assert!((150..=500).contains(&v.len()));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let corpus = Grammar::corpus(&v, &mut rng, 500);
        corpus.validate(v.len(), 64).unwrap();
        let sep = v.special().sep;
        assert!(corpus
            .sentences()
            .iter()
            .flatten()
            .all(|&id| v.is_natural(id) || id == sep));
    }

    #[test]
    fn clauses_have_fixed_length_and_agreeing_summaries() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let pol = Polarity::random(&mut rng);
            let negated = rng.random_bool(0.5);
            let c = Grammar::clause(&mut rng, 2, pol, negated);
            assert_eq!(c.len(), 5);
            assert_eq!(c[3] == "not", negated);
            assert!(pol.words().contains(&c[4]));

            let w = Grammar::warmup_sentence(&mut rng);
            let clause_pol = if POSITIVE.contains(&w[4]) { POSITIVE } else { NEGATIVE };
            assert!(clause_pol.contains(&w[9]));
        }
    }

    #[test]
    fn corpus_is_seeded() {
        let v = vocabulary(8).unwrap();
        let a = Grammar::corpus(&v, &mut ChaCha8Rng::seed_from_u64(3), 50);
        let b = Grammar::corpus(&v, &mut ChaCha8Rng::seed_from_u64(3), 50);
        assert_eq!(a, b);
    }
}
