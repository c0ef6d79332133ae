//! Synthetic benchmark tasks drawn from the pre-training grammar.
//!
//! * `easy`: an un-negated clause; the adjective's polarity is the label.
//! * `hard`: half the clauses are negated and the label is the effective
//!   polarity, an interaction between `not` and the adjective.
//! * `many`: eight topic classes named after noun groups.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Example;
use crate::error::{DartError, Result};
use crate::mlm::grammar::{natural_words, to_ids, Grammar, Polarity, NOUN_GROUPS};
use crate::mlm::{TokenId, Vocabulary};
use crate::rng::SeedStreams;

/// Seed of the task pools and test sets; episodes never change it.
pub const TASK_SEED: u64 = 2022;
pub const POOL_PER_CLASS: usize = 64;
pub const TEST_PER_CLASS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Easy,
    Hard,
    Many,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::Easy, TaskKind::Hard, TaskKind::Many];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Easy => "easy",
            TaskKind::Hard => "hard",
            TaskKind::Many => "many",
        }
    }

    pub fn n_classes(self) -> usize {
        match self {
            TaskKind::Easy | TaskKind::Hard => 2,
            TaskKind::Many => NOUN_GROUPS.len(),
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = DartError;

    fn from_str(s: &str) -> Result<Self> {
        TaskKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| DartError::Config(format!("unknown task {s:?}; expected easy, hard or many")))
    }
}

#[derive(Debug, Clone)]
pub struct Task {
    pub kind: TaskKind,
    pub class_names: Vec<String>,
    /// Natural-word template the prompt slots are initialized from.
    pub base_template: Vec<String>,
    pub mask_index: usize,
    /// One natural label word per class.
    pub base_labels: Vec<String>,
    pub pool: Vec<Example>,
    pub test: Vec<Example>,
}

fn sentence<R: Rng + ?Sized>(kind: TaskKind, class: usize, rng: &mut R) -> Vec<&'static str> {
    let polarity = |c: usize| if c == 1 { Polarity::Positive } else { Polarity::Negative };
    let mut words = match kind {
        TaskKind::Easy => {
            let group = rng.random_range(0..NOUN_GROUPS.len());
            Grammar::clause(rng, group, polarity(class), false)
        }
        TaskKind::Hard => {
            let group = rng.random_range(0..NOUN_GROUPS.len());
            let negated = rng.random_bool(0.5);
            let adjective = if negated {
                polarity(class).flip()
            } else {
                polarity(class)
            };
            Grammar::clause(rng, group, adjective, negated)
        }
        TaskKind::Many => {
            let pol = polarity(rng.random_range(0..2));
            let negated = rng.random_bool(0.3);
            Grammar::clause(rng, class, pol, negated)
        }
    };
    words.push(".");
    words
}

fn balanced<R: Rng + ?Sized>(kind: TaskKind, vocab: &Vocabulary, per_class: usize, rng: &mut R) -> Vec<Example> {
    let mut out = Vec::with_capacity(per_class * kind.n_classes());
    for _ in 0..per_class {
        for class in 0..kind.n_classes() {
            out.push(Example::new(to_ids(vocab, &sentence(kind, class, rng)), class));
        }
    }
    out
}

impl Task {
    pub fn generate(kind: TaskKind, vocab: &Vocabulary) -> Result<Task> {
        vocab.natural_ids(&natural_words())?;
        let streams = SeedStreams::new(TASK_SEED);
        let pool = balanced(
            kind,
            vocab,
            POOL_PER_CLASS,
            &mut streams.stream(&format!("{kind}-pool")),
        );
        let test = balanced(
            kind,
            vocab,
            TEST_PER_CLASS,
            &mut streams.stream(&format!("{kind}-test")),
        );
        let (class_names, base_template, base_labels): (Vec<&str>, Vec<&str>, Vec<&str>) = match kind {
            TaskKind::Easy | TaskKind::Hard => (
                vec!["negative", "positive"],
                vec!["it", "was", "."],
                vec!["terrible", "great"],
            ),
            TaskKind::Many => (
                NOUN_GROUPS.iter().map(|g| g.0).collect(),
                vec!["about", "the", "."],
                NOUN_GROUPS.iter().map(|g| g.1[0]).collect(),
            ),
        };
        let task = Task {
            kind,
            class_names: class_names.iter().map(|s| s.to_string()).collect(),
            base_template: base_template.iter().map(|s| s.to_string()).collect(),
            mask_index: 2,
            base_labels: base_labels.iter().map(|s| s.to_string()).collect(),
            pool,
            test,
        };
        task.base_template_ids(vocab)?;
        task.base_label_ids(vocab)?;
        Ok(task)
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn base_template_ids(&self, vocab: &Vocabulary) -> Result<Vec<TokenId>> {
        vocab.natural_ids(&self.base_template)
    }

    /// Base template of length `m` and its mask index: the last `m` words
    /// of the base template, or the base template padded by repeating its
    /// final word.
    pub fn template_words(&self, m: usize) -> (Vec<String>, usize) {
        let len = self.base_template.len();
        if m <= len {
            let dropped = len - m;
            let mask = self.mask_index.saturating_sub(dropped).min(m);
            (self.base_template[dropped..].to_vec(), mask)
        } else {
            let mut words = self.base_template.clone();
            let last = words.last().cloned().unwrap_or_else(|| ".".to_string());
            words.resize(m, last);
            (words, self.mask_index)
        }
    }

    pub fn base_label_ids(&self, vocab: &Vocabulary) -> Result<Vec<TokenId>> {
        vocab.natural_ids(&self.base_labels)
    }
}
