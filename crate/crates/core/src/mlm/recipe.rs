use std::fs;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::corpus::Corpus;
use super::grammar::{self, Grammar};
use super::model::{MlmConfig, ToyMlmModel};
use super::pretrain::{pretrain, PretrainConfig, PretrainHistory};
use super::vocab::Vocabulary;
use crate::error::{DartError, Result};
use crate::rng::SeedStreams;

/// Reserved `[unusedN]` rows in the default vocabulary.
pub const DEFAULT_RESERVED: usize = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CorpusSpec {
    /// Main grammar corpus.
    Grammar { sentences: usize, seed: u64 },
    /// Dense agreement corpus for the first curriculum stage.
    Warmup { sentences: usize, seed: u64 },
    /// Deterministic cycle through the listed words.
    Cyclic {
        tokens: Vec<String>,
        sentences: usize,
        len: usize,
        seed: u64,
    },
    /// One whitespace-tokenized sentence per non-empty line.
    File { path: PathBuf },
}

impl CorpusSpec {
    pub fn build(&self, vocab: &Vocabulary) -> Result<Corpus> {
        match self {
            CorpusSpec::Grammar { sentences, seed } => {
                let mut rng = SeedStreams::new(*seed).stream("corpus-grammar");
                Ok(Grammar::corpus(vocab, &mut rng, *sentences))
            }
            CorpusSpec::Warmup { sentences, seed } => {
                let mut rng = SeedStreams::new(*seed).stream("corpus-warmup");
                Ok(Grammar::warmup_corpus(vocab, &mut rng, *sentences))
            }
            CorpusSpec::Cyclic {
                tokens,
                sentences,
                len,
                seed,
            } => {
                if tokens.is_empty() {
                    return Err(DartError::Config("cyclic corpus needs at least one token".into()));
                }
                let ids = vocab.natural_ids(tokens)?;
                Ok(Corpus::cyclic(&ids, *sentences, *len, *seed))
            }
            CorpusSpec::File { path } => {
                let text = fs::read_to_string(path)?;
                let sentences = text
                    .lines()
                    .map(|l| vocab.encode(l))
                    .filter(|s| !s.is_empty())
                    .collect();
                Ok(Corpus::new(sentences))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainStage {
    pub corpus: CorpusSpec,
    pub train: PretrainConfig,
}

/// Warmup stage (1000 steps at 3e-3 on dense agreement sentences) followed
/// by the main stage (2000 steps at 1e-3 on the full grammar).
pub fn default_stages(seed: u64) -> Vec<PretrainStage> {
    vec![
        PretrainStage {
            corpus: CorpusSpec::Warmup { sentences: 5000, seed },
            train: PretrainConfig::new(1000, 32, 3e-3, seed),
        },
        PretrainStage {
            corpus: CorpusSpec::Grammar {
                sentences: 20_000,
                seed,
            },
            train: PretrainConfig::new(2000, 32, 1e-3, seed.wrapping_add(1)),
        },
    ]
}

pub fn run_stages(model: &mut ToyMlmModel, stages: &[PretrainStage]) -> Result<Vec<PretrainHistory>> {
    let mut out = Vec::with_capacity(stages.len());
    for (i, stage) in stages.iter().enumerate() {
        let corpus = stage.corpus.build(model.vocab())?;
        log::info!(
            "pre-training stage {i}: {} sentences, {} steps",
            corpus.len(),
            stage.train.steps
        );
        out.push(pretrain(model, &corpus, &stage.train)?);
    }
    Ok(out)
}

/// Fresh default-size model over the grammar vocabulary, initialized from
/// the `init` stream of `seed`.
pub fn init_toy_model(seed: u64) -> Result<ToyMlmModel> {
    let vocab = grammar::vocabulary(DEFAULT_RESERVED)?;
    let config = MlmConfig::toy(vocab.len());
    init_model(config, vocab, seed)
}

pub fn init_model(config: MlmConfig, vocab: Vocabulary, seed: u64) -> Result<ToyMlmModel> {
    let mut rng = SeedStreams::new(seed).stream("init");
    ToyMlmModel::new(config, vocab, &mut rng)
}

/// The stand-in pretrained LM used by the harness: default model plus the
/// default curriculum.
pub fn pretrain_toy_lm(seed: u64) -> Result<(ToyMlmModel, Vec<PretrainHistory>)> {
    let mut model = init_toy_model(seed)?;
    let history = run_stages(&mut model, &default_stages(seed))?;
    Ok((model, history))
}
