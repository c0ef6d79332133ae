//! Toy masked language model: vocabulary, synthetic corpus, encoder with a
//! tied decoder, masked-LM pre-training and checkpoints.

mod checkpoint;
mod corpus;
pub mod grammar;
mod model;
mod pretrain;
mod recipe;
mod vocab;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, Manifest, ParamEntry,
    FORMAT_VERSION, MAGIC,
};
pub use corpus::Corpus;
pub use model::{parameter_layout, MlmConfig, ToyMlmModel};
pub use pretrain::{evaluate_masked, mask_sentence, pretrain, MaskedEval, PretrainConfig, PretrainHistory};
pub use recipe::{
    default_stages, init_model, init_toy_model, pretrain_toy_lm, run_stages, CorpusSpec, PretrainStage,
    DEFAULT_RESERVED,
};
pub use vocab::{build_vocab, SpecialIds, TokenId, Vocabulary, CLS, MASK, PAD, SEP, UNK};
