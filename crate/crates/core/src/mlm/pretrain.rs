use rand::Rng;
use serde::{Deserialize, Serialize};

use super::corpus::Corpus;
use super::model::ToyMlmModel;
use super::vocab::TokenId;
use crate::error::{DartError, Result};
use crate::rng::{SeedStreams, StreamRng};
use crate::tensor::{clip_grad_norm, AdamW, AdamWConfig, Graph, LinearWarmupDecay, Trainable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f32,
    #[serde(default = "default_mask_prob")]
    pub mask_prob: f32,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f32,
    #[serde(default = "default_warmup")]
    pub warmup_frac: f32,
    #[serde(default = "default_held_out")]
    pub held_out_frac: f32,
    pub seed: u64,
}

fn default_mask_prob() -> f32 {
    0.15
}
fn default_weight_decay() -> f32 {
    0.01
}
fn default_warmup() -> f32 {
    0.1
}
fn default_held_out() -> f32 {
    0.05
}

impl PretrainConfig {
    pub fn new(steps: usize, batch_size: usize, lr: f32, seed: u64) -> Self {
        Self {
            steps,
            batch_size,
            lr,
            mask_prob: default_mask_prob(),
            weight_decay: default_weight_decay(),
            warmup_frac: default_warmup(),
            held_out_frac: default_held_out(),
            seed,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PretrainHistory {
    /// Mean masked-token loss of each update's batch.
    pub step_losses: Vec<f32>,
    pub held_out_initial: Option<MaskedEval>,
    pub held_out_final: Option<MaskedEval>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskedEval {
    pub loss: f32,
    pub accuracy: f32,
}

/// `[CLS] sentence [SEP]` with each non-special sentence token independently
/// replaced by `[MASK]` at `mask_prob` (at least one per sentence).
pub fn mask_sentence(
    model: &ToyMlmModel,
    sentence: &[TokenId],
    mask_prob: f32,
    rng: &mut StreamRng,
) -> (Vec<TokenId>, Vec<(usize, TokenId)>) {
    let sp = model.vocab().special();
    let mut ids = Vec::with_capacity(sentence.len() + 2);
    ids.push(sp.cls);
    ids.extend_from_slice(sentence);
    ids.push(sp.sep);
    let maskable: Vec<usize> = (0..sentence.len())
        .filter(|&i| ![sp.pad, sp.cls, sp.sep, sp.mask].contains(&sentence[i]))
        .collect();
    let mut targets = Vec::new();
    for &i in &maskable {
        if rng.random::<f32>() < mask_prob {
            targets.push((i + 1, sentence[i]));
        }
    }
    if targets.is_empty() && !maskable.is_empty() {
        let i = maskable[rng.random_range(0..maskable.len())];
        targets.push((i + 1, sentence[i]));
    }
    for &(p, _) in &targets {
        ids[p] = sp.mask;
    }
    (ids, targets)
}

/// Held-out masked-token loss and accuracy under a fixed masking seed.
pub fn evaluate_masked(model: &ToyMlmModel, corpus: &Corpus, mask_prob: f32, seed: u64) -> Result<MaskedEval> {
    let mut rng = SeedStreams::new(seed).stream("held-out-mask");
    let mut total_loss = 0.0f64;
    let mut correct = 0usize;
    let mut count = 0usize;
    for s in corpus.sentences().iter().filter(|s| !s.is_empty()) {
        let (ids, targets) = mask_sentence(model, s, mask_prob, &mut rng);
        if targets.is_empty() {
            continue;
        }
        let mut g = Graph::new();
        let h = model.encode(&mut g, &ids)?;
        let positions: Vec<usize> = targets.iter().map(|t| t.0).collect();
        let logits = model.decode_positions(&mut g, h, &positions)?;
        let probs = g.softmax_rows(logits)?;
        for (r, &(_, target)) in targets.iter().enumerate() {
            let row = g.value(probs).row(r);
            total_loss -= f64::from(row[target].max(crate::objectives::PROB_FLOOR)).ln();
            if argmax(row) == target {
                correct += 1;
            }
            count += 1;
        }
    }
    if count == 0 {
        return Err(DartError::Validation("held-out slice has no tokens".into()));
    }
    Ok(MaskedEval {
        loss: (total_loss / count as f64) as f32,
        accuracy: correct as f32 / count as f32,
    })
}

pub(crate) fn argmax(xs: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// Masked-LM pre-training with AdamW, warmup/decay schedule and gradient
/// clipping at 1.0.
pub fn pretrain(model: &mut ToyMlmModel, corpus: &Corpus, config: &PretrainConfig) -> Result<PretrainHistory> {
    if corpus.is_empty() {
        return Err(DartError::Validation("pre-training corpus is empty".into()));
    }
    if config.batch_size == 0 {
        return Err(DartError::Config("batch_size must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&config.mask_prob) {
        return Err(DartError::Config("mask_prob must lie in [0, 1]".into()));
    }
    corpus.validate(model.config().vocab_size, model.config().max_len)?;
    if config.steps == 0 {
        return Ok(PretrainHistory::default());
    }

    let (train, held_out) = corpus.split_held_out(config.held_out_frac);
    let train = if train.is_empty() { corpus.clone() } else { train };
    let held_out_initial = if held_out.is_empty() {
        None
    } else {
        Some(evaluate_masked(model, &held_out, config.mask_prob, config.seed)?)
    };

    let streams = SeedStreams::new(config.seed);
    let mut batch_rng = streams.stream("pretrain-batch");
    let mut mask_rng = streams.stream("pretrain-mask");
    let schedule = LinearWarmupDecay::new(config.lr, config.steps, config.warmup_frac);
    let mut opt = AdamW::new(AdamWConfig {
        lr: config.lr,
        weight_decay: config.weight_decay,
        ..Default::default()
    });
    model.params_mut().set_all_trainable(Trainable::All);

    let sentences = train.sentences();
    let mut step_losses = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let mut g = Graph::new();
        let mut losses = Vec::with_capacity(config.batch_size);
        for _ in 0..config.batch_size {
            let s = &sentences[batch_rng.random_range(0..sentences.len())];
            if s.is_empty() {
                continue;
            }
            let (ids, targets) = mask_sentence(model, s, config.mask_prob, &mut mask_rng);
            if targets.is_empty() {
                continue;
            }
            losses.push(model.mlm_loss(&mut g, &ids, &targets)?);
        }
        if losses.is_empty() {
            continue;
        }
        let loss = g.mean_of(&losses)?;
        let value = g.value(loss).item();
        if !value.is_finite() {
            return Err(DartError::Numeric(format!(
                "non-finite pre-training loss at step {step}"
            )));
        }
        g.backward(loss)?;
        let store = model.params_mut();
        store.zero_grad();
        g.accumulate_param_grads(store);
        clip_grad_norm(store, 1.0);
        opt.step(store, schedule.lr_at(step))?;
        step_losses.push(value);
    }

    let held_out_final = if held_out.is_empty() {
        None
    } else {
        Some(evaluate_masked(model, &held_out, config.mask_prob, config.seed)?)
    };
    Ok(PretrainHistory {
        step_losses,
        held_out_initial,
        held_out_final,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlm::model::MlmConfig;
    use crate::mlm::vocab::build_vocab;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> ToyMlmModel {
        let vocab = build_vocab(&["[UNK]", "a", "b"], 2).unwrap();
        let mut cfg = MlmConfig::toy(vocab.len());
        cfg.d_model = 16;
        cfg.n_heads = 2;
        cfg.d_ff = 32;
        cfg.max_len = 16;
        ToyMlmModel::new(cfg, vocab, &mut ChaCha8Rng::seed_from_u64(1)).unwrap()
    }

    #[test]
    fn zero_steps_leave_model_unchanged() {
        let mut m = small();
        let before = m.params().checksum();
        let corpus = Corpus::cyclic(&[5, 6], 10, 8, 0);
        let h = pretrain(&mut m, &corpus, &PretrainConfig::new(0, 4, 1e-3, 0)).unwrap();
        assert!(h.step_losses.is_empty());
        assert_eq!(m.params().checksum(), before);
    }

    #[test]
    fn empty_corpus_rejected() {
        let mut m = small();
        let err = pretrain(&mut m, &Corpus::new(vec![]), &PretrainConfig::new(1, 1, 1e-3, 0));
        assert!(matches!(err, Err(DartError::Validation(_))));
    }

    #[test]
    fn masking_always_hits_a_token() {
        let m = small();
        let mut rng = SeedStreams::new(0).stream("t");
        for _ in 0..50 {
            let (ids, targets) = mask_sentence(&m, &[5, 6, 5], 0.0, &mut rng);
            assert_eq!(targets.len(), 1);
            assert_eq!(ids[targets[0].0], m.vocab().special().mask);
        }
    }
}
