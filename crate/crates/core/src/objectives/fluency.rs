use rand::Rng;

use super::PROB_FLOOR;
use crate::error::{DartError, Result};
use crate::mlm::{TokenId, ToyMlmModel, Vocabulary};
use crate::prompt::{assemble_prompt, PromptSpec};
use crate::tensor::{Graph, Var};

/// A prompt whose input has one natural token masked and whose `[MASK]`
/// slot holds the gold class's label token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FluencySample {
    pub ids: Vec<TokenId>,
    pub target_id: TokenId,
    pub target_position: usize,
    pub gold_label_slot_id: TokenId,
    pub label_position: usize,
}

pub fn make_fluency_sample<R: Rng + ?Sized>(
    vocab: &Vocabulary,
    x_in: &[TokenId],
    gold: usize,
    spec: &PromptSpec,
    max_len: usize,
    rng: &mut R,
) -> Result<FluencySample> {
    if gold >= spec.n {
        return Err(DartError::Index {
            what: "gold class",
            index: gold,
            bound: spec.n,
        });
    }
    let prompt = assemble_prompt(x_in, spec, vocab, max_len)?;
    let candidates: Vec<usize> = prompt
        .input_span
        .clone()
        .filter(|&i| vocab.is_natural(prompt.ids[i]))
        .collect();
    if candidates.is_empty() {
        return Err(DartError::Validation(
            "fluency sample needs at least one natural input token".into(),
        ));
    }
    let target_position = candidates[rng.random_range(0..candidates.len())];
    let mut ids = prompt.ids;
    let target_id = ids[target_position];
    ids[target_position] = vocab.special().mask;
    let gold_label_slot_id = spec.label_slot_ids[gold];
    ids[prompt.mask_position] = gold_label_slot_id;
    Ok(FluencySample {
        ids,
        target_id,
        target_position,
        gold_label_slot_id,
        label_position: prompt.mask_position,
    })
}

/// `-log h(x^m | x', y)`: full-vocabulary softmax at the masked input
/// position, read at the original token.
pub fn fluency_loss(g: &mut Graph, model: &ToyMlmModel, sample: &FluencySample) -> Result<Var> {
    let h = model.encode(g, &sample.ids)?;
    let logits = model.decode_positions(g, h, &[sample.target_position])?;
    let probs = g.softmax_rows(logits)?;
    let p = g.pick_per_row(probs, &[sample.target_id])?;
    let logp = g.log_floor(p, PROB_FLOOR);
    let s = g.sum(logp);
    Ok(g.scale(s, -1.0))
}
