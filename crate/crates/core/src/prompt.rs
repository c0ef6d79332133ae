//! Prompt layout `[CLS] x [SEP] template [SEP]`, where template and label
//! tokens live in reserved vocabulary rows and are trained like any other
//! embedding row. Class scores are read at the single `[MASK]`.

use std::collections::BTreeSet;
use std::ops::Range;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{DartError, Result};
use crate::mlm::{TokenId, ToyMlmModel, Vocabulary};
use crate::tensor::{Graph, Var};

/// Standard deviation of random slot initialization.
pub const SLOT_INIT_STD: f32 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptLayout {
    ClsInputSepTemplateSep,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptSpec {
    /// Template length, not counting `[MASK]`.
    pub m: usize,
    /// Number of classes.
    pub n: usize,
    pub template_slot_ids: Vec<TokenId>,
    pub label_slot_ids: Vec<TokenId>,
    /// Position of `[MASK]` among the template tokens, `0..=m`.
    pub mask_index_in_template: usize,
    pub layout: PromptLayout,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedPrompt {
    pub ids: Vec<TokenId>,
    pub mask_position: usize,
    pub input_span: Range<usize>,
}

/// First `m` reserved ids become template slots, the next `n` label slots.
pub fn build_prompt_spec(vocab: &Vocabulary, m: usize, n: usize, mask_index: usize) -> Result<PromptSpec> {
    let reserved = vocab.reserved_range();
    if reserved.len() < m + n {
        return Err(DartError::Capacity(format!(
            "prompt needs {} reserved ids (m={m} + n={n}) but the vocabulary has {}",
            m + n,
            reserved.len()
        )));
    }
    let template_slot_ids: Vec<TokenId> = reserved.clone().take(m).collect();
    let label_slot_ids: Vec<TokenId> = reserved.skip(m).take(n).collect();
    let spec = PromptSpec {
        m,
        n,
        template_slot_ids,
        label_slot_ids,
        mask_index_in_template: mask_index,
        layout: PromptLayout::ClsInputSepTemplateSep,
    };
    spec.validate(vocab)?;
    Ok(spec)
}

impl PromptSpec {
    /// Structural checks. Slots may be natural tokens (fixed-prompt
    /// variants) but never special ones.
    pub fn validate(&self, vocab: &Vocabulary) -> Result<()> {
        if self.n < 2 {
            return Err(DartError::Validation(format!(
                "need at least 2 classes, got {}",
                self.n
            )));
        }
        if self.template_slot_ids.len() != self.m || self.label_slot_ids.len() != self.n {
            return Err(DartError::Validation(format!(
                "slot counts {}+{} do not match m={} n={}",
                self.template_slot_ids.len(),
                self.label_slot_ids.len(),
                self.m,
                self.n
            )));
        }
        if self.mask_index_in_template > self.m {
            return Err(DartError::Validation(format!(
                "mask index {} outside 0..={}",
                self.mask_index_in_template, self.m
            )));
        }
        for &id in self.template_slot_ids.iter().chain(&self.label_slot_ids) {
            if !(vocab.is_reserved(id) || vocab.is_natural(id)) {
                return Err(DartError::Validation(format!("slot id {id} is not a usable token")));
            }
        }
        let labels: BTreeSet<_> = self.label_slot_ids.iter().collect();
        if labels.len() != self.n {
            return Err(DartError::Validation("label slots must be distinct".into()));
        }
        let reserved_template: BTreeSet<_> = self
            .template_slot_ids
            .iter()
            .filter(|&&id| vocab.is_reserved(id))
            .collect();
        if reserved_template.iter().any(|id| labels.contains(*id)) {
            return Err(DartError::Validation("template and label slots overlap".into()));
        }
        Ok(())
    }

    /// Swap the template slots for fixed natural tokens.
    pub fn with_fixed_template(mut self, vocab: &Vocabulary, ids: &[TokenId]) -> Result<Self> {
        if ids.len() != self.m || ids.iter().any(|&id| !vocab.is_natural(id)) {
            return Err(DartError::Validation(format!(
                "fixed template must be {} natural tokens",
                self.m
            )));
        }
        self.template_slot_ids = ids.to_vec();
        self.validate(vocab)?;
        Ok(self)
    }

    /// Swap the label slots for fixed natural label words.
    pub fn with_fixed_labels(mut self, vocab: &Vocabulary, ids: &[TokenId]) -> Result<Self> {
        if ids.len() != self.n || ids.iter().any(|&id| !vocab.is_natural(id)) {
            return Err(DartError::Validation(format!(
                "fixed labels must be {} natural tokens",
                self.n
            )));
        }
        self.label_slot_ids = ids.to_vec();
        self.validate(vocab)?;
        Ok(self)
    }

    /// Reserved rows the prompt owns; these are the only rows trained in
    /// the prompt-only phase.
    pub fn reserved_rows(&self, vocab: &Vocabulary) -> BTreeSet<TokenId> {
        self.template_slot_ids
            .iter()
            .chain(&self.label_slot_ids)
            .copied()
            .filter(|&id| vocab.is_reserved(id))
            .collect()
    }

    /// Template tokens with `[MASK]` inserted.
    pub fn template_with_mask(&self, mask: TokenId) -> Vec<TokenId> {
        let mut t = self.template_slot_ids.clone();
        t.insert(self.mask_index_in_template, mask);
        t
    }

    /// Fixed cost of a prompt: `[CLS]`, two `[SEP]`, template and `[MASK]`.
    pub fn overhead(&self) -> usize {
        self.m + 4
    }

    /// Check that the spec can drive `model`: every slot id fits its vocabulary.
    pub fn check_model(&self, model: &ToyMlmModel) -> Result<()> {
        let v = model.vocab().len();
        if let Some(&id) = self
            .template_slot_ids
            .iter()
            .chain(&self.label_slot_ids)
            .find(|&&id| id >= v)
        {
            return Err(DartError::Mismatch(format!(
                "prompt slot {id} is outside the model vocabulary of {v}"
            )));
        }
        self.validate(model.vocab())
            .map_err(|e| DartError::Mismatch(e.to_string()))
    }
}

/// `[CLS] x [SEP] template [SEP]`. Inputs longer than the budget are cut
/// from the right; the template is never truncated.
pub fn assemble_prompt(
    x_in: &[TokenId],
    spec: &PromptSpec,
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<EncodedPrompt> {
    let overhead = spec.overhead();
    if overhead > max_len {
        return Err(DartError::Length {
            len: overhead,
            max: max_len,
        });
    }
    let sp = vocab.special();
    let keep = x_in.len().min(max_len - overhead);
    let mut ids = Vec::with_capacity(keep + overhead);
    ids.push(sp.cls);
    ids.extend_from_slice(&x_in[..keep]);
    ids.push(sp.sep);
    let template_start = ids.len();
    ids.extend(spec.template_with_mask(sp.mask));
    ids.push(sp.sep);
    Ok(EncodedPrompt {
        ids,
        mask_position: template_start + spec.mask_index_in_template,
        input_span: 1..1 + keep,
    })
}

/// Copy base token rows into the reserved slots, or draw them from
/// N(0, 0.02²) when no base is given. For label slots the tied decoder bias
/// entry is copied along with the row. Natural-token slots are left alone.
pub fn init_prompt_embeddings<R: Rng + ?Sized>(
    model: &mut ToyMlmModel,
    spec: &PromptSpec,
    base_template: Option<&[TokenId]>,
    base_labels: Option<&[TokenId]>,
    rng: &mut R,
) -> Result<()> {
    if let Some(b) = base_template {
        if b.len() != spec.m {
            return Err(DartError::Validation(format!(
                "base template has {} tokens, expected {}",
                b.len(),
                spec.m
            )));
        }
    }
    if let Some(b) = base_labels {
        if b.len() != spec.n {
            return Err(DartError::Validation(format!(
                "base labels have {} tokens, expected {}",
                b.len(),
                spec.n
            )));
        }
    }
    let normal = Normal::new(0.0f32, SLOT_INIT_STD).expect("positive std");
    let groups = [
        (&spec.template_slot_ids, base_template, false),
        (&spec.label_slot_ids, base_labels, true),
    ];
    for (slots, base, is_label) in groups {
        for (i, &slot) in slots.iter().enumerate() {
            if !model.vocab().is_reserved(slot) {
                continue;
            }
            match base {
                Some(b) => {
                    let row = model.embedding_row(b[i]).to_vec();
                    model.embedding_row_mut(slot).copy_from_slice(&row);
                    if is_label {
                        let bias = model.decoder_bias_id();
                        let data = model.params_mut().value_mut(bias).data_mut();
                        data[slot] = data[b[i]];
                    }
                }
                None => {
                    for v in model.embedding_row_mut(slot) {
                        *v = normal.sample(rng);
                    }
                }
            }
        }
    }
    Ok(())
}

/// Unnormalized label-slot probabilities `[1 × n]`: full-vocabulary
/// softmax at `[MASK]`, read at each label slot.
pub fn label_slot_probs(g: &mut Graph, model: &ToyMlmModel, prompt: &EncodedPrompt, spec: &PromptSpec) -> Result<Var> {
    let h = model.encode(g, &prompt.ids)?;
    label_slot_probs_from_hidden(g, model, h, prompt.mask_position, spec)
}

pub(crate) fn label_slot_probs_from_hidden(
    g: &mut Graph,
    model: &ToyMlmModel,
    hidden: Var,
    mask_position: usize,
    spec: &PromptSpec,
) -> Result<Var> {
    let logits = model.decode_positions(g, hidden, &[mask_position])?;
    let probs = g.softmax_rows(logits)?;
    g.select_cols(probs, &spec.label_slot_ids)
}

/// Class distribution `[1 × n]`: label-slot probabilities renormalized
/// over the classes.
pub fn class_probs(g: &mut Graph, model: &ToyMlmModel, prompt: &EncodedPrompt, spec: &PromptSpec) -> Result<Var> {
    let raw = label_slot_probs(g, model, prompt, spec)?;
    g.normalize_rows(raw)
}

pub fn class_scores(model: &ToyMlmModel, prompt: &EncodedPrompt, spec: &PromptSpec) -> Result<Vec<f32>> {
    let mut g = Graph::new();
    let p = class_probs(&mut g, model, prompt, spec)?;
    Ok(g.value(p).data().to_vec())
}

/// Scores before renormalization; entry j is `p([MASK] = label_j)`.
pub fn raw_label_scores(model: &ToyMlmModel, prompt: &EncodedPrompt, spec: &PromptSpec) -> Result<Vec<f32>> {
    let mut g = Graph::new();
    let p = label_slot_probs(&mut g, model, prompt, spec)?;
    Ok(g.value(p).data().to_vec())
}

/// Class scores for verbalizers with several words per class: each class
/// sums the `[MASK]` probabilities of its words. Scoring only.
pub fn verbalizer_scores(mask_probs: &[f32], verbalizer: &[Vec<TokenId>]) -> Vec<f32> {
    verbalizer
        .iter()
        .map(|words| words.iter().map(|&w| mask_probs[w]).sum())
        .collect()
}
