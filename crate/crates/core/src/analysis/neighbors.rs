use serde::{Deserialize, Serialize};

use crate::mlm::{TokenId, ToyMlmModel};
use crate::prompt::PromptSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: TokenId,
    pub token: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotNeighbors {
    pub class: usize,
    pub slot_id: TokenId,
    /// The slot row is all zeros and has no direction to compare.
    pub zero_vector: bool,
    pub neighbors: Vec<Neighbor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborReport {
    pub k: usize,
    pub slots: Vec<SlotNeighbors>,
}

fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

/// Top-`k` natural words by cosine similarity to each label slot's
/// embedding row, most similar first, ties broken by lower id.
pub fn nearest_labels(model: &ToyMlmModel, spec: &PromptSpec, k: usize) -> NeighborReport {
    let vocab = model.vocab();
    let candidates: Vec<(TokenId, &[f32], f64)> = vocab
        .natural_range()
        .map(|id| {
            let row = model.embedding_row(id);
            (id, row, norm(row))
        })
        .collect();
    let slots = spec
        .label_slot_ids
        .iter()
        .enumerate()
        .map(|(class, &slot_id)| {
            let q = model.embedding_row(slot_id);
            let qn = norm(q);
            if qn == 0.0 {
                return SlotNeighbors {
                    class,
                    slot_id,
                    zero_vector: true,
                    neighbors: Vec::new(),
                };
            }
            let mut scored: Vec<(TokenId, f64)> = candidates
                .iter()
                .map(|&(id, row, rn)| {
                    let dot: f64 = q.iter().zip(row).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum();
                    let sim = if rn == 0.0 { 0.0 } else { dot / (qn * rn) };
                    (id, sim)
                })
                .collect();
            scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            scored.truncate(k);
            SlotNeighbors {
                class,
                slot_id,
                zero_vector: false,
                neighbors: scored
                    .into_iter()
                    .map(|(id, similarity)| Neighbor {
                        id,
                        token: vocab.token(id).unwrap_or_default().to_string(),
                        similarity,
                    })
                    .collect(),
            }
        })
        .collect();
    NeighborReport { k, slots }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::{build_prompt_spec, init_prompt_embeddings};
    use crate::tensor::gradcheck::tiny_model;
    use rand::SeedableRng;

    #[test]
    fn copy_init_top1_is_base_word() {
        let mut model = tiny_model();
        let v = model.vocab().clone();
        let spec = build_prompt_spec(&v, 2, 2, 1).unwrap();
        let labels = v.natural_ids(&["b", "e"]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        init_prompt_embeddings(&mut model, &spec, None, Some(&labels), &mut rng).unwrap();
        let r = nearest_labels(&model, &spec, 3);
        for (s, want) in r.slots.iter().zip(&labels) {
            assert_eq!(s.neighbors[0].id, *want);
            assert!((s.neighbors[0].similarity - 1.0).abs() < 1e-6);
            assert_eq!(s.neighbors.len(), 3);
            assert!(s.neighbors.windows(2).all(|w| w[0].similarity >= w[1].similarity));
        }
    }

    #[test]
    fn k_truncates_and_zero_row_is_flagged() {
        let mut model = tiny_model();
        let v = model.vocab().clone();
        let spec = build_prompt_spec(&v, 1, 2, 0).unwrap();
        model.embedding_row_mut(spec.label_slot_ids[0]).fill(0.0);
        let r = nearest_labels(&model, &spec, 1000);
        assert!(r.slots[0].zero_vector && r.slots[0].neighbors.is_empty());
        assert_eq!(r.slots[1].neighbors.len(), v.natural_range().len());
        assert!(r.slots[1].neighbors.iter().all(|n| v.is_natural(n.id)));
    }
}
