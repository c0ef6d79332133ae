use std::collections::BTreeSet;

use sha2::{Digest, Sha256};

use super::Tensor;
use crate::error::{DartError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Which part of a parameter receives gradients and updates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Trainable {
    All,
    Frozen,
    /// Only the listed rows of a 2-D parameter.
    Rows(BTreeSet<usize>),
}

#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Option<Vec<f32>>,
    pub trainable: Trainable,
    /// Exempt from decoupled weight decay (biases, layer-norm affine terms).
    pub no_decay: bool,
}

impl Parameter {
    fn row_width(&self) -> usize {
        match self.value.shape() {
            [_, c] => *c,
            _ => self.value.numel(),
        }
    }

    /// Is element `i` of the flat buffer trainable?
    pub fn is_trainable_at(&self, i: usize) -> bool {
        match &self.trainable {
            Trainable::All => true,
            Trainable::Frozen => false,
            Trainable::Rows(rows) => rows.contains(&(i / self.row_width())),
        }
    }

    /// Flat index ranges that are trainable.
    pub fn trainable_ranges(&self) -> Vec<std::ops::Range<usize>> {
        match &self.trainable {
            Trainable::All => std::iter::once(0..self.value.numel()).collect(),
            Trainable::Frozen => Vec::new(),
            Trainable::Rows(rows) => {
                let w = self.row_width();
                rows.iter().map(|&r| r * w..(r + 1) * w).collect()
            }
        }
    }
}

/// Registry of every trainable tensor of a model; each parameter appears
/// exactly once and is addressed by a stable id.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, value: Tensor, no_decay: bool) -> Result<ParamId> {
        if self.find(name).is_some() {
            return Err(DartError::Validation(format!("parameter `{name}` registered twice")));
        }
        self.params.push(Parameter {
            name: name.to_string(),
            value,
            grad: None,
            trainable: Trainable::All,
            no_decay,
        });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn names(&self) -> Vec<String> {
        self.params.iter().map(|p| p.name.clone()).collect()
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: Trainable) {
        self.params[id.0].trainable = trainable;
    }

    pub fn set_all_trainable(&mut self, trainable: Trainable) {
        for p in &mut self.params {
            p.trainable = trainable.clone();
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Add `grad` into the stored gradient, restricted to trainable entries.
    pub fn accumulate_grad(&mut self, id: ParamId, grad: &[f32]) {
        let p = &mut self.params[id.0];
        if p.trainable == Trainable::Frozen {
            return;
        }
        let ranges = p.trainable_ranges();
        let buf = p.grad.get_or_insert_with(|| vec![0.0; grad.len()]);
        for range in ranges {
            for i in range {
                buf[i] += grad[i];
            }
        }
    }

    /// Copy every value out so it can be restored later.
    pub fn snapshot(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Tensor]) {
        for (p, v) in self.params.iter_mut().zip(snapshot) {
            p.value = v.clone();
        }
    }

    /// SHA-256 over the raw bytes of the selected parameter entries.
    /// `skip_rows` excludes rows of 2-D parameters from the digest.
    pub fn checksum_excluding(&self, skip: &dyn Fn(ParamId, usize) -> bool) -> String {
        let mut hasher = Sha256::new();
        for (id, p) in self.iter() {
            hasher.update(p.name.as_bytes());
            let width = p.row_width();
            for (i, v) in p.value.data().iter().enumerate() {
                if !skip(id, i / width) {
                    hasher.update(v.to_le_bytes());
                }
            }
        }
        hex::encode(hasher.finalize())
    }

    pub fn checksum(&self) -> String {
        self.checksum_excluding(&|_, _| false)
    }
}
