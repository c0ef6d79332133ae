use serde::{Deserialize, Serialize};

use crate::mlm::TokenId;

/// One labeled input: natural-token ids without `[CLS]`/`[SEP]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Example {
    pub input: Vec<TokenId>,
    pub label: usize,
}

impl Example {
    pub fn new(input: Vec<TokenId>, label: usize) -> Self {
        Self { input, label }
    }
}
