use std::collections::BTreeMap;
use std::sync::Mutex;

use rand::seq::SliceRandom;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::data::Example;
use crate::error::{DartError, Result};
use crate::rng::SeedStreams;

/// The seeds every reported number is averaged over.
pub const DEFAULT_SEEDS: [u64; 5] = [13, 21, 42, 87, 100];

/// `k` training and `k` dev examples per class, disjoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Episode {
    pub k: usize,
    pub seed: u64,
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
}

impl Episode {
    /// SHA-256 of the serialized split.
    pub fn checksum(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("episode serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

/// Uniform per-class sampling without replacement from the `episode`
/// stream of `seed`; dev comes from what training left over.
pub fn sample_k_shot(pool: &[Example], n_classes: usize, k: usize, seed: u64) -> Result<Episode> {
    if k == 0 {
        return Err(DartError::Config("K must be at least 1".into()));
    }
    let mut rng = SeedStreams::new(seed).stream("episode");
    let mut train = Vec::with_capacity(k * n_classes);
    let mut dev = Vec::with_capacity(k * n_classes);
    for class in 0..n_classes {
        let mut idx: Vec<usize> = (0..pool.len()).filter(|&i| pool[i].label == class).collect();
        if idx.len() < 2 * k {
            return Err(DartError::Capacity(format!(
                "class {class} has {} examples, K={k} needs {}",
                idx.len(),
                2 * k
            )));
        }
        idx.shuffle(&mut rng);
        train.extend(idx[..k].iter().map(|&i| pool[i].clone()));
        dev.extend(idx[k..2 * k].iter().map(|&i| pool[i].clone()));
    }
    Ok(Episode { k, seed, train, dev })
}

/// Held-out examples behind an access log: each `(method, seed)` may read
/// them once, after model selection.
#[derive(Debug)]
pub struct TestSet {
    examples: Vec<Example>,
    reads: Mutex<BTreeMap<(String, u64), usize>>,
}

impl TestSet {
    pub fn new(examples: Vec<Example>) -> Self {
        Self {
            examples,
            reads: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn read(&self, method: &str, seed: u64) -> Result<&[Example]> {
        let mut reads = self.reads.lock().expect("test log poisoned");
        let n = reads.entry((method.to_string(), seed)).or_insert(0);
        if *n > 0 {
            return Err(DartError::Contract(format!(
                "test set already read for method {method} seed {seed}"
            )));
        }
        *n += 1;
        Ok(&self.examples)
    }

    pub fn access_log(&self) -> BTreeMap<(String, u64), usize> {
        self.reads.lock().expect("test log poisoned").clone()
    }
}
