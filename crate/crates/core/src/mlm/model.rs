use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::vocab::{TokenId, Vocabulary};
use crate::error::{DartError, Result};
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlmConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_len: usize,
    pub d_ff: usize,
    #[serde(default = "default_ln_eps")]
    pub ln_eps: f32,
    #[serde(default = "default_init_std")]
    pub init_std: f32,
}

fn default_ln_eps() -> f32 {
    1e-5
}

fn default_init_std() -> f32 {
    0.02
}

impl MlmConfig {
    /// d=64, 2 layers, 4 heads, 64 positions.
    pub fn toy(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            max_len: 64,
            d_ff: 128,
            ln_eps: default_ln_eps(),
            init_std: default_init_std(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.d_model == 0 || self.max_len == 0 || self.d_ff == 0 {
            return Err(DartError::Config("model dimensions must be positive".into()));
        }
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(DartError::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.ln_eps.is_nan() || self.ln_eps <= 0.0 {
            return Err(DartError::Config("ln_eps must be positive".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Debug, Clone)]
struct LayerParams {
    qkv_w: ParamId,
    qkv_b: ParamId,
    out_w: ParamId,
    out_b: ParamId,
    ln1_gain: ParamId,
    ln1_bias: ParamId,
    ff1_w: ParamId,
    ff1_b: ParamId,
    ff2_w: ParamId,
    ff2_b: ParamId,
    ln2_gain: ParamId,
    ln2_bias: ParamId,
}

/// Pre-norm transformer encoder with learned absolute positions and an
/// output decoder tied to the word-embedding table.
#[derive(Debug, Clone)]
pub struct ToyMlmModel {
    config: MlmConfig,
    vocab: Vocabulary,
    params: ParamStore,
    embed: ParamId,
    pos: ParamId,
    emb_ln_gain: ParamId,
    emb_ln_bias: ParamId,
    layers: Vec<LayerParams>,
    final_ln_gain: ParamId,
    final_ln_bias: ParamId,
    decoder_bias: ParamId,
}

/// Parameter names in registration order for a given config.
pub fn parameter_layout(config: &MlmConfig) -> Vec<(String, Vec<usize>, bool)> {
    let (v, d, f) = (config.vocab_size, config.d_model, config.d_ff);
    let mut out = vec![
        ("embed.word".to_string(), vec![v, d], false),
        ("embed.pos".to_string(), vec![config.max_len, d], false),
        ("embed.ln.gain".to_string(), vec![d], true),
        ("embed.ln.bias".to_string(), vec![d], true),
    ];
    for l in 0..config.n_layers {
        let p = |n: &str| format!("layers.{l}.{n}");
        out.extend([
            (p("attn.qkv.w"), vec![d, 3 * d], false),
            (p("attn.qkv.b"), vec![3 * d], true),
            (p("attn.out.w"), vec![d, d], false),
            (p("attn.out.b"), vec![d], true),
            (p("ln1.gain"), vec![d], true),
            (p("ln1.bias"), vec![d], true),
            (p("ffn.w1"), vec![d, f], false),
            (p("ffn.b1"), vec![f], true),
            (p("ffn.w2"), vec![f, d], false),
            (p("ffn.b2"), vec![d], true),
            (p("ln2.gain"), vec![d], true),
            (p("ln2.bias"), vec![d], true),
        ]);
    }
    out.extend([
        ("final.ln.gain".to_string(), vec![d], true),
        ("final.ln.bias".to_string(), vec![d], true),
        ("decoder.bias".to_string(), vec![v], true),
    ]);
    out
}

impl ToyMlmModel {
    pub fn new<R: Rng + ?Sized>(config: MlmConfig, vocab: Vocabulary, rng: &mut R) -> Result<Self> {
        config.validate()?;
        if vocab.len() != config.vocab_size {
            return Err(DartError::Config(format!(
                "vocab has {} tokens but config.vocab_size is {}",
                vocab.len(),
                config.vocab_size
            )));
        }
        let normal = Normal::new(0.0f32, config.init_std).map_err(|e| DartError::Config(format!("init_std: {e}")))?;
        let mut store = ParamStore::new();
        for (name, shape, no_decay) in parameter_layout(&config) {
            let numel: usize = shape.iter().product();
            let data = if name.ends_with(".gain") {
                vec![1.0; numel]
            } else if no_decay {
                vec![0.0; numel]
            } else {
                (0..numel).map(|_| normal.sample(rng)).collect()
            };
            store.register(&name, Tensor::new(shape, data)?, no_decay)?;
        }
        Self::from_store(config, vocab, store)
    }

    /// Bind a model to an existing registry, checking every expected
    /// parameter is present with the right shape. Extra parameters (e.g. a
    /// classifier head) are kept.
    pub fn from_store(config: MlmConfig, vocab: Vocabulary, store: ParamStore) -> Result<Self> {
        config.validate()?;
        let lookup = |name: &str, shape: &[usize]| -> Result<ParamId> {
            let id = store
                .find(name)
                .ok_or_else(|| DartError::Mismatch(format!("missing parameter `{name}`")))?;
            if store.value(id).shape() != shape {
                return Err(DartError::Mismatch(format!(
                    "parameter `{name}` has shape {:?}, expected {shape:?}",
                    store.value(id).shape()
                )));
            }
            Ok(id)
        };
        let layout = parameter_layout(&config);
        let mut ids = Vec::with_capacity(layout.len());
        for (name, shape, _) in &layout {
            ids.push(lookup(name, shape)?);
        }
        let mut it = ids.into_iter();
        let mut next = || it.next().expect("layout length");
        let embed = next();
        let pos = next();
        let emb_ln_gain = next();
        let emb_ln_bias = next();
        let layers = (0..config.n_layers)
            .map(|_| LayerParams {
                qkv_w: next(),
                qkv_b: next(),
                out_w: next(),
                out_b: next(),
                ln1_gain: next(),
                ln1_bias: next(),
                ff1_w: next(),
                ff1_b: next(),
                ff2_w: next(),
                ff2_b: next(),
                ln2_gain: next(),
                ln2_bias: next(),
            })
            .collect();
        let final_ln_gain = next();
        let final_ln_bias = next();
        let decoder_bias = next();
        if vocab.len() != config.vocab_size {
            return Err(DartError::Mismatch(format!(
                "vocab has {} tokens but config.vocab_size is {}",
                vocab.len(),
                config.vocab_size
            )));
        }
        Ok(Self {
            config,
            vocab,
            params: store,
            embed,
            pos,
            emb_ln_gain,
            emb_ln_bias,
            layers,
            final_ln_gain,
            final_ln_bias,
            decoder_bias,
        })
    }

    pub fn config(&self) -> &MlmConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// The word-embedding table, which is also the output decoder weight.
    pub fn embedding_id(&self) -> ParamId {
        self.embed
    }

    pub fn decoder_bias_id(&self) -> ParamId {
        self.decoder_bias
    }

    pub fn embedding_row(&self, id: TokenId) -> &[f32] {
        self.params.value(self.embed).row(id)
    }

    pub fn embedding_row_mut(&mut self, id: TokenId) -> &mut [f32] {
        self.params.value_mut(self.embed).row_mut(id)
    }

    /// Final-layer hidden states `[L × d]`; `[PAD]` positions are excluded as
    /// attention keys.
    pub fn encode(&self, g: &mut Graph, ids: &[TokenId]) -> Result<Var> {
        let pad = self.vocab.special().pad;
        let attend: Vec<bool> = ids.iter().map(|&t| t != pad).collect();
        self.encode_with_mask(g, ids, &attend)
    }

    /// Like [`encode`](Self::encode) with an explicit key mask: positions
    /// with `attend[j] == false` receive zero attention weight.
    pub fn encode_with_mask(&self, g: &mut Graph, ids: &[TokenId], attend: &[bool]) -> Result<Var> {
        let cfg = &self.config;
        let len = ids.len();
        if len > cfg.max_len {
            return Err(DartError::Length { len, max: cfg.max_len });
        }
        if len == 0 {
            return Err(DartError::Validation("cannot encode an empty sequence".into()));
        }
        if attend.len() != len {
            return Err(DartError::dims("encode attend mask", &[len], &[attend.len()]));
        }
        let store = &self.params;
        let embed = g.param(store, self.embed);
        let pos_table = g.param(store, self.pos);
        let words = g.gather(embed, ids)?;
        let positions: Vec<usize> = (0..len).collect();
        let pos = g.gather(pos_table, &positions)?;
        let x = g.add(words, pos)?;
        let gain = g.param(store, self.emb_ln_gain);
        let bias = g.param(store, self.emb_ln_bias);
        let mut x = g.layer_norm(x, gain, bias, cfg.ln_eps)?;

        let key_mask = if attend.iter().all(|&a| a) {
            None
        } else {
            let mut m = vec![0.0f32; len * len];
            for row in m.chunks_mut(len) {
                for (v, &a) in row.iter_mut().zip(attend) {
                    if !a {
                        *v = -1e9;
                    }
                }
            }
            Some(g.constant(Tensor::new(vec![len, len], m)?))
        };

        let d = cfg.d_model;
        let dh = cfg.head_dim();
        let scale = 1.0 / (dh as f32).sqrt();
        for layer in &self.layers {
            let gain = g.param(store, layer.ln1_gain);
            let bias = g.param(store, layer.ln1_bias);
            let h = g.layer_norm(x, gain, bias, cfg.ln_eps)?;
            let w = g.param(store, layer.qkv_w);
            let b = g.param(store, layer.qkv_b);
            let qkv = g.matmul(h, w)?;
            let qkv = g.add_row(qkv, b)?;
            let mut heads = Vec::with_capacity(cfg.n_heads);
            for h in 0..cfg.n_heads {
                let q = g.slice_cols(qkv, h * dh, dh)?;
                let k = g.slice_cols(qkv, d + h * dh, dh)?;
                let v = g.slice_cols(qkv, 2 * d + h * dh, dh)?;
                let scores = g.matmul_nt(q, k)?;
                let mut scores = g.scale(scores, scale);
                if let Some(mask) = key_mask {
                    scores = g.add(scores, mask)?;
                }
                let probs = g.softmax_rows(scores)?;
                heads.push(g.matmul(probs, v)?);
            }
            let attn = if heads.len() == 1 {
                heads[0]
            } else {
                g.concat_cols(&heads)?
            };
            let w = g.param(store, layer.out_w);
            let b = g.param(store, layer.out_b);
            let attn = g.matmul(attn, w)?;
            let attn = g.add_row(attn, b)?;
            x = g.add(x, attn)?;

            let gain = g.param(store, layer.ln2_gain);
            let bias = g.param(store, layer.ln2_bias);
            let h = g.layer_norm(x, gain, bias, cfg.ln_eps)?;
            let w1 = g.param(store, layer.ff1_w);
            let b1 = g.param(store, layer.ff1_b);
            let w2 = g.param(store, layer.ff2_w);
            let b2 = g.param(store, layer.ff2_b);
            let h = g.matmul(h, w1)?;
            let h = g.add_row(h, b1)?;
            let h = g.gelu(h);
            let h = g.matmul(h, w2)?;
            let h = g.add_row(h, b2)?;
            x = g.add(x, h)?;
        }
        let gain = g.param(store, self.final_ln_gain);
        let bias = g.param(store, self.final_ln_bias);
        let x = g.layer_norm(x, gain, bias, cfg.ln_eps)?;
        Ok(x)
    }

    /// Vocabulary scores for hidden-state rows: `H · Eᵀ + b`.
    pub fn decode(&self, g: &mut Graph, hidden: Var) -> Result<Var> {
        let embed = g.param(&self.params, self.embed);
        let bias = g.param(&self.params, self.decoder_bias);
        let logits = g.matmul_nt(hidden, embed)?;
        g.add_row(logits, bias)
    }

    /// Vocabulary scores at the selected positions only.
    pub fn decode_positions(&self, g: &mut Graph, hidden: Var, positions: &[usize]) -> Result<Var> {
        let rows = g.gather(hidden, positions)?;
        self.decode(g, rows)
    }

    /// Full `[L × V]` logits for a sequence.
    pub fn forward_logits(&self, ids: &[TokenId]) -> Result<Tensor> {
        let mut g = Graph::new();
        let h = self.encode(&mut g, ids)?;
        let logits = self.decode(&mut g, h)?;
        Ok(g.value(logits).clone())
    }

    /// Final-layer hidden state of one position, without building gradients.
    pub fn hidden_state(&self, ids: &[TokenId], position: usize) -> Result<Vec<f32>> {
        let mut g = Graph::new();
        let h = self.encode(&mut g, ids)?;
        let len = g.shape(h)[0];
        if position >= len {
            return Err(DartError::Index {
                what: "sequence position",
                index: position,
                bound: len,
            });
        }
        Ok(g.value(h).row(position).to_vec())
    }

    /// Mean masked-token cross-entropy; `targets` pairs a position with the
    /// original id at that position.
    pub fn mlm_loss(&self, g: &mut Graph, ids: &[TokenId], targets: &[(usize, TokenId)]) -> Result<Var> {
        if targets.is_empty() {
            return Err(DartError::Contract("MLM loss needs at least one target".into()));
        }
        let h = self.encode(g, ids)?;
        let positions: Vec<usize> = targets.iter().map(|t| t.0).collect();
        let cols: Vec<usize> = targets.iter().map(|t| t.1).collect();
        let logits = self.decode_positions(g, h, &positions)?;
        let probs = g.softmax_rows(logits)?;
        let picked = g.pick_per_row(probs, &cols)?;
        let logp = g.log_floor(picked, crate::objectives::PROB_FLOOR);
        let mean = g.mean(logp);
        Ok(g.scale(mean, -1.0))
    }
}
