use std::collections::BTreeSet;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::episode::Episode;
use super::grid::GridSpace;
use super::task::Task;
use crate::data::Example;
use crate::error::{DartError, Result};
use crate::mlm::{TokenId, ToyMlmModel};
use crate::objectives::{
    evaluate, train_dart, train_with, Eval, PhasePolicy, Scorer, TrainConfig, TrainHistory, TrainObserver,
};
use crate::prompt::{build_prompt_spec, init_prompt_embeddings, PromptSpec};
use crate::rng::SeedStreams;
use crate::tensor::{Graph, ParamId, Tensor, Var};

/// A trained classifier: its weights, how it scores and how it got there.
pub struct TrainedRun {
    pub model: ToyMlmModel,
    pub scorer: Box<dyn Scorer + Send + Sync>,
    pub spec: Option<PromptSpec>,
    pub history: TrainHistory,
}

impl TrainedRun {
    pub fn dev_metric(&self) -> f64 {
        self.history.best_dev_metric
    }

    pub fn evaluate(&self, data: &[Example]) -> Result<Eval> {
        evaluate(&self.model, self.scorer.as_ref(), data)
    }
}

/// One few-shot algorithm, selectable by name.
pub trait Method: Send + Sync {
    fn name(&self) -> &str;

    fn description(&self) -> &str;

    /// Training configuration before grid overrides and seeding.
    fn base_config(&self) -> TrainConfig;

    fn default_grid(&self) -> GridSpace {
        GridSpace::default()
    }

    /// The cloze prompt this method trains on `model` for `task`, if any.
    fn prompt_spec(&self, _model: &ToyMlmModel, _task: &Task) -> Result<Option<PromptSpec>> {
        Ok(None)
    }

    /// Fine-tune a copy of `base` on the episode's training split.
    fn train(
        &self,
        base: &ToyMlmModel,
        task: &Task,
        episode: &Episode,
        config: &TrainConfig,
        observer: &mut dyn TrainObserver,
    ) -> Result<TrainedRun>;
}

/// Cloze-style methods: DART, its ablations and the fixed prompt.
#[derive(Debug, Clone)]
pub struct PromptMethod {
    pub name: &'static str,
    pub description: &'static str,
    pub differentiable_template: bool,
    pub differentiable_label: bool,
    pub fluency: bool,
    pub phases: PhasePolicy,
    /// Template length; `None` uses the task's base template as is.
    pub template_len: Option<usize>,
}

impl PromptMethod {
    /// DART, its three ablation arms and the fixed prompt.
    pub fn standard_arms() -> Vec<PromptMethod> {
        let prompt = |name, description, t, l, f, phases| PromptMethod {
            name,
            description,
            differentiable_template: t,
            differentiable_label: l,
            fluency: f,
            phases,
            template_len: None,
        };
        let joint = PhasePolicy::JointThenFull;
        vec![
            prompt(
                "dart",
                "differentiable template and label with fluency",
                true,
                true,
                true,
                joint,
            ),
            prompt(
                "dart-no-fluency",
                "DART without the fluency objective",
                true,
                true,
                false,
                joint,
            ),
            prompt(
                "dart-fixed-template",
                "DART with a fixed natural template",
                false,
                true,
                true,
                joint,
            ),
            prompt(
                "dart-fixed-label",
                "DART with fixed natural label words",
                true,
                false,
                true,
                joint,
            ),
            prompt(
                "fixed",
                "fixed natural prompt, full fine-tuning",
                false,
                false,
                false,
                PhasePolicy::FullOnly,
            ),
        ]
    }

    pub fn with_template_len(mut self, m: usize) -> Self {
        self.template_len = Some(m);
        self
    }

    fn template(&self, model: &ToyMlmModel, task: &Task) -> Result<(Vec<TokenId>, usize)> {
        let m = self.template_len.unwrap_or(task.base_template.len());
        let (words, mask) = task.template_words(m);
        Ok((model.vocab().natural_ids(&words)?, mask))
    }

    /// Prompt spec for `task` on `model`'s vocabulary, with the
    /// non-differentiable parts pinned to the task's natural words.
    pub fn spec_for(&self, model: &ToyMlmModel, task: &Task) -> Result<PromptSpec> {
        let vocab = model.vocab();
        let (template, mask) = self.template(model, task)?;
        let mut spec = build_prompt_spec(vocab, template.len(), task.n_classes(), mask)?;
        if !self.differentiable_template {
            spec = spec.with_fixed_template(vocab, &template)?;
        }
        if !self.differentiable_label {
            spec = spec.with_fixed_labels(vocab, &task.base_label_ids(vocab)?)?;
        }
        Ok(spec)
    }
}

impl Method for PromptMethod {
    fn name(&self) -> &str {
        self.name
    }

    fn description(&self) -> &str {
        self.description
    }

    fn base_config(&self) -> TrainConfig {
        let mut c = TrainConfig {
            phases: self.phases,
            ..TrainConfig::default()
        };
        if !self.fluency {
            c.fluency = false;
            c.lambda = 0.0;
        }
        c
    }

    fn prompt_spec(&self, model: &ToyMlmModel, task: &Task) -> Result<Option<PromptSpec>> {
        self.spec_for(model, task).map(Some)
    }

    fn train(
        &self,
        base: &ToyMlmModel,
        task: &Task,
        episode: &Episode,
        config: &TrainConfig,
        observer: &mut dyn TrainObserver,
    ) -> Result<TrainedRun> {
        let mut model = base.clone();
        let spec = self.spec_for(&model, task)?;
        let (template, _) = self.template(&model, task)?;
        let labels = task.base_label_ids(model.vocab())?;
        let mut rng = SeedStreams::new(config.seed).stream("prompt-init");
        init_prompt_embeddings(&mut model, &spec, Some(&template), Some(&labels), &mut rng)?;
        let mut config = config.clone();
        if !self.fluency {
            config.fluency = false;
            config.lambda = 0.0;
        }
        config.phases = self.phases;
        let history = train_dart(&mut model, &spec, &episode.train, &episode.dev, &config, observer)?;
        Ok(TrainedRun {
            model,
            scorer: Box::new(crate::objectives::PromptScorer { spec: spec.clone() }),
            spec: Some(spec),
            history,
        })
    }
}

/// `softmax(W₂ tanh(W₁ h_[CLS] + b₁) + b₂)` over `[CLS] x [SEP]`.
#[derive(Debug, Clone)]
pub struct HeadScorer {
    pub n: usize,
    dense_w: ParamId,
    dense_b: ParamId,
    out_w: ParamId,
    out_b: ParamId,
}

pub const HEAD_PARAMS: [&str; 4] = [
    "head.dense.weight",
    "head.dense.bias",
    "head.out.weight",
    "head.out.bias",
];

impl HeadScorer {
    /// Register a fresh head in the model's registry; weights are drawn
    /// from N(0, init_std²), biases start at zero.
    pub fn attach<R: Rng + ?Sized>(model: &mut ToyMlmModel, n: usize, rng: &mut R) -> Result<Self> {
        let d = model.config().d_model;
        let normal =
            Normal::new(0.0f32, model.config().init_std).map_err(|e| DartError::Config(format!("init_std: {e}")))?;
        let mut draw = |shape: Vec<usize>| {
            let numel = shape.iter().product();
            Tensor::new(shape, (0..numel).map(|_| normal.sample(rng)).collect())
        };
        let store = model.params_mut();
        Ok(Self {
            n,
            dense_w: store.register(HEAD_PARAMS[0], draw(vec![d, d])?, false)?,
            dense_b: store.register(HEAD_PARAMS[1], Tensor::zeros(&[d]), true)?,
            out_w: store.register(HEAD_PARAMS[2], draw(vec![d, n])?, false)?,
            out_b: store.register(HEAD_PARAMS[3], Tensor::zeros(&[n]), true)?,
        })
    }

    pub fn sequence(model: &ToyMlmModel, input: &[TokenId]) -> Vec<TokenId> {
        let sp = model.vocab().special();
        let keep = input.len().min(model.config().max_len.saturating_sub(2));
        let mut ids = Vec::with_capacity(keep + 2);
        ids.push(sp.cls);
        ids.extend_from_slice(&input[..keep]);
        ids.push(sp.sep);
        ids
    }
}

impl Scorer for HeadScorer {
    fn n_classes(&self) -> usize {
        self.n
    }

    fn class_probs(&self, g: &mut Graph, model: &ToyMlmModel, input: &[TokenId]) -> Result<Var> {
        let h = model.encode(g, &Self::sequence(model, input))?;
        let cls = g.gather(h, &[0])?;
        let store = model.params();
        let w1 = g.param(store, self.dense_w);
        let b1 = g.param(store, self.dense_b);
        let w2 = g.param(store, self.out_w);
        let b2 = g.param(store, self.out_b);
        let z = g.matmul(cls, w1)?;
        let z = g.add_row(z, b1)?;
        let z = g.tanh(z);
        let z = g.matmul(z, w2)?;
        let z = g.add_row(z, b2)?;
        g.softmax_rows(z)
    }

    fn prompt_rows(&self, _: &ToyMlmModel) -> BTreeSet<TokenId> {
        BTreeSet::new()
    }

    fn inactive_params(&self, model: &ToyMlmModel) -> Vec<ParamId> {
        vec![model.decoder_bias_id()]
    }
}

/// Conventional fine-tuning with a classifier over `[CLS]`.
#[derive(Debug, Clone, Default)]
pub struct HeadMethod;

impl Method for HeadMethod {
    fn name(&self) -> &str {
        "head"
    }

    fn description(&self) -> &str {
        "classifier head over [CLS] with full fine-tuning"
    }

    fn base_config(&self) -> TrainConfig {
        TrainConfig {
            phases: PhasePolicy::FullOnly,
            fluency: false,
            lambda: 0.0,
            ..TrainConfig::default()
        }
    }

    fn train(
        &self,
        base: &ToyMlmModel,
        task: &Task,
        episode: &Episode,
        config: &TrainConfig,
        observer: &mut dyn TrainObserver,
    ) -> Result<TrainedRun> {
        let mut model = base.clone();
        let mut rng = SeedStreams::new(config.seed).stream("head-init");
        let head = HeadScorer::attach(&mut model, task.n_classes(), &mut rng)?;
        let config = TrainConfig {
            phases: PhasePolicy::FullOnly,
            fluency: false,
            lambda: 0.0,
            ..config.clone()
        };
        let history = train_with(&mut model, &head, &episode.train, &episode.dev, &config, observer)?;
        Ok(TrainedRun {
            model,
            scorer: Box::new(head),
            spec: None,
            history,
        })
    }
}

/// Methods addressable by name.
pub struct Registry {
    methods: Vec<Box<dyn Method>>,
}

impl Registry {
    pub fn empty() -> Self {
        Self { methods: Vec::new() }
    }

    /// DART, its three ablation arms, the fixed prompt and the head baseline.
    pub fn standard() -> Self {
        let mut r = Self::empty();
        for m in PromptMethod::standard_arms() {
            r.register(Box::new(m)).expect("distinct names");
        }
        r.register(Box::new(HeadMethod)).expect("distinct names");
        r
    }

    pub fn register(&mut self, method: Box<dyn Method>) -> Result<()> {
        if self.methods.iter().any(|m| m.name() == method.name()) {
            return Err(DartError::Config(format!("method {} registered twice", method.name())));
        }
        self.methods.push(method);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&dyn Method> {
        self.methods
            .iter()
            .find(|m| m.name() == name)
            .map(|m| m.as_ref())
            .ok_or_else(|| DartError::Config(format!("unknown method {name:?}; known: {}", self.names().join(", "))))
    }

    pub fn names(&self) -> Vec<&str> {
        self.methods.iter().map(|m| m.name()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_registry_names() {
        let r = Registry::standard();
        assert_eq!(
            r.names(),
            vec![
                "dart",
                "dart-no-fluency",
                "dart-fixed-template",
                "dart-fixed-label",
                "fixed",
                "head"
            ]
        );
        assert!(r.get("dart").is_ok());
        assert!(matches!(r.get("lstm"), Err(DartError::Config(_))));
        let mut r = r;
        assert!(r.register(Box::new(HeadMethod)).is_err());
    }

    #[test]
    fn ablation_configs() {
        let r = Registry::standard();
        let c = r.get("dart-no-fluency").unwrap().base_config();
        assert!(!c.uses_fluency());
        assert_eq!(r.get("fixed").unwrap().base_config().phases, PhasePolicy::FullOnly);
        assert!(r.get("dart").unwrap().base_config().uses_fluency());
    }
}
