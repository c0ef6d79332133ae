use std::collections::BTreeSet;
use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::fluency::{fluency_loss, make_fluency_sample};
use super::losses::{class_discrimination_loss, total_loss};
use crate::data::Example;
use crate::error::{DartError, Result};
use crate::mlm::{TokenId, ToyMlmModel};
use crate::prompt::{assemble_prompt, class_probs, PromptSpec};
use crate::rng::{SeedStreams, StreamRng};
use crate::tensor::{
    clip_grad_norm, AdamW, AdamWConfig, Graph, LinearWarmupDecay, ParamId, ParamStore, Trainable, Var,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhasePolicy {
    JointThenFull,
    JointOnly,
    FullOnly,
}

impl PhasePolicy {
    pub fn phases(self) -> &'static [Phase] {
        match self {
            PhasePolicy::JointThenFull => &[Phase::Joint, Phase::Full],
            PhasePolicy::JointOnly => &[Phase::Joint],
            PhasePolicy::FullOnly => &[Phase::Full],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Only the prompt's reserved embedding rows train.
    Joint,
    /// Every parameter trains.
    Full,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Joint => "joint",
            Phase::Full => "full",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lambda: f32,
    /// Epoch budget of each phase.
    pub epochs: usize,
    pub batch_size: usize,
    pub prompt_lr: f32,
    pub full_lr: f32,
    pub weight_decay: f32,
    pub phases: PhasePolicy,
    pub fluency: bool,
    pub seed: u64,
    pub grad_accum: usize,
    /// Epochs without dev-loss improvement before a phase ends.
    pub patience: usize,
    pub warmup_frac: f32,
    pub max_grad_norm: f32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            epochs: 20,
            batch_size: 8,
            prompt_lr: 1e-2,
            full_lr: 1e-4,
            weight_decay: 0.01,
            phases: PhasePolicy::JointThenFull,
            fluency: true,
            seed: 0,
            grad_accum: 1,
            patience: 5,
            warmup_frac: 0.1,
            max_grad_norm: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(DartError::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.batch_size == 0 || self.grad_accum == 0 {
            return Err(DartError::Config("batch_size and grad_accum must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(DartError::Config("epochs must be >= 1".into()));
        }
        if !(self.prompt_lr > 0.0 && self.full_lr > 0.0) {
            return Err(DartError::Config("learning rates must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.warmup_frac) {
            return Err(DartError::Config("warmup_frac must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// `self` with the given keys replaced; unknown keys are rejected.
    pub fn with_overrides(&self, overrides: &serde_json::Map<String, serde_json::Value>) -> Result<Self> {
        let mut value = serde_json::to_value(self)?;
        let obj = value.as_object_mut().expect("struct serializes to an object");
        for (k, v) in overrides {
            obj.insert(k.clone(), v.clone());
        }
        let config: TrainConfig =
            serde_json::from_value(value).map_err(|e| DartError::Config(format!("train config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    /// Fluency batches run only when enabled with a positive weight.
    pub fn uses_fluency(&self) -> bool {
        self.fluency && self.lambda > 0.0
    }
}

/// How a method turns an input into a class distribution.
pub trait Scorer {
    fn n_classes(&self) -> usize;

    /// `[1 × n]` class distribution.
    fn class_probs(&self, g: &mut Graph, model: &ToyMlmModel, input: &[TokenId]) -> Result<Var>;

    /// Embedding rows trained in the joint phase.
    fn prompt_rows(&self, model: &ToyMlmModel) -> BTreeSet<TokenId>;

    /// Parameters this scorer's graph never reads; kept frozen in the full phase.
    fn inactive_params(&self, _model: &ToyMlmModel) -> Vec<ParamId> {
        Vec::new()
    }

    /// Fluency loss for one example, when the method has one.
    fn fluency(
        &self,
        _g: &mut Graph,
        _model: &ToyMlmModel,
        _example: &Example,
        _rng: &mut StreamRng,
    ) -> Result<Option<Var>> {
        Ok(None)
    }
}

/// Cloze scoring through a prompt spec.
#[derive(Debug, Clone)]
pub struct PromptScorer {
    pub spec: PromptSpec,
}

impl Scorer for PromptScorer {
    fn n_classes(&self) -> usize {
        self.spec.n
    }

    fn class_probs(&self, g: &mut Graph, model: &ToyMlmModel, input: &[TokenId]) -> Result<Var> {
        let prompt = assemble_prompt(input, &self.spec, model.vocab(), model.config().max_len)?;
        class_probs(g, model, &prompt, &self.spec)
    }

    fn prompt_rows(&self, model: &ToyMlmModel) -> BTreeSet<TokenId> {
        self.spec.reserved_rows(model.vocab())
    }

    fn fluency(
        &self,
        g: &mut Graph,
        model: &ToyMlmModel,
        example: &Example,
        rng: &mut StreamRng,
    ) -> Result<Option<Var>> {
        let sample = make_fluency_sample(
            model.vocab(),
            &example.input,
            example.label,
            &self.spec,
            model.config().max_len,
            rng,
        )?;
        Ok(Some(fluency_loss(g, model, &sample)?))
    }
}

/// Called after every optimizer update with the 1-based global step.
pub trait TrainObserver {
    /// After the update that completes `global_step` (counted from 1).
    fn on_step(&mut self, global_step: usize, model: &ToyMlmModel) -> Result<()>;

    /// Accumulated, clipped gradients just before the optimizer applies
    /// update `global_step`.
    fn before_update(&mut self, _global_step: usize, _phase: Phase, _params: &ParamStore) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {
    fn on_step(&mut self, _: usize, _: &ToyMlmModel) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub phase: Phase,
    pub epoch: usize,
    /// Global optimizer step at the end of the epoch.
    pub step: usize,
    pub train_loss: f64,
    pub fluency_loss: f64,
    pub dev_loss: f64,
    pub dev_metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub rows: Vec<HistoryRow>,
    pub phase_steps: Vec<(Phase, usize)>,
    /// Where the returned parameters come from; `None` means the initial model.
    pub best_at: Option<(Phase, usize)>,
    pub best_dev_loss: f64,
    pub best_dev_metric: f64,
}

impl TrainHistory {
    pub const CSV_HEADER: &'static str = "phase,epoch,step,train_loss,dev_loss,dev_metric,fluency_loss";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{:.9},{:.9},{:.9},{:.9}\n",
                r.phase, r.epoch, r.step, r.train_loss, r.dev_loss, r.dev_metric, r.fluency_loss
            ));
        }
        out
    }

    pub fn total_steps(&self) -> usize {
        self.phase_steps.iter().map(|p| p.1).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Eval {
    pub loss: f64,
    pub accuracy: f64,
    pub predictions: Vec<usize>,
}

fn argmax(xs: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Mean class-discrimination loss and accuracy, no gradients.
pub fn evaluate(model: &ToyMlmModel, scorer: &dyn Scorer, data: &[Example]) -> Result<Eval> {
    let mut loss = 0.0f64;
    let mut correct = 0usize;
    let mut predictions = Vec::with_capacity(data.len());
    for ex in data {
        let mut g = Graph::new();
        let p = scorer.class_probs(&mut g, model, &ex.input)?;
        let l = class_discrimination_loss(&mut g, p, ex.label)?;
        loss += f64::from(g.value(l).item());
        let pred = argmax(g.value(p).data());
        correct += usize::from(pred == ex.label);
        predictions.push(pred);
    }
    let n = data.len().max(1) as f64;
    Ok(Eval {
        loss: loss / n,
        accuracy: correct as f64 / n,
        predictions,
    })
}

fn better(acc: f64, loss: f64, best_acc: f64, best_loss: f64) -> bool {
    acc > best_acc || (acc == best_acc && loss < best_loss)
}

/// Mean class loss and, when fluency runs, mean fluency loss of one batch.
fn batch_losses(
    g: &mut Graph,
    model: &ToyMlmModel,
    scorer: &dyn Scorer,
    train: &[Example],
    batch: &[usize],
    use_fluency: bool,
    rng: &mut StreamRng,
) -> Result<(Var, Option<Var>)> {
    let mut lcs = Vec::with_capacity(batch.len());
    let mut lfs = Vec::new();
    for &i in batch {
        let ex = &train[i];
        let p = scorer.class_probs(g, model, &ex.input)?;
        lcs.push(class_discrimination_loss(g, p, ex.label)?);
        if use_fluency {
            if let Some(lf) = scorer.fluency(g, model, ex, rng)? {
                lfs.push(lf);
            }
        }
    }
    let lc = g.mean_of(&lcs)?;
    let lf = if lfs.is_empty() { None } else { Some(g.mean_of(&lfs)?) };
    Ok((lc, lf))
}

/// DART fine-tuning through a prompt spec.
pub fn train_dart(
    model: &mut ToyMlmModel,
    spec: &PromptSpec,
    train: &[Example],
    dev: &[Example],
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainHistory> {
    spec.check_model(model)?;
    let scorer = PromptScorer { spec: spec.clone() };
    train_with(model, &scorer, train, dev, config, observer)
}

/// Phase loop shared by every method. The model is left holding the
/// parameters with the best dev accuracy (ties: lower dev loss), the
/// untrained model included.
pub fn train_with(
    model: &mut ToyMlmModel,
    scorer: &dyn Scorer,
    train: &[Example],
    dev: &[Example],
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainHistory> {
    config.validate()?;
    if train.is_empty() {
        return Err(DartError::Validation("training set is empty".into()));
    }
    let streams = SeedStreams::new(config.seed);
    let mut shuffle_rng = streams.stream("train-shuffle");
    let mut fluency_rng = streams.stream("fluency");
    let use_fluency = config.uses_fluency();

    let initial = evaluate(model, scorer, dev)?;
    let mut best_snapshot = model.params().snapshot();
    let (mut best_acc, mut best_loss) = (initial.accuracy, initial.loss);
    let mut best_at = None;

    let mut rows = Vec::new();
    let mut phase_steps = Vec::new();
    let mut global_step = 0usize;
    let batches_per_epoch = train.len().div_ceil(config.batch_size);
    let updates_per_epoch = batches_per_epoch.div_ceil(config.grad_accum);

    for &phase in config.phases.phases() {
        let lr = match phase {
            Phase::Joint => {
                let rows = scorer.prompt_rows(model);
                if rows.is_empty() {
                    phase_steps.push((phase, 0));
                    continue;
                }
                let embed = model.embedding_id();
                model.params_mut().set_all_trainable(Trainable::Frozen);
                model.params_mut().set_trainable(embed, Trainable::Rows(rows));
                config.prompt_lr
            }
            Phase::Full => {
                model.params_mut().set_all_trainable(Trainable::All);
                for id in scorer.inactive_params(model) {
                    model.params_mut().set_trainable(id, Trainable::Frozen);
                }
                config.full_lr
            }
        };
        let mut opt = AdamW::new(AdamWConfig {
            lr,
            weight_decay: config.weight_decay,
            ..Default::default()
        });
        let schedule = LinearWarmupDecay::new(lr, config.epochs * updates_per_epoch, config.warmup_frac);
        let mut phase_updates = 0usize;
        let mut phase_best_loss = f64::INFINITY;
        let mut stale = 0usize;
        let mut order: Vec<usize> = (0..train.len()).collect();

        for epoch in 1..=config.epochs {
            order.shuffle(&mut shuffle_rng);
            let (mut sum_lc, mut sum_lf) = (0.0f64, 0.0f64);
            model.params_mut().zero_grad();
            let mut pending = 0usize;
            for (b, batch) in order.chunks(config.batch_size).enumerate() {
                let mut g = Graph::new();
                let at_step = |e: DartError| match e {
                    DartError::Numeric(m) => DartError::Numeric(format!(
                        "{m} at step {} ({phase} phase, epoch {epoch})",
                        global_step + 1
                    )),
                    other => other,
                };
                let (lc, lf) = batch_losses(&mut g, model, scorer, train, batch, use_fluency, &mut fluency_rng)
                    .map_err(at_step)?;
                sum_lc += f64::from(g.value(lc).item()) * batch.len() as f64;
                let loss = match lf {
                    Some(lf) => {
                        sum_lf += f64::from(g.value(lf).item()) * batch.len() as f64;
                        total_loss(&mut g, lc, lf, config.lambda)?
                    }
                    None => lc,
                };
                let value = g.value(loss).item();
                if !value.is_finite() {
                    return Err(DartError::Numeric(format!(
                        "non-finite loss {value} at step {} ({phase} phase, epoch {epoch})",
                        global_step + 1
                    )));
                }
                let loss = if config.grad_accum > 1 {
                    g.scale(loss, 1.0 / config.grad_accum as f32)
                } else {
                    loss
                };
                g.backward(loss)?;
                g.accumulate_param_grads(model.params_mut());
                pending += 1;
                if pending == config.grad_accum || b + 1 == batches_per_epoch {
                    clip_grad_norm(model.params_mut(), config.max_grad_norm);
                    observer.before_update(global_step + 1, phase, model.params())?;
                    opt.step(model.params_mut(), schedule.lr_at(phase_updates))?;
                    model.params_mut().zero_grad();
                    pending = 0;
                    phase_updates += 1;
                    global_step += 1;
                    observer.on_step(global_step, model)?;
                }
            }
            let dev_eval = evaluate(model, scorer, dev)?;
            let n = train.len() as f64;
            rows.push(HistoryRow {
                phase,
                epoch,
                step: global_step,
                train_loss: (sum_lc + f64::from(config.lambda) * sum_lf) / n,
                fluency_loss: sum_lf / n,
                dev_loss: dev_eval.loss,
                dev_metric: dev_eval.accuracy,
            });
            if better(dev_eval.accuracy, dev_eval.loss, best_acc, best_loss) {
                best_acc = dev_eval.accuracy;
                best_loss = dev_eval.loss;
                best_snapshot = model.params().snapshot();
                best_at = Some((phase, epoch));
            }
            if dev_eval.loss < phase_best_loss {
                phase_best_loss = dev_eval.loss;
                stale = 0;
            } else {
                stale += 1;
                if stale >= config.patience {
                    break;
                }
            }
        }
        phase_steps.push((phase, phase_updates));
    }

    model.params_mut().restore(&best_snapshot);
    model.params_mut().set_all_trainable(Trainable::All);
    model.params_mut().zero_grad();
    Ok(TrainHistory {
        rows,
        phase_steps,
        best_at,
        best_dev_loss: best_loss,
        best_dev_metric: best_acc,
    })
}
