use crate::data::Example;
use crate::error::Result;
use crate::mlm::ToyMlmModel;
use crate::objectives::TrainObserver;
use crate::prompt::{assemble_prompt, PromptSpec};

use super::rd::LabeledStates;

pub const DEFAULT_CAPTURE_STEPS: [usize; 4] = [10, 30, 50, 70];

/// Final-layer [MASK] states of every example under `spec`.
pub fn mask_states(
    model: &ToyMlmModel,
    spec: &PromptSpec,
    data: &[Example],
    step: Option<usize>,
) -> Result<LabeledStates> {
    let mut out = LabeledStates::new(step, model.config().d_model);
    for ex in data {
        let p = assemble_prompt(&ex.input, spec, model.vocab(), model.config().max_len)?;
        out.push(ex.label, model.hidden_state(&p.ids, p.mask_position)?)?;
    }
    Ok(out)
}

/// Training observer that records [MASK] states of a capture set at
/// selected global steps. Reads the model only.
#[derive(Debug, Clone)]
pub struct CaptureObserver {
    steps: Vec<usize>,
    spec: PromptSpec,
    data: Vec<Example>,
    captured: Vec<LabeledStates>,
}

impl CaptureObserver {
    pub fn new(steps: &[usize], spec: PromptSpec, data: Vec<Example>) -> Self {
        let mut steps = steps.to_vec();
        steps.sort_unstable();
        steps.dedup();
        Self {
            steps,
            spec,
            data,
            captured: Vec::new(),
        }
    }

    /// Captured states in step order. Requested steps the run never
    /// reached are logged and left out.
    pub fn finish(self, total_steps: usize) -> Vec<LabeledStates> {
        for s in self.steps.iter().filter(|&&s| s > total_steps) {
            log::warn!("capture step {s} is beyond the {total_steps} training steps; skipped");
        }
        self.captured
    }

    pub fn skipped(&self, total_steps: usize) -> Vec<usize> {
        self.steps.iter().copied().filter(|&s| s > total_steps).collect()
    }
}

impl TrainObserver for CaptureObserver {
    fn on_step(&mut self, global_step: usize, model: &ToyMlmModel) -> Result<()> {
        if self.steps.binary_search(&global_step).is_ok() {
            let states = mask_states(model, &self.spec, &self.data, Some(global_step))?;
            self.captured.push(states);
        }
        Ok(())
    }
}
