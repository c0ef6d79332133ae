use std::path::Path;

use super::episode::{sample_k_shot, Episode, TestSet};
use super::grid::GridSpace;
use super::method::{Method, Registry, TrainedRun};
use super::report::{ReportRow, RunReport};
use super::task::Task;
use crate::error::Result;
use crate::mlm::{load_checkpoint, pretrain_toy_lm, save_checkpoint, ToyMlmModel};
use crate::objectives::TrainConfig;

/// Seed of the stand-in pretrained LM shared by every experiment.
pub const LM_SEED: u64 = 13;

/// What every method in a comparison shares: task, test set, K, seeds and
/// the hyperparameter grid.
#[derive(Debug, Clone, Copy)]
pub struct Protocol<'a> {
    pub task: &'a Task,
    pub test: &'a TestSet,
    pub k: usize,
    pub seeds: &'a [u64],
    pub space: &'a GridSpace,
}

/// One training run per grid point over `config`; the best dev metric wins
/// and ties keep the earlier point. Every point trains with
/// `seed = episode.seed`.
pub fn grid_search(
    method: &dyn Method,
    base: &ToyMlmModel,
    task: &Task,
    episode: &Episode,
    space: &GridSpace,
    config: &TrainConfig,
) -> Result<(TrainConfig, TrainedRun)> {
    let seeded = TrainConfig {
        seed: episode.seed,
        ..config.clone()
    };
    let mut best: Option<(TrainConfig, TrainedRun)> = None;
    for point in space.points(&seeded)? {
        let run = method.train(base, task, episode, &point, &mut ())?;
        log::debug!(
            "{} seed {} dev {:.4} with {:?}",
            method.name(),
            episode.seed,
            run.dev_metric(),
            point
        );
        match &best {
            Some((_, b)) if run.dev_metric() <= b.dev_metric() => {}
            _ => best = Some((point, run)),
        }
    }
    Ok(best.expect("grid has at least one point"))
}

#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub row: ReportRow,
    pub config: TrainConfig,
}

/// Select on dev, then read the test set once.
pub fn run_seed(
    method: &dyn Method,
    base: &ToyMlmModel,
    protocol: &Protocol<'_>,
    config: &TrainConfig,
    seed: u64,
) -> Result<(SeedOutcome, TrainedRun)> {
    let task = protocol.task;
    let episode = sample_k_shot(&task.pool, task.n_classes(), protocol.k, seed)?;
    let (config, run) = grid_search(method, base, task, &episode, protocol.space, config)?;
    let eval = run.evaluate(protocol.test.read(method.name(), seed)?)?;
    let row = ReportRow {
        method: method.name().to_string(),
        task: task.kind.to_string(),
        k: protocol.k,
        seed,
        metric: eval.accuracy,
        dev_metric: run.dev_metric(),
        split_checksum: episode.checksum(),
        config_json: serde_json::to_string(&config)?,
    };
    log::info!(
        "{} {} K={} seed {seed}: dev {:.4} test {:.4}",
        method.name(),
        task.kind,
        protocol.k,
        row.dev_metric,
        row.metric
    );
    Ok((SeedOutcome { row, config }, run))
}

/// Every seed of one method in order; `keep` sees each trained run.
pub fn run_protocol(
    method: &dyn Method,
    base: &ToyMlmModel,
    protocol: &Protocol<'_>,
    config: &TrainConfig,
    keep: &mut dyn FnMut(&SeedOutcome, &TrainedRun) -> Result<()>,
) -> Result<RunReport> {
    let mut rows = Vec::with_capacity(protocol.seeds.len());
    for &seed in protocol.seeds {
        let (outcome, run) = run_seed(method, base, protocol, config, seed)?;
        keep(&outcome, &run)?;
        rows.push(outcome.row);
    }
    Ok(RunReport::from_rows(
        method.name(),
        protocol.task.kind.name(),
        protocol.k,
        rows,
    ))
}

/// Arms of the component ablation, full DART first.
pub const ABLATION_ARMS: [&str; 4] = ["dart", "dart-no-fluency", "dart-fixed-template", "dart-fixed-label"];

/// Each ablation arm at its own base configuration over the same protocol.
pub fn run_ablation_suite(registry: &Registry, base: &ToyMlmModel, protocol: &Protocol<'_>) -> Result<Vec<RunReport>> {
    ABLATION_ARMS
        .iter()
        .map(|name| {
            let m = registry.get(name)?;
            run_protocol(m, base, protocol, &m.base_config(), &mut |_, _| Ok(()))
        })
        .collect()
}

/// Load the pretrained LM checkpoint at `path`, or pretrain it with the
/// default recipe and write it there first.
pub fn load_or_pretrain(path: &Path, seed: u64) -> Result<ToyMlmModel> {
    if path.exists() {
        let (model, _) = load_checkpoint(path)?.into_model()?;
        return Ok(model);
    }
    log::info!("pre-training the toy LM (seed {seed}) into {}", path.display());
    let (model, _) = pretrain_toy_lm(seed)?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    save_checkpoint(&tmp, &model, None)?;
    std::fs::rename(&tmp, path)?;
    Ok(model)
}

/// `n` episode seeds: the five defaults, then 1000, 1001, ...
pub fn seed_list(n: usize) -> Vec<u64> {
    use super::episode::DEFAULT_SEEDS;
    DEFAULT_SEEDS
        .iter()
        .copied()
        .chain((1000u64..).take(n.saturating_sub(DEFAULT_SEEDS.len())))
        .take(n)
        .collect()
}
