use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use dart_core::analysis::{export_states_csv, mask_states, nearest_labels, rd_ratio, CaptureObserver};
use dart_core::harness::{
    aggregates_to_json, reports_to_csv, run_protocol, run_seed, sample_k_shot, seed_list, Method, Protocol, Registry,
    RunReport, Task, TaskKind, TestSet,
};
use dart_core::mlm::{
    default_stages, grammar, init_model, load_checkpoint, run_stages, save_checkpoint, MlmConfig, ToyMlmModel,
};
use dart_core::objectives::TrainConfig;
use dart_core::prompt::PromptSpec;
use dart_core::{DartError, Result};
use rayon::prelude::*;
use serde_json::json;

use crate::config::{self, GridFile, PretrainFile, RunFile};
use crate::manifest::RunManifest;
use crate::{AnalyzeArgs, AnalyzeKind, FinetuneArgs, MethodArgs, PretrainArgs, SweepArgs};

/// Output directory that refuses to overwrite any of the command's inputs.
struct OutDir {
    dir: PathBuf,
    inputs: Vec<PathBuf>,
    written: Vec<PathBuf>,
}

impl OutDir {
    fn create(dir: &Path, inputs: &[&Path]) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            inputs: inputs.iter().filter_map(|p| p.canonicalize().ok()).collect(),
            written: Vec::new(),
        })
    }

    fn path(&self, name: &str) -> Result<PathBuf> {
        let p = self.dir.join(name);
        if let Ok(c) = p.canonicalize() {
            if self.inputs.contains(&c) {
                return Err(DartError::Config(format!(
                    "output {} would overwrite an input",
                    p.display()
                )));
            }
        }
        Ok(p)
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf> {
        let p = self.path(name)?;
        std::fs::write(&p, contents)?;
        self.written.push(p.clone());
        Ok(p)
    }

    fn record(&mut self, p: PathBuf) {
        self.written.push(p);
    }
}

fn load_model(path: &Path) -> Result<(ToyMlmModel, Option<PromptSpec>)> {
    let ckpt = load_checkpoint(path).map_err(|e| match e {
        DartError::Io(io) => DartError::Mismatch(format!("cannot read checkpoint {}: {io}", path.display())),
        other => other,
    })?;
    ckpt.into_model()
}

/// The task's words must exist in the checkpoint's vocabulary.
fn load_task(kind: TaskKind, model: &ToyMlmModel) -> Result<Task> {
    Task::generate(kind, model.vocab())
        .map_err(|e| DartError::Mismatch(format!("task {kind} does not fit the checkpoint vocabulary: {e}")))
}

fn resolve_method<'r>(registry: &'r Registry, args: &MethodArgs) -> Result<&'r dyn Method> {
    let flags = [
        (args.no_fluency, "no-fluency"),
        (args.fixed_template, "fixed-template"),
        (args.fixed_label, "fixed-label"),
    ];
    let on: Vec<&str> = flags.iter().filter(|f| f.0).map(|f| f.1).collect();
    match on.as_slice() {
        [] => registry.get(&args.method),
        [one] if args.method == "dart" => registry.get(&format!("dart-{one}")),
        [_] => Err(DartError::Config("ablation flags apply to --method dart only".into())),
        _ => Err(DartError::Config("use at most one ablation flag".into())),
    }
}

fn run_file(path: Option<&Path>) -> Result<RunFile> {
    path.map(config::load)
        .transpose()
        .map(|f| f.unwrap_or_else(RunFile::empty))
}

/// Seed order: `DART_SEED` alone, else the config's list, else the
/// defaults; `--seeds N` then keeps the first N.
fn resolve_seeds(file: &RunFile, count: Option<usize>) -> Result<Vec<u64>> {
    if let Some(s) = config::seed_override()? {
        return Ok(vec![s]);
    }
    let n = count.unwrap_or(file.seeds.as_ref().map_or(5, Vec::len));
    if n == 0 {
        return Err(DartError::Config("--seeds must be at least 1".into()));
    }
    match &file.seeds {
        Some(list) if list.len() < n => Err(DartError::Config(format!(
            "--seeds {n} but the config lists only {} seeds",
            list.len()
        ))),
        Some(list) => Ok(list[..n].to_vec()),
        None => Ok(seed_list(n)),
    }
}

pub fn pretrain(args: &PretrainArgs) -> Result<()> {
    let mut file: PretrainFile = config::load(&args.config)?;
    if let Some(s) = config::seed_override()? {
        file.seed = s;
    }
    let vocab = grammar::vocabulary(file.reserved)?;
    let dims = &file.model;
    let model_config = MlmConfig {
        vocab_size: vocab.len(),
        d_model: dims.d_model,
        n_layers: dims.n_layers,
        n_heads: dims.n_heads,
        max_len: dims.max_len,
        d_ff: dims.d_ff,
        init_std: dims.init_std,
        ..MlmConfig::toy(vocab.len())
    };
    let stages = file.stages.clone().unwrap_or_else(|| default_stages(file.seed));

    let mut out = OutDir::create(&args.out, &[&args.config])?;
    let manifest_path = out.path("manifest.json")?;
    let mut manifest = RunManifest::new(
        "pretrain",
        json!({"file": file, "stages": stages}),
        vec![file.seed],
        &[&args.config],
    )?;
    manifest.write(&manifest_path)?;

    let mut model = init_model(model_config, vocab, file.seed)?;
    let histories = run_stages(&mut model, &stages)?;

    let mut csv = String::from("stage,step,loss\n");
    for (i, h) in histories.iter().enumerate() {
        for (step, loss) in h.step_losses.iter().enumerate() {
            writeln!(csv, "{i},{},{loss:.9}", step + 1).expect("string write");
        }
    }
    let ckpt = out.path("model.ckpt")?;
    save_checkpoint(&ckpt, &model, None)?;
    out.record(ckpt);
    out.write("metrics.csv", &csv)?;
    let held: Vec<_> = histories
        .iter()
        .map(|h| json!({"initial": h.held_out_initial, "final": h.held_out_final}))
        .collect();
    out.write("held_out.json", &serde_json::to_string_pretty(&held)?)?;
    manifest.outputs = out.written.clone();
    manifest.finish(&manifest_path)
}

struct Prepared<'r> {
    model: ToyMlmModel,
    task: Task,
    method: &'r dyn Method,
    seeds: Vec<u64>,
    train: TrainConfig,
}

fn prepare<'r>(
    registry: &'r Registry,
    checkpoint: &Path,
    task: TaskKind,
    method: &MethodArgs,
    config: Option<&Path>,
    seeds: Option<usize>,
) -> Result<Prepared<'r>> {
    let file = run_file(config)?;
    let method = resolve_method(registry, method)?;
    let train = file.apply(&method.base_config())?;
    let seeds = resolve_seeds(&file, seeds)?;
    let (model, _) = load_model(checkpoint)?;
    let task = load_task(task, &model)?;
    Ok(Prepared {
        model,
        task,
        method,
        seeds,
        train,
    })
}

fn write_reports(out: &mut OutDir, name: &str, report: &RunReport) -> Result<()> {
    out.write(name, &reports_to_csv(std::slice::from_ref(report))?)?;
    out.write("aggregate.json", &aggregates_to_json(std::slice::from_ref(report))?)?;
    Ok(())
}

pub fn finetune(args: &FinetuneArgs) -> Result<()> {
    let registry = Registry::standard();
    let p = prepare(
        &registry,
        &args.checkpoint,
        args.task,
        &args.method,
        args.config.as_deref(),
        args.seeds,
    )?;
    let mut inputs: Vec<&Path> = vec![&args.checkpoint];
    inputs.extend(args.config.as_deref());
    let mut out = OutDir::create(&args.out, &inputs)?;
    let manifest_path = out.path("manifest.json")?;
    let effective = json!({"method": p.method.name(), "task": args.task, "k": args.k, "train": p.train});
    let mut manifest = RunManifest::new("finetune", effective, p.seeds.clone(), &inputs)?;
    manifest.write(&manifest_path)?;

    let test = TestSet::new(p.task.test.clone());
    let space = p.method.default_grid();
    let protocol = Protocol {
        task: &p.task,
        test: &test,
        k: args.k,
        seeds: &p.seeds,
        space: &space,
    };
    let mut best: Option<(f64, ToyMlmModel, Option<PromptSpec>)> = None;
    let mut histories = Vec::new();
    let report = run_protocol(p.method, &p.model, &protocol, &p.train, &mut |outcome, run| {
        histories.push((outcome.row.seed, run.history.to_csv()));
        if best.as_ref().is_none_or(|b| run.dev_metric() > b.0) {
            best = Some((run.dev_metric(), run.model.clone(), run.spec.clone()));
        }
        Ok(())
    })?;

    write_reports(&mut out, "report.csv", &report)?;
    for (seed, csv) in histories {
        out.write(&format!("history-seed{seed}.csv"), &csv)?;
    }
    if let Some((_, model, spec)) = best {
        let ckpt = out.path("best.ckpt")?;
        save_checkpoint(&ckpt, &model, spec.as_ref())?;
        out.record(ckpt);
    }
    println!(
        "{} {} K={}: {}",
        report.aggregate.method,
        report.aggregate.task,
        args.k,
        report.summary()
    );
    manifest.outputs = out.written.clone();
    manifest.finish(&manifest_path)
}

pub fn sweep(args: &SweepArgs) -> Result<()> {
    let registry = Registry::standard();
    let grid: GridFile = config::load(&args.grid)?;
    if grid.grid.axis_count() == 0 {
        return Err(DartError::Config(format!(
            "{}: the grid has no axes",
            args.grid.display()
        )));
    }
    grid.grid.validate()?;
    if args.jobs == 0 {
        return Err(DartError::Config("--jobs must be at least 1".into()));
    }
    let p = prepare(
        &registry,
        &args.checkpoint,
        args.task,
        &args.method,
        args.config.as_deref(),
        args.seeds,
    )?;
    let mut inputs: Vec<&Path> = vec![&args.checkpoint, &args.grid];
    inputs.extend(args.config.as_deref());
    let mut out = OutDir::create(&args.out, &inputs)?;
    let manifest_path = out.path("manifest.json")?;
    let effective = json!({
        "method": p.method.name(), "task": args.task, "k": args.k, "train": p.train, "grid": grid.grid
    });
    let mut manifest = RunManifest::new("sweep", effective, p.seeds.clone(), &inputs)?;
    manifest.write(&manifest_path)?;

    let test = TestSet::new(p.task.test.clone());
    let protocol = Protocol {
        task: &p.task,
        test: &test,
        k: args.k,
        seeds: &p.seeds,
        space: &grid.grid,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs)
        .build()
        .map_err(|e| DartError::Config(format!("--jobs: {e}")))?;
    let rows = pool.install(|| {
        p.seeds
            .par_iter()
            .map(|&seed| run_seed(p.method, &p.model, &protocol, &p.train, seed).map(|(o, _)| o.row))
            .collect::<Result<Vec<_>>>()
    })?;
    let report = RunReport::from_rows(p.method.name(), p.task.kind.name(), args.k, rows);
    write_reports(&mut out, "selection.csv", &report)?;
    println!(
        "{} {} K={}: {}",
        report.aggregate.method,
        report.aggregate.task,
        args.k,
        report.summary()
    );
    manifest.outputs = out.written.clone();
    manifest.finish(&manifest_path)
}

pub fn analyze(args: &AnalyzeArgs) -> Result<()> {
    let registry = Registry::standard();
    let file = run_file(args.config.as_deref())?;
    let seed = config::seed_override()?.unwrap_or(args.seed);
    let (base, stored_spec) = load_model(&args.checkpoint)?;
    let task = load_task(args.task, &base)?;
    let mut inputs: Vec<&Path> = vec![&args.checkpoint];
    inputs.extend(args.config.as_deref());
    let mut out = OutDir::create(&args.out, &inputs)?;
    let manifest_path = out.path("manifest.json")?;

    // A checkpoint with a prompt spec is analyzed as is; a bare LM is
    // fine-tuned first, capturing states along the way.
    let (model, spec, captures, effective) = match stored_spec {
        Some(spec) => {
            spec.check_model(&base)?;
            let states = mask_states(&base, &spec, &task.pool, None)?;
            (
                base,
                spec,
                vec![states],
                json!({"what": args.what, "task": args.task, "trained": false}),
            )
        }
        None => {
            let method = resolve_method(&registry, &args.method)?;
            let train = TrainConfig {
                seed,
                ..file.apply(&method.base_config())?
            };
            let episode = sample_k_shot(&task.pool, task.n_classes(), args.k, seed)?;
            let spec = method
                .prompt_spec(&base, &task)?
                .ok_or_else(|| DartError::Config(format!("method {} has no [MASK] to analyze", method.name())))?;
            let mut observer = CaptureObserver::new(&args.steps, spec, task.pool.clone());
            let run = method.train(&base, &task, &episode, &train, &mut observer)?;
            let captures = observer.finish(run.history.total_steps());
            let effective = json!({
                "what": args.what, "task": args.task, "method": method.name(), "k": args.k,
                "steps": args.steps, "train": train, "trained": true
            });
            (run.model, run.spec.expect("prompt method"), captures, effective)
        }
    };
    let mut manifest = RunManifest::new("analyze", effective, vec![seed], &inputs)?;
    manifest.write(&manifest_path)?;

    match args.what {
        AnalyzeKind::Rd => {
            let mut csv = String::from("step,rd_ratio\n");
            for s in &captures {
                let step = s.step.map_or_else(|| "final".to_string(), |x| x.to_string());
                writeln!(csv, "{step},{:.9}", rd_ratio(s)?).expect("string write");
            }
            out.write("rd.csv", &csv)?;
        }
        AnalyzeKind::Neighbors => {
            if args.top_k == 0 {
                return Err(DartError::Config("--top-k must be at least 1".into()));
            }
            let report = nearest_labels(&model, &spec, args.top_k);
            out.write("neighbors.json", &serde_json::to_string_pretty(&report)?)?;
        }
        AnalyzeKind::Export => {
            let p = out.path("states.csv")?;
            export_states_csv(&captures, &p)?;
            out.record(p);
        }
    }
    manifest.outputs = out.written.clone();
    manifest.finish(&manifest_path)
}
