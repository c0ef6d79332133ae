//! Few-shot evaluation protocol: tasks, K-shot episodes, the method
//! registry, grid search and per-seed reports.

mod episode;
mod grid;
mod method;
mod protocol;
mod report;
mod task;

pub use episode::{sample_k_shot, Episode, TestSet, DEFAULT_SEEDS};
pub use grid::GridSpace;
pub use method::{HeadMethod, HeadScorer, Method, PromptMethod, Registry, TrainedRun, HEAD_PARAMS};
pub use protocol::{
    grid_search, load_or_pretrain, run_ablation_suite, run_protocol, run_seed, seed_list, Protocol, SeedOutcome,
    ABLATION_ARMS, LM_SEED,
};
pub use report::{
    aggregates_to_json, csv_error, mean_std, micro_f1, reports_to_csv, rows_from_csv, Aggregate, ReportRow, RunReport,
};
pub use task::{Task, TaskKind, POOL_PER_CLASS, TASK_SEED, TEST_PER_CLASS};
