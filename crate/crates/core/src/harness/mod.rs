//! Experiment plumbing behind the `arq` binary: run configs, the
//! acting/learning loop, evaluation, ablation plans, gradient suites and
//! activation inspection.

mod ablate;
mod checks;
mod config;
mod inspect;
mod train;

pub use ablate::{
    dqn_params, format_table, match_param_count, network_params, run_plan, scaled_dims, AblationPlan, AblationRow,
    PlannedRun, ScaleStudy, Variant, PARAM_MATCH_TOL,
};
pub use checks::{
    gradient_suite, locality_suite, random_cell_config, random_locality_case, FamilyResult, SuiteReport, CONDITIONINGS,
    KINDS,
};
pub use config::{apply_override, hex, Precision, RunConfig, DEFAULT_OUT_DIR, OUT_DIR_ENV};
pub use inspect::{inspect, InspectTable, NeuronRow, DEFAULT_TOP_K};
pub use train::{
    evaluate, last_window_mean, load_agent, read_metrics, seed_dir, train, train_seed, EvalReport, Record, RunSummary,
    SeedSummary, SUMMARY_WINDOW,
};
