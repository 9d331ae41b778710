//! Training, evaluation and the experiment drivers built on them.

mod audit;
mod checks;
mod evaluate;
mod experiments;
mod parallel;
mod stats;
mod train;


pub use audit::{invariance_audit, swap_context_columns, swap_context_rows, AuditReport, PositionTagged, Transform, Violation};
pub use checks::{model_gradcheck, oracle_check, GradcheckSummary, OracleSummary};
pub use evaluate::{evaluate, Bucket, EvalReport, OraclePolicy, Policy, RandomPolicy, Scorer, TrainedModel};
pub use experiments::{
    ablation_suite, nested_subsets, size_sweep, variant_config, AblationReport, AblationRow, RunCache, SeedResult, SweepPoint,
    SweepReport,
};
pub use parallel::{par_map, Execution};
pub use stats::{binomial_upper_tail, median};
pub use train::{
    load_model, loss_and_accuracy, overfit_one, save_run, train, train_on, DataPaths, EpochRecord, RunReport, TrainConfig,
    TrainFile, CHECKPOINT_FILE, MODEL_CONFIG_FILE, REPORT_FILE,
};
