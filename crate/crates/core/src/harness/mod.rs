//! Experiment driver: configuration, training runs, evaluation, the
//! two-mode switching demonstration and plot-data export.

pub mod config;
pub mod demo;
pub mod eval;
pub mod export;
pub mod train;

pub use config::{desk_sac, resolve_contexts, EvalSettings, ExperimentConfig, ModelKind, ModelSpec};
pub use demo::{demo_example2, DemoConfig, DemoReport, PolicySummary};
pub use eval::{
    aggregate, parse_eval_classes, rollout, run_eval, write_eval, ClassReport, ContextSource, Controller,
    EpisodeRecord, EvalClass, EvalOutput, EvalReport, RolloutLog, RolloutOptions,
};
pub use export::{export_plot_data, ExportKind};
pub use train::{evaluate_agent, new_trainer, train, EvalPoint, TrainSummary};
