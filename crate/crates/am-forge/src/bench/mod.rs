//! The six additive-manufacturing benchmark tasks: item schema, pure
//! scoring against saved reply strings, the networked runner, and trial
//! aggregation / reporting.
//!
//! Scoring is a pure function of (reply strings, ground truth): re-scoring
//! a saved transcript reproduces identical numbers, which is what the
//! `bench rescore` flow relies on.

pub mod items;
pub mod report;
pub mod run;
pub mod score;

pub use items::{load_items, validate_item, write_items, BenchmarkItem, GroundTruth, TaskKind};
pub use report::{
    aggregate_trials, build_report, comparison_markdown, load_report, ReportError, RunReport,
    TaskReport, TrialAggregate,
};
pub use run::{
    read_transcript, rescore_transcript, run_all_tasks, run_task, write_transcript,
    EndpointConfig, RunError, RunOptions, TranscriptEntry,
};
pub use score::{
    ConfusionCounts, ItemScore, ScoreError, TaskResult, EXTRACTION_RULES_VERSION,
};
