//! Trial aggregation and report rendering. `report.json` is produced by
//! deterministic serialization of `RunReport`, which is what makes the
//! rescore byte-identity guarantee possible.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::items::TaskKind;
use super::score::{TaskResult, EXTRACTION_RULES_VERSION};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no report found for run {0}")]
    MissingRun(String),
    #[error("unreadable report at {path}: {reason}")]
    Unreadable { path: String, reason: String },
}

/// Per-trial metric values with their mean and sample standard deviation.
/// The deviation uses the n-1 denominator and is absent for a single
/// trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialAggregate {
    pub values: Vec<f64>,
    pub mean: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std: Option<f64>,
}

pub fn aggregate_trials(values: &[f64]) -> TrialAggregate {
    let n = values.len();
    let mean = if n == 0 {
        0.0
    } else {
        values.iter().sum::<f64>() / n as f64
    };
    let std = if n > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Some(var.sqrt())
    } else {
        None
    };
    TrialAggregate {
        values: values.to_vec(),
        mean,
        std,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task: TaskKind,
    pub metric_name: String,
    pub aggregate: TrialAggregate,
    /// Secondary scalars aggregated the same way across trials.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, TrialAggregate>,
    pub unparsed_total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run_id: String,
    pub model: String,
    pub extraction_rules_version: String,
    pub trials: usize,
    pub tasks: Vec<TaskReport>,
}

/// Collapses per-trial task results into one report. Tasks come out in
/// the map's (ordered) key order.
pub fn build_report(
    run_id: &str,
    model: &str,
    results: &BTreeMap<TaskKind, Vec<TaskResult>>,
) -> RunReport {
    let mut tasks = Vec::new();
    let mut trials = 0;
    for (task, trial_results) in results {
        trials = trials.max(trial_results.len());
        let metric_name = trial_results
            .first()
            .map(|r| r.metric_name.clone())
            .unwrap_or_default();
        let values: Vec<f64> = trial_results.iter().map(|r| r.metric).collect();
        let mut extra_values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for result in trial_results {
            for (name, value) in &result.extra {
                extra_values.entry(name.clone()).or_default().push(*value);
            }
        }
        tasks.push(TaskReport {
            task: *task,
            metric_name,
            aggregate: aggregate_trials(&values),
            extra: extra_values
                .into_iter()
                .map(|(name, vals)| (name, aggregate_trials(&vals)))
                .collect(),
            unparsed_total: trial_results.iter().map(|r| r.unparsed).sum(),
        });
    }
    RunReport {
        run_id: run_id.to_string(),
        model: model.to_string(),
        extraction_rules_version: EXTRACTION_RULES_VERSION.to_string(),
        trials,
        tasks,
    }
}

impl RunReport {
    /// Canonical `report.json` bytes. Rescoring the same transcript yields
    /// these exact bytes.
    pub fn to_json_bytes(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("serializes");
        bytes.push(b'\n');
        bytes
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("# Benchmark report: {}\n\n", self.run_id));
        out.push_str(&format!(
            "Model: {}  \nTrials: {}  \nExtraction rules: {}\n\n",
            self.model, self.trials, self.extraction_rules_version
        ));
        out.push_str("| Task | Metric | Mean | Std |\n|---|---|---|---|\n");
        for task in &self.tasks {
            out.push_str(&format!(
                "| {} | {} | {:.4} | {} |\n",
                task.task.slug(),
                task.metric_name,
                task.aggregate.mean,
                task.aggregate
                    .std
                    .map(|s| format!("{s:.4}"))
                    .unwrap_or_else(|| "-".to_string()),
            ));
        }
        out
    }
}

pub fn load_report(path: &Path) -> Result<RunReport, ReportError> {
    let text = std::fs::read_to_string(path).map_err(|_| {
        ReportError::MissingRun(
            path.parent()
                .and_then(|p| p.file_name())
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.display().to_string()),
        )
    })?;
    serde_json::from_str(&text).map_err(|e| ReportError::Unreadable {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

/// Side-by-side markdown comparison of several runs. Tasks absent from a
/// run render as "-", never as zero.
pub fn comparison_markdown(reports: &[RunReport]) -> String {
    let mut tasks: Vec<TaskKind> = reports
        .iter()
        .flat_map(|r| r.tasks.iter().map(|t| t.task))
        .collect();
    tasks.sort();
    tasks.dedup();

    let mut out = String::from("# Run comparison\n\n| Task |");
    for report in reports {
        out.push_str(&format!(" {} |", report.run_id));
    }
    out.push('\n');
    out.push_str("|---|");
    for _ in reports {
        out.push_str("---|");
    }
    out.push('\n');
    for task in tasks {
        out.push_str(&format!("| {} |", task.slug()));
        for report in reports {
            let cell = report
                .tasks
                .iter()
                .find(|t| t.task == task)
                .map(|t| match t.aggregate.std {
                    Some(std) => format!("{:.4} ± {:.4}", t.aggregate.mean, std),
                    None => format!("{:.4}", t.aggregate.mean),
                })
                .unwrap_or_else(|| "-".to_string());
            out.push_str(&format!(" {cell} |"));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_sample_std() {
        let agg = aggregate_trials(&[0.8, 1.0]);
        assert!((agg.mean - 0.9).abs() < 1e-12);
        assert!((agg.std.unwrap() - 0.141_421_356_237_309_5).abs() < 1e-9);
    }

    #[test]
    fn single_trial_has_no_std() {
        let agg = aggregate_trials(&[0.75]);
        assert_eq!(agg.mean, 0.75);
        assert_eq!(agg.std, None);
    }

    #[test]
    fn zero_variance_gives_zero_std() {
        let agg = aggregate_trials(&[0.5; 5]);
        assert_eq!(agg.std, Some(0.0));
    }

    fn sample_result(metric: f64) -> TaskResult {
        TaskResult {
            task: TaskKind::GkMcq,
            metric_name: "accuracy".into(),
            metric,
            extra: BTreeMap::new(),
            items: Vec::new(),
            unparsed: 1,
        }
    }

    #[test]
    fn report_json_is_deterministic() {
        let mut results = BTreeMap::new();
        results.insert(TaskKind::GkMcq, vec![sample_result(0.8), sample_result(1.0)]);
        let a = build_report("r1", "m", &results).to_json_bytes();
        let b = build_report("r1", "m", &results).to_json_bytes();
        assert_eq!(a, b);
        assert!(a.ends_with(b"\n"));
    }

    #[test]
    fn report_round_trips_through_json() {
        let mut results = BTreeMap::new();
        results.insert(TaskKind::GkMcq, vec![sample_result(0.8), sample_result(1.0)]);
        let report = build_report("r1", "m", &results);
        let parsed: RunReport =
            serde_json::from_slice(&report.to_json_bytes()).unwrap();
        assert_eq!(parsed, report);
        assert_eq!(parsed.tasks[0].unparsed_total, 2);
    }

    #[test]
    fn markdown_has_row_per_task() {
        let mut results = BTreeMap::new();
        results.insert(TaskKind::GkMcq, vec![sample_result(0.9)]);
        let md = build_report("r1", "m", &results).to_markdown();
        assert!(md.contains("| gk_mcq | accuracy | 0.9000 | - |"));
    }

    #[test]
    fn comparison_leaves_missing_cells_blank() {
        let mut first = BTreeMap::new();
        first.insert(TaskKind::GkMcq, vec![sample_result(0.8), sample_result(1.0)]);
        let a = build_report("run-a", "m", &first);
        let b = build_report("run-b", "m", &BTreeMap::new());
        let md = comparison_markdown(&[a, b]);
        assert!(md.contains("run-a"));
        assert!(md.contains("| gk_mcq | 0.9000 ± 0.1414 | - |"));
    }

    #[test]
    fn missing_report_file_is_missing_run() {
        let err = load_report(Path::new("/nonexistent/run-z/report.json")).unwrap_err();
        assert!(matches!(err, ReportError::MissingRun(id) if id == "run-z"));
    }
}
