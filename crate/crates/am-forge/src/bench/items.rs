//! Benchmark item schema and the `tasks/<task>.jsonl` loader. Item files
//! are user-supplied; the repository ships the schema and small synthetic
//! fixtures, not the third-party source data.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The five FDM defect classes.
pub const FDM_CLASSES: [&str; 5] = [
    "warping",
    "stringing",
    "cracking",
    "layer shift",
    "off platform",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    GkMcq,
    GkShort,
    Meltpool,
    FdmDefect,
    MachineId,
    LpbfAnomaly,
}

impl TaskKind {
    pub const ALL: [TaskKind; 6] = [
        TaskKind::GkMcq,
        TaskKind::GkShort,
        TaskKind::Meltpool,
        TaskKind::FdmDefect,
        TaskKind::MachineId,
        TaskKind::LpbfAnomaly,
    ];

    pub fn slug(&self) -> &'static str {
        match self {
            TaskKind::GkMcq => "gk_mcq",
            TaskKind::GkShort => "gk_short",
            TaskKind::Meltpool => "meltpool",
            TaskKind::FdmDefect => "fdm_defect",
            TaskKind::MachineId => "machine_id",
            TaskKind::LpbfAnomaly => "lpbf_anomaly",
        }
    }

    /// Whether items of this task carry an image.
    pub fn is_image_task(&self) -> bool {
        matches!(
            self,
            TaskKind::FdmDefect | TaskKind::MachineId | TaskKind::LpbfAnomaly
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroundTruth {
    Choice {
        letter: char,
    },
    Rubric {
        rubric: String,
    },
    Meltpool {
        depth_um: f64,
        length_um: f64,
        width_um: f64,
    },
    DefectClass {
        class: String,
    },
    Machine {
        process: String,
        manufacturer: String,
        name: String,
    },
    Anomalies {
        labels: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkItem {
    pub task: TaskKind,
    pub item_id: String,
    pub prompt_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
    /// MCQ items carry exactly 4 choices labeled A-D by position.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<String>>,
    pub ground_truth: GroundTruth,
}

#[derive(Debug, Error)]
pub enum ItemsError {
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad item on line {line} of {path}: {reason}")]
    BadItem {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("item {item_id} invalid: {reason}")]
    Invalid { item_id: String, reason: String },
}

/// Schema checks beyond what serde enforces.
pub fn validate_item(item: &BenchmarkItem) -> Result<(), ItemsError> {
    let fail = |reason: String| {
        Err(ItemsError::Invalid {
            item_id: item.item_id.clone(),
            reason,
        })
    };
    match (&item.task, &item.ground_truth) {
        (TaskKind::GkMcq, GroundTruth::Choice { letter }) => {
            if !('A'..='D').contains(letter) {
                return fail(format!("choice letter {letter} outside A-D"));
            }
            match &item.choices {
                Some(c) if c.len() == 4 => {}
                _ => return fail("mcq items need exactly 4 choices".to_string()),
            }
        }
        (TaskKind::GkShort, GroundTruth::Rubric { .. }) => {}
        (TaskKind::Meltpool, GroundTruth::Meltpool { .. }) => {}
        (TaskKind::FdmDefect, GroundTruth::DefectClass { class }) => {
            if !FDM_CLASSES.contains(&class.to_lowercase().as_str()) {
                return fail(format!("unknown FDM class {class:?}"));
            }
        }
        (TaskKind::MachineId, GroundTruth::Machine { .. }) => {}
        (TaskKind::LpbfAnomaly, GroundTruth::Anomalies { .. }) => {}
        (task, truth) => {
            return fail(format!(
                "ground truth {truth:?} does not match task {task:?}"
            ))
        }
    }
    if item.task.is_image_task() && item.image_ref.is_none() {
        return fail("image task without image_ref".to_string());
    }
    Ok(())
}

/// Loads and validates one `tasks/<task>.jsonl` file.
pub fn load_items(path: &Path) -> Result<Vec<BenchmarkItem>, ItemsError> {
    let text = fs::read_to_string(path).map_err(|e| ItemsError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut items = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item: BenchmarkItem =
            serde_json::from_str(line).map_err(|e| ItemsError::BadItem {
                path: path.display().to_string(),
                line: i + 1,
                reason: e.to_string(),
            })?;
        validate_item(&item)?;
        items.push(item);
    }
    Ok(items)
}

pub fn write_items(items: &[BenchmarkItem], path: &Path) -> Result<(), ItemsError> {
    let mut file = fs::File::create(path).map_err(|e| ItemsError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    for item in items {
        writeln!(file, "{}", serde_json::to_string(item).expect("serializes")).map_err(|e| {
            ItemsError::Io {
                path: path.display().to_string(),
                source: e,
            }
        })?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mcq_item() -> BenchmarkItem {
        BenchmarkItem {
            task: TaskKind::GkMcq,
            item_id: "q1".into(),
            prompt_text: "Which process melts powder with a laser?".into(),
            image_ref: None,
            choices: Some(vec![
                "FDM".into(),
                "LPBF".into(),
                "Binder jetting".into(),
                "Vat photopolymerization".into(),
            ]),
            ground_truth: GroundTruth::Choice { letter: 'B' },
        }
    }

    #[test]
    fn valid_item_passes() {
        validate_item(&mcq_item()).unwrap();
    }

    #[test]
    fn mcq_needs_four_choices() {
        let mut item = mcq_item();
        item.choices = Some(vec!["one".into()]);
        assert!(validate_item(&item).is_err());
    }

    #[test]
    fn mismatched_truth_rejected() {
        let mut item = mcq_item();
        item.ground_truth = GroundTruth::Rubric {
            rubric: "r".into(),
        };
        assert!(validate_item(&item).is_err());
    }

    #[test]
    fn image_task_requires_image_ref() {
        let item = BenchmarkItem {
            task: TaskKind::FdmDefect,
            item_id: "f1".into(),
            prompt_text: "Classify the defect.".into(),
            image_ref: None,
            choices: None,
            ground_truth: GroundTruth::DefectClass {
                class: "warping".into(),
            },
        };
        assert!(validate_item(&item).is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("gk_mcq.jsonl");
        let items = vec![mcq_item()];
        write_items(&items, &path).unwrap();
        assert_eq!(load_items(&path).unwrap(), items);
    }
}
