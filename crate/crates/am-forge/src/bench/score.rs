//! Pure scoring of saved reply strings against ground truth. The
//! answer-extraction rules here affect scores, so they are versioned and
//! the version is stamped into every report.

use std::collections::BTreeMap;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::items::{BenchmarkItem, GroundTruth, TaskKind, FDM_CLASSES};

/// Bump when any extraction or matching rule changes.
pub const EXTRACTION_RULES_VERSION: &str = "extract-v1";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScoreError {
    #[error("no melt pool reply could be parsed")]
    AllUnparseable,
    #[error("item {0} has ground truth of the wrong kind")]
    WrongTruthKind(String),
}

/// Globally pooled true/false positive and false negative counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    /// `F1 = 2 TP / (2 TP + FP + FN)`, with the empty convention F1 = 1
    /// when all counts are zero.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemScore {
    pub item_id: String,
    pub score: f64,
    /// False when the reply was missing or could not be parsed.
    pub parsed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task: TaskKind,
    pub metric_name: String,
    pub metric: f64,
    /// Secondary scalars (per-dimension RMSE, confusion counts, ...).
    pub extra: BTreeMap<String, f64>,
    pub items: Vec<ItemScore>,
    pub unparsed: usize,
}

/// Lowercases and strips punctuation, collapsing whitespace.
pub fn normalize(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut last_space = true;
    for ch in s.chars() {
        if ch.is_alphanumeric() {
            out.extend(ch.to_lowercase());
            last_space = false;
        } else if !last_space {
            out.push(' ');
            last_space = true;
        }
    }
    out.trim_end().to_string()
}

/// First standalone letter A-D in the reply.
pub fn extract_mcq_letter(reply: &str) -> Option<char> {
    let re = Regex::new(r"\b([A-D])\b").unwrap();
    re.captures(reply)
        .map(|c| c.get(1).unwrap().as_str().chars().next().unwrap())
}

/// Last `SCORE: 0` / `SCORE: 1` line in a judge reply.
pub fn parse_judge_score(reply: &str) -> Option<u8> {
    let re = Regex::new(r"(?im)^\s*SCORE:\s*([01])\s*$").unwrap();
    re.captures_iter(reply)
        .last()
        .map(|c| c[1].parse().unwrap())
}

/// Three labeled numbers (depth, length, width) in microns.
pub fn parse_meltpool_dims(reply: &str) -> Option<[f64; 3]> {
    let dim = |name: &str| -> Option<f64> {
        let re = Regex::new(&format!(r"(?i){name}\D*?(-?\d+(?:\.\d+)?)")).unwrap();
        re.captures(reply).and_then(|c| c[1].parse().ok())
    };
    Some([dim("depth")?, dim("length")?, dim("width")?])
}

/// Labeled `Process:` / `Manufacturer:` / `Name:` lines.
pub fn parse_machine_fields(reply: &str) -> (Option<String>, Option<String>, Option<String>) {
    let field = |name: &str| -> Option<String> {
        let re = Regex::new(&format!(r"(?im)^\s*{name}\s*:\s*(.+)$")).unwrap();
        re.captures(reply).map(|c| c[1].trim().to_string())
    };
    (field("process"), field("manufacturer"), field("name"))
}

fn mean(values: impl Iterator<Item = f64>, count: usize) -> f64 {
    if count == 0 {
        0.0
    } else {
        values.sum::<f64>() / count as f64
    }
}

/// MCQ accuracy. Unparseable or missing replies score 0.
pub fn score_mcq(
    items: &[BenchmarkItem],
    replies: &[Option<String>],
) -> Result<TaskResult, ScoreError> {
    let mut scores = Vec::with_capacity(items.len());
    let mut unparsed = 0;
    for (item, reply) in items.iter().zip(replies) {
        let GroundTruth::Choice { letter } = &item.ground_truth else {
            return Err(ScoreError::WrongTruthKind(item.item_id.clone()));
        };
        let extracted = reply.as_deref().and_then(extract_mcq_letter);
        let parsed = extracted.is_some();
        if !parsed {
            unparsed += 1;
        }
        scores.push(ItemScore {
            item_id: item.item_id.clone(),
            score: if extracted == Some(*letter) { 1.0 } else { 0.0 },
            parsed,
        });
    }
    let metric = mean(scores.iter().map(|s| s.score), scores.len());
    Ok(TaskResult {
        task: TaskKind::GkMcq,
        metric_name: "accuracy".into(),
        metric,
        extra: BTreeMap::new(),
        items: scores,
        unparsed,
    })
}

/// Rubric points from judge replies: per item, the first reply carrying a
/// parseable score line wins; none parseable scores 0. Total is the sum
/// (1 point per item).
pub fn score_short_answer(
    items: &[BenchmarkItem],
    judge_replies: &[Vec<String>],
) -> Result<TaskResult, ScoreError> {
    let mut scores = Vec::with_capacity(items.len());
    let mut unparsed = 0;
    for (item, replies) in items.iter().zip(judge_replies) {
        if !matches!(item.ground_truth, GroundTruth::Rubric { .. }) {
            return Err(ScoreError::WrongTruthKind(item.item_id.clone()));
        }
        let parsed_score = replies.iter().find_map(|r| parse_judge_score(r));
        if parsed_score.is_none() {
            unparsed += 1;
        }
        scores.push(ItemScore {
            item_id: item.item_id.clone(),
            score: parsed_score.unwrap_or(0) as f64,
            parsed: parsed_score.is_some(),
        });
    }
    let metric = scores.iter().map(|s| s.score).sum();
    Ok(TaskResult {
        task: TaskKind::GkShort,
        metric_name: "points".into(),
        metric,
        extra: BTreeMap::new(),
        items: scores,
        unparsed,
    })
}

/// RMSE in microns per dimension plus pooled over all (item, dimension)
/// pairs. Unparseable items are excluded and counted.
pub fn score_meltpool(
    items: &[BenchmarkItem],
    replies: &[Option<String>],
) -> Result<TaskResult, ScoreError> {
    let mut scores = Vec::with_capacity(items.len());
    let mut unparsed = 0;
    let mut sq = [0.0f64; 3];
    let mut pooled_sq = 0.0f64;
    let mut parsed_count = 0usize;
    for (item, reply) in items.iter().zip(replies) {
        let GroundTruth::Meltpool {
            depth_um,
            length_um,
            width_um,
        } = &item.ground_truth
        else {
            return Err(ScoreError::WrongTruthKind(item.item_id.clone()));
        };
        let dims = reply.as_deref().and_then(parse_meltpool_dims);
        match dims {
            Some(pred) => {
                parsed_count += 1;
                let truth = [*depth_um, *length_um, *width_um];
                let mut item_sq = 0.0;
                for d in 0..3 {
                    let e = (pred[d] - truth[d]).powi(2);
                    sq[d] += e;
                    pooled_sq += e;
                    item_sq += e;
                }
                scores.push(ItemScore {
                    item_id: item.item_id.clone(),
                    score: (item_sq / 3.0).sqrt(),
                    parsed: true,
                });
            }
            None => {
                unparsed += 1;
                scores.push(ItemScore {
                    item_id: item.item_id.clone(),
                    score: f64::NAN,
                    parsed: false,
                });
            }
        }
    }
    if parsed_count == 0 {
        return Err(ScoreError::AllUnparseable);
    }
    let n = parsed_count as f64;
    let mut extra = BTreeMap::new();
    for (name, total) in ["rmse_depth", "rmse_length", "rmse_width"].iter().zip(sq) {
        extra.insert(name.to_string(), (total / n).sqrt());
    }
    extra.insert("unparsed_rate".into(), unparsed as f64 / items.len() as f64);
    let pooled = (pooled_sq / (3.0 * n)).sqrt();
    Ok(TaskResult {
        task: TaskKind::Meltpool,
        metric_name: "rmse_um".into(),
        metric: pooled,
        extra,
        items: scores,
        unparsed,
    })
}

/// The reply must name exactly one defect class; naming several is
/// ambiguous and scores 0. Matching is case-insensitive after
/// normalization.
pub fn score_fdm(
    items: &[BenchmarkItem],
    replies: &[Option<String>],
) -> Result<TaskResult, ScoreError> {
    let mut scores = Vec::with_capacity(items.len());
    let mut unparsed = 0;
    for (item, reply) in items.iter().zip(replies) {
        let GroundTruth::DefectClass { class } = &item.ground_truth else {
            return Err(ScoreError::WrongTruthKind(item.item_id.clone()));
        };
        let truth = normalize(class);
        let predicted = reply.as_deref().map(normalize).and_then(|norm| {
            if FDM_CLASSES.contains(&norm.as_str()) {
                return Some(norm);
            }
            let mentioned: Vec<&str> = FDM_CLASSES
                .iter()
                .copied()
                .filter(|c| norm.contains(c))
                .collect();
            match mentioned.as_slice() {
                [one] => Some(one.to_string()),
                _ => None,
            }
        });
        let parsed = predicted.is_some();
        if !parsed {
            unparsed += 1;
        }
        scores.push(ItemScore {
            item_id: item.item_id.clone(),
            score: if predicted.as_deref() == Some(truth.as_str()) {
                1.0
            } else {
                0.0
            },
            parsed,
        });
    }
    let metric = mean(scores.iter().map(|s| s.score), scores.len());
    Ok(TaskResult {
        task: TaskKind::FdmDefect,
        metric_name: "accuracy".into(),
        metric,
        extra: BTreeMap::new(),
        items: scores,
        unparsed,
    })
}

/// Half the weight on the process, a quarter each on manufacturer and
/// machine name, so item scores land exactly on {0, .25, .5, .75, 1}.
pub fn score_machine_id(
    items: &[BenchmarkItem],
    replies: &[Option<String>],
) -> Result<TaskResult, ScoreError> {
    let mut scores = Vec::with_capacity(items.len());
    let mut unparsed = 0;
    for (item, reply) in items.iter().zip(replies) {
        let GroundTruth::Machine {
            process,
            manufacturer,
            name,
        } = &item.ground_truth
        else {
            return Err(ScoreError::WrongTruthKind(item.item_id.clone()));
        };
        let mut score = 0.0;
        let mut parsed = false;
        if let Some(reply) = reply.as_deref() {
            let (p, m, n) = parse_machine_fields(reply);
            parsed = p.is_some() || m.is_some() || n.is_some();
            let matches = |pred: &Option<String>, truth: &str| {
                pred.as_deref()
                    .is_some_and(|p| normalize(p) == normalize(truth))
            };
            if matches(&p, process) {
                score += 0.5;
            }
            if matches(&m, manufacturer) {
                score += 0.25;
            }
            if matches(&n, name) {
                score += 0.25;
            }
        }
        if !parsed {
            unparsed += 1;
        }
        scores.push(ItemScore {
            item_id: item.item_id.clone(),
            score,
            parsed,
        });
    }
    let metric = mean(scores.iter().map(|s| s.score), scores.len());
    Ok(TaskResult {
        task: TaskKind::MachineId,
        metric_name: "weighted_accuracy".into(),
        metric,
        extra: BTreeMap::new(),
        items: scores,
        unparsed,
    })
}

/// Label vocabulary over all items' truth sets, data-driven.
pub fn anomaly_vocabulary(items: &[BenchmarkItem]) -> Vec<String> {
    let mut vocab: Vec<String> = items
        .iter()
        .filter_map(|item| match &item.ground_truth {
            GroundTruth::Anomalies { labels } => Some(labels.iter().map(|l| normalize(l))),
            _ => None,
        })
        .flatten()
        .collect();
    vocab.sort();
    vocab.dedup();
    vocab
}

/// Micro-F1 over all (item, label) pairs. A predicted label is any
/// vocabulary label whose normalized name appears in the normalized
/// reply; a missing reply counts every truth label as a false negative.
pub fn score_lpbf(
    items: &[BenchmarkItem],
    replies: &[Option<String>],
) -> Result<TaskResult, ScoreError> {
    let vocab = anomaly_vocabulary(items);
    let mut counts = ConfusionCounts::default();
    let mut scores = Vec::with_capacity(items.len());
    let mut unparsed = 0;
    for (item, reply) in items.iter().zip(replies) {
        let GroundTruth::Anomalies { labels } = &item.ground_truth else {
            return Err(ScoreError::WrongTruthKind(item.item_id.clone()));
        };
        let truth: Vec<String> = labels.iter().map(|l| normalize(l)).collect();
        let predicted: Vec<String> = match reply.as_deref() {
            Some(r) => {
                let norm = normalize(r);
                vocab
                    .iter()
                    .filter(|label| norm.contains(label.as_str()))
                    .cloned()
                    .collect()
            }
            None => {
                unparsed += 1;
                Vec::new()
            }
        };
        let mut item_counts = ConfusionCounts::default();
        for label in &vocab {
            let in_truth = truth.contains(label);
            let in_pred = predicted.contains(label);
            match (in_truth, in_pred) {
                (true, true) => item_counts.tp += 1,
                (false, true) => item_counts.fp += 1,
                (true, false) => item_counts.fn_ += 1,
                (false, false) => {}
            }
        }
        counts.tp += item_counts.tp;
        counts.fp += item_counts.fp;
        counts.fn_ += item_counts.fn_;
        scores.push(ItemScore {
            item_id: item.item_id.clone(),
            score: item_counts.f1(),
            parsed: reply.is_some(),
        });
    }
    let mut extra = BTreeMap::new();
    extra.insert("tp".into(), counts.tp as f64);
    extra.insert("fp".into(), counts.fp as f64);
    extra.insert("fn".into(), counts.fn_ as f64);
    Ok(TaskResult {
        task: TaskKind::LpbfAnomaly,
        metric_name: "micro_f1".into(),
        metric: counts.f1(),
        extra,
        items: scores,
        unparsed,
    })
}
