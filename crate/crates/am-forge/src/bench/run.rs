//! Networked benchmark runner. Every model interaction is appended to a
//! transcript, and the report is always computed by re-scoring that
//! transcript, so `bench rescore` on the saved file reproduces the exact
//! same bytes without a server.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::items::{BenchmarkItem, GroundTruth, TaskKind, FDM_CLASSES};
use super::report::{build_report, RunReport};
use super::score::{self, ScoreError, TaskResult};
use crate::llm::{ChatClient, ChatRequest, ClientError, Message, Part, RetryPolicy, Role};

#[derive(Debug, Clone)]
pub struct EndpointConfig {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl EndpointConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        EndpointConfig {
            endpoint: endpoint.into(),
            model: model.into(),
            temperature: 0.0,
            max_tokens: 1024,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub trials: usize,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            trials: 5,
            max_in_flight: 4,
            retry: RetryPolicy::default(),
        }
    }
}

/// One model interaction, as written to `transcript.jsonl`. The timestamp
/// is informational only; scoring never reads it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub trial: usize,
    pub task: TaskKind,
    pub item_id: String,
    pub prompt: String,
    pub reply: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub judge_replies: Vec<String>,
    pub timestamp_ms: u64,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("judge endpoint unavailable: {0}")]
    JudgeUnavailable(String),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("transcript is missing task {0:?} for some trials")]
    IncompleteTranscript(TaskKind),
    #[error("transcript references unknown item {0}")]
    UnknownItem(String),
}

/// Task-specific answer-format instructions appended to the item prompt.
pub fn build_prompt(item: &BenchmarkItem) -> String {
    match item.task {
        TaskKind::GkMcq => {
            let mut prompt = item.prompt_text.clone();
            if let Some(choices) = &item.choices {
                for (i, choice) in choices.iter().enumerate() {
                    let letter = (b'A' + i as u8) as char;
                    prompt.push_str(&format!("\n{letter}. {choice}"));
                }
            }
            prompt.push_str("\nAnswer with the single letter of the correct choice.");
            prompt
        }
        TaskKind::GkShort => format!("{}\nAnswer in a few sentences.", item.prompt_text),
        TaskKind::Meltpool => format!(
            "{}\nReport the melt pool dimensions in microns, one per line, as\n\
             Depth: <number>\nLength: <number>\nWidth: <number>",
            item.prompt_text
        ),
        TaskKind::FdmDefect => format!(
            "{}\nName exactly one defect class from: {}.",
            item.prompt_text,
            FDM_CLASSES.join(", ")
        ),
        TaskKind::MachineId => format!(
            "{}\nAnswer with three lines:\nProcess: <process>\nManufacturer: <manufacturer>\nName: <machine name>",
            item.prompt_text
        ),
        TaskKind::LpbfAnomaly => format!(
            "{}\nList every anomaly type visible, or 'none' if the layer is nominal.",
            item.prompt_text
        ),
    }
}

/// Grading prompt handed to the judge model for one short-answer item.
pub fn build_judge_prompt(item: &BenchmarkItem, reply: &str) -> String {
    let rubric = match &item.ground_truth {
        GroundTruth::Rubric { rubric } => rubric.as_str(),
        _ => "",
    };
    format!(
        "Grade the answer below against the rubric.\n\nQuestion:\n{}\n\nRubric:\n{}\n\n\
         Answer:\n{}\n\nExplain briefly, then finish with a line containing only\n\
         SCORE: 1 (meets the rubric) or SCORE: 0 (does not).",
        item.prompt_text, rubric, reply
    )
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn item_request(
    config: &EndpointConfig,
    item: &BenchmarkItem,
    assets_root: Option<&Path>,
) -> ChatRequest {
    let prompt = build_prompt(item);
    let mut request = ChatRequest::new(config.endpoint.clone(), config.model.clone());
    request.temperature = config.temperature;
    request.max_tokens = config.max_tokens;
    let mut parts = vec![Part::Text(prompt)];
    if let (Some(root), Some(image_ref)) = (assets_root, item.image_ref.as_deref()) {
        let path = root.join(image_ref);
        if let Ok(bytes) = fs::read(&path) {
            let media_type = match path.extension().and_then(|e| e.to_str()) {
                Some("jpg") | Some("jpeg") => "image/jpeg",
                _ => "image/png",
            };
            parts.push(Part::Image {
                bytes,
                media_type: media_type.to_string(),
            });
        }
    }
    request.messages.push(Message {
        role: Role::User,
        parts,
    });
    request
}

/// Runs one trial of one task: queries the model for every item, runs the
/// judge for short answers (with one re-ask on an unparseable grade), and
/// returns the transcript rows. Scores come later from the transcript.
pub fn run_task(
    client: &ChatClient,
    config: &EndpointConfig,
    judge: &EndpointConfig,
    items: &[BenchmarkItem],
    options: &RunOptions,
    assets_root: Option<&Path>,
    trial: usize,
) -> Result<Vec<TranscriptEntry>, RunError> {
    let requests: Vec<ChatRequest> = items
        .iter()
        .map(|item| item_request(config, item, assets_root))
        .collect();
    let results = client.complete_batch(&requests, &options.retry, options.max_in_flight);

    let mut entries: Vec<TranscriptEntry> = items
        .iter()
        .zip(&results)
        .map(|(item, result)| TranscriptEntry {
            trial,
            task: item.task,
            item_id: item.item_id.clone(),
            prompt: build_prompt(item),
            reply: result.as_ref().ok().map(|r| r.text.clone()),
            error: result.as_ref().err().map(|e| e.to_string()),
            judge_replies: Vec::new(),
            timestamp_ms: now_ms(),
        })
        .collect();

    if items.first().map(|i| i.task) == Some(TaskKind::GkShort) {
        judge_pass(client, judge, items, options, &mut entries)?;
    }
    Ok(entries)
}

/// Two judge rounds: everyone once, then one re-ask for entries whose
/// grade did not parse. A judge that answers nothing at all aborts the
/// task rather than silently zeroing it.
fn judge_pass(
    client: &ChatClient,
    judge: &EndpointConfig,
    items: &[BenchmarkItem],
    options: &RunOptions,
    entries: &mut [TranscriptEntry],
) -> Result<(), RunError> {
    for round in 0..2 {
        let pending: Vec<usize> = entries
            .iter()
            .enumerate()
            .filter(|(_, e)| {
                e.reply.is_some()
                    && !e.judge_replies.iter().any(|r| score::parse_judge_score(r).is_some())
            })
            .map(|(i, _)| i)
            .collect();
        if pending.is_empty() {
            break;
        }
        let requests: Vec<ChatRequest> = pending
            .iter()
            .map(|&i| {
                let mut request =
                    ChatRequest::new(judge.endpoint.clone(), judge.model.clone())
                        .user_text(build_judge_prompt(&items[i], entries[i].reply.as_deref().unwrap()));
                request.temperature = judge.temperature;
                request.max_tokens = judge.max_tokens;
                request
            })
            .collect();
        let results = client.complete_batch(&requests, &options.retry, options.max_in_flight);
        if round == 0 && results.iter().all(|r| r.is_err()) {
            let first = results
                .iter()
                .find_map(|r| r.as_ref().err())
                .map(ClientError::to_string)
                .unwrap_or_default();
            return Err(RunError::JudgeUnavailable(first));
        }
        for (&i, result) in pending.iter().zip(&results) {
            if let Ok(resp) = result {
                entries[i].judge_replies.push(resp.text.clone());
            }
        }
    }
    Ok(())
}

/// Runs every supplied task for the configured number of trials and
/// builds the report by re-scoring the transcript it just produced, so a
/// later `rescore` goes through the identical code path.
pub fn run_all_tasks(
    client: &ChatClient,
    config: &EndpointConfig,
    judge: &EndpointConfig,
    items_by_task: &BTreeMap<TaskKind, Vec<BenchmarkItem>>,
    options: &RunOptions,
    assets_root: Option<&Path>,
    run_id: &str,
) -> Result<(RunReport, Vec<TranscriptEntry>), RunError> {
    let mut transcript = Vec::new();
    for (_, items) in items_by_task.iter() {
        for trial in 0..options.trials {
            let entries = run_task(client, config, judge, items, options, assets_root, trial)?;
            transcript.extend(entries);
        }
    }
    let report = rescore_transcript(items_by_task, &transcript, run_id, &config.model)?;
    Ok((report, transcript))
}

/// Pure re-scoring of a transcript: groups entries by task and trial,
/// aligns replies with the item list, and rebuilds the report.
pub fn rescore_transcript(
    items_by_task: &BTreeMap<TaskKind, Vec<BenchmarkItem>>,
    transcript: &[TranscriptEntry],
    run_id: &str,
    model: &str,
) -> Result<RunReport, RunError> {
    let mut results: BTreeMap<TaskKind, Vec<TaskResult>> = BTreeMap::new();
    for (task, items) in items_by_task.iter() {
        let index: BTreeMap<&str, usize> = items
            .iter()
            .enumerate()
            .map(|(i, item)| (item.item_id.as_str(), i))
            .collect();
        let mut trials: BTreeMap<usize, Vec<&TranscriptEntry>> = BTreeMap::new();
        for entry in transcript.iter().filter(|e| e.task == *task) {
            if !index.contains_key(entry.item_id.as_str()) {
                return Err(RunError::UnknownItem(entry.item_id.clone()));
            }
            trials.entry(entry.trial).or_default().push(entry);
        }
        for (_, entries) in trials {
            let mut replies: Vec<Option<String>> = vec![None; items.len()];
            let mut judge_replies: Vec<Vec<String>> = vec![Vec::new(); items.len()];
            for entry in entries {
                let i = index[entry.item_id.as_str()];
                replies[i] = entry.reply.clone();
                judge_replies[i] = entry.judge_replies.clone();
            }
            let result = match task {
                TaskKind::GkMcq => score::score_mcq(items, &replies)?,
                TaskKind::GkShort => score::score_short_answer(items, &judge_replies)?,
                TaskKind::Meltpool => score::score_meltpool(items, &replies)?,
                TaskKind::FdmDefect => score::score_fdm(items, &replies)?,
                TaskKind::MachineId => score::score_machine_id(items, &replies)?,
                TaskKind::LpbfAnomaly => score::score_lpbf(items, &replies)?,
            };
            results.entry(*task).or_default().push(result);
        }
    }
    Ok(build_report(run_id, model, &results))
}

pub fn write_transcript(entries: &[TranscriptEntry], path: &Path) -> Result<(), RunError> {
    let io_err = |e: std::io::Error| RunError::Io {
        path: path.display().to_string(),
        source: e,
    };
    let mut file = fs::File::create(path).map_err(io_err)?;
    for entry in entries {
        writeln!(file, "{}", serde_json::to_string(entry).expect("serializes")).map_err(io_err)?;
    }
    Ok(())
}

pub fn read_transcript(path: &Path) -> Result<Vec<TranscriptEntry>, RunError> {
    let text = fs::read_to_string(path).map_err(|e| RunError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| RunError::Io {
                path: path.display().to_string(),
                source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
            })
        })
        .collect()
}
