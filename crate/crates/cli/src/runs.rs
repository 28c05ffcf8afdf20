//! Run plumbing shared by the commands: the output layout, provenance logs,
//! and provider construction with optional cassette record/replay.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{Context, Result};
use dirscribe_core::corpus::{DirectoryId, Producer, ProvenanceTag};
use dirscribe_core::llmclient::{CassetteProvider, CassetteRecorder, Client, Provider};
use dirscribe_core::pipeline::RequestRecord;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

/// `record:PATH` captures live exchanges into a cassette; `replay:PATH`
/// serves a recorded cassette with no network access.
#[derive(Debug, Clone)]
pub enum CassetteSpec {
    Record(PathBuf),
    Replay(PathBuf),
}

impl FromStr for CassetteSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            Some(("record", path)) if !path.is_empty() => Ok(CassetteSpec::Record(path.into())),
            Some(("replay", path)) if !path.is_empty() => Ok(CassetteSpec::Replay(path.into())),
            _ => Err(format!("expected record:PATH or replay:PATH, got {s:?}")),
        }
    }
}

/// Artifacts live under `<out>/<provider name>/<task>/`; reusing the
/// provider name as run id makes reruns resume instead of fork.
pub fn task_dir(config: &RunConfig, task: &str) -> PathBuf {
    config.out.join(&config.provider.name).join(task)
}

pub fn build_provider(
    config: &RunConfig,
    cassette: Option<&CassetteSpec>,
) -> Result<Box<dyn Provider>> {
    match cassette {
        None => Ok(Box::new(Client::from_config(&config.provider)?)),
        Some(CassetteSpec::Record(path)) => {
            let recorder = CassetteRecorder::new(path)?;
            Ok(Box::new(Client::from_config(&config.provider)?.with_recorder(recorder)))
        }
        Some(CassetteSpec::Replay(path)) => Ok(Box::new(CassetteProvider::from_file(path)?)),
    }
}

/// One line of a provenance log. The first line summarizes the whole
/// directory run; the rest record the individual requests. No wall-clock
/// timestamps, so a resumed rerun rewrites the identical log.
#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogLine {
    Run {
        directory: String,
        task: String,
        model: String,
        prompt: String,
        elapsed_seconds: f64,
        input_tokens: u64,
        output_tokens: u64,
        requests: usize,
    },
    Request {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        page: Option<u32>,
        model: String,
        prompt: String,
        elapsed_seconds: f64,
        input_tokens: u64,
        output_tokens: u64,
        attempt_count: u32,
    },
}

pub fn write_provenance(
    path: &Path,
    directory: &DirectoryId,
    task: &str,
    tag: &ProvenanceTag,
    requests: &[RequestRecord],
) -> Result<()> {
    let model = match &tag.producer {
        Producer::Model { model_id } => model_id.clone(),
        other => unreachable!("generated artifacts carry a model producer, got {other:?}"),
    };
    let prompt = tag.prompt_id.clone().unwrap_or_default();

    let mut lines = vec![LogLine::Run {
        directory: directory.to_string(),
        task: task.to_string(),
        model: model.clone(),
        prompt: prompt.clone(),
        elapsed_seconds: tag.elapsed_seconds.unwrap_or(0.0),
        input_tokens: tag.input_tokens.unwrap_or(0),
        output_tokens: tag.output_tokens.unwrap_or(0),
        requests: requests.len(),
    }];
    for record in requests {
        lines.push(LogLine::Request {
            page: record.page_index,
            model: record.stored.model_id.clone(),
            prompt: record.stored.prompt_id.clone(),
            elapsed_seconds: record.stored.elapsed_seconds,
            input_tokens: record.stored.input_tokens,
            output_tokens: record.stored.output_tokens,
            attempt_count: record.stored.attempt_count,
        });
    }

    let mut text = String::new();
    for line in &lines {
        text.push_str(&serde_json::to_string(line).expect("log lines serialize"));
        text.push('\n');
    }
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

pub fn read_provenance(path: &Path) -> Result<Vec<LogLine>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    text.lines()
        .map(|line| {
            serde_json::from_str(line)
                .with_context(|| format!("malformed provenance line in {}", path.display()))
        })
        .collect()
}

/// Prints what each request cost in time, flagging responses served from
/// the page store.
pub fn print_request_timings(directory: &DirectoryId, requests: &[RequestRecord]) {
    for record in requests {
        let cached = if record.from_cache { " (cached)" } else { "" };
        match record.page_index {
            Some(page) => println!(
                "{directory} page {page}: {:.2}s{cached}",
                record.stored.elapsed_seconds
            ),
            None => println!("{directory}: {:.2}s{cached}", record.stored.elapsed_seconds),
        }
    }
}
