//! Page-by-page orchestration of the three tasks: transcription from the
//! image, multimodal post-correction of a baseline transcription, and
//! entity extraction in three input modes. Per-page results are persisted
//! as they arrive so interrupted runs resume instead of re-requesting.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    join_page_texts, DirectoryId, PageImage, ProvenanceTag, TaskKind, Transcription,
    TranscriptionScope,
};
pub use crate::dataset::{
    csv_to_dataset, dataset_to_csv, DatasetError, EntryDataset, EntryRecord, Variable, CSV_HEADER,
};
use crate::llmclient::{ClientError, ModelRequest, Provider};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("template {template_id}: {message}")]
    Template { template_id: String, message: String },
    #[error("no pages to process")]
    EmptyPages,
    #[error("page {page_index} of {directory} failed")]
    PageFailed {
        directory: String,
        page_index: u32,
        #[source]
        source: ClientError,
    },
    #[error("request for {directory} failed")]
    RequestFailed {
        directory: String,
        #[source]
        source: ClientError,
    },
    #[error("{directory}: {pages} page images but {noisy} baseline page texts")]
    PageCountMismatch {
        directory: String,
        pages: usize,
        noisy: usize,
    },
    #[error("{context}")]
    Parse {
        context: String,
        #[source]
        source: JsonParseError,
        /// The verbatim model output that failed to parse.
        raw: String,
    },
    #[error("mode {mode} needs {needs}")]
    ModeMismatch { mode: NerMode, needs: &'static str },
    #[error("page store {path}")]
    Store {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error, PartialEq)]
pub enum JsonParseError {
    #[error("not a JSON array (offset {offset})")]
    NotAnArray { offset: usize },
    #[error("invalid JSON at offset {offset}: {message}")]
    InvalidJson { offset: usize, message: String },
    #[error("record {index} is not an object")]
    NotAnObject { index: usize },
    #[error("record {index}: unknown key {key:?}")]
    UnknownKey { index: usize, key: String },
    #[error("record {index}: missing keys: {missing}")]
    MissingKeys { index: usize, missing: String },
    #[error("record {index}: value of {key:?} must be a string or null")]
    WrongType { index: usize, key: String },
    #[error("record {index}: all four fields are null")]
    AllNull { index: usize },
}

/// A prompt with `{{NAME}}` placeholders. Placeholders are discovered by
/// scanning the body, so everything that looks like one is accounted for.
#[derive(Debug, Clone)]
pub struct PromptTemplate {
    pub template_id: String,
    body: String,
    placeholders: BTreeSet<String>,
}

pub const OCR_TEXT_PLACEHOLDER: &str = "OCR_TEXT";

/// The marker line preceding the baseline text in the shipped
/// post-correction prompt.
pub const POST_CORRECTION_MARKER: &str = "-- OCR Output (Transkribus) --";

impl PromptTemplate {
    /// Trailing whitespace of the body is trimmed so substituted or appended
    /// input lands exactly where the template ends.
    pub fn new(template_id: impl Into<String>, body: &str) -> Result<Self, PipelineError> {
        let template_id = template_id.into();
        let body = body.trim_end().to_string();
        let placeholders = scan_placeholders(&body).map_err(|message| {
            PipelineError::Template { template_id: template_id.clone(), message }
        })?;
        Ok(PromptTemplate { template_id, body, placeholders })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let template_id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "unnamed".to_string());
        let body = std::fs::read_to_string(path).map_err(|source| PipelineError::Store {
            path: path.to_path_buf(),
            source,
        })?;
        PromptTemplate::new(template_id, &body)
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    pub fn placeholders(&self) -> &BTreeSet<String> {
        &self.placeholders
    }

    pub fn has_placeholder(&self, name: &str) -> bool {
        self.placeholders.contains(name)
    }

    /// Replaces every placeholder. Each declared placeholder must receive a
    /// value and each value must correspond to a declared placeholder.
    pub fn substitute(&self, values: &[(&str, &str)]) -> Result<String, PipelineError> {
        let template_error = |message: String| PipelineError::Template {
            template_id: self.template_id.clone(),
            message,
        };
        let provided: BTreeSet<String> = values.iter().map(|(k, _)| k.to_string()).collect();
        if provided != self.placeholders {
            return Err(template_error(format!(
                "placeholder mismatch: template declares {:?}, values given for {:?}",
                self.placeholders, provided
            )));
        }
        let mut prompt = self.body.clone();
        for (name, value) in values {
            prompt = prompt.replace(&format!("{{{{{name}}}}}"), value);
        }
        Ok(prompt)
    }

    /// The prompt for tasks that append their input text below the body.
    pub fn append_text(&self, text: &str) -> String {
        format!("{}\n\n{}", self.body, text)
    }
}

fn scan_placeholders(body: &str) -> Result<BTreeSet<String>, String> {
    let mut found = BTreeSet::new();
    let mut rest = body;
    while let Some(start) = rest.find("{{") {
        let after = &rest[start + 2..];
        let end = after
            .find("}}")
            .ok_or_else(|| "unclosed {{ placeholder".to_string())?;
        let name = &after[..end];
        let valid = !name.is_empty()
            && name
                .chars()
                .all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == '_');
        if !valid {
            return Err(format!("invalid placeholder name {name:?}"));
        }
        found.insert(name.to_string());
        rest = &after[end + 2..];
    }
    Ok(found)
}

/// The prompts shipped with the toolkit.
pub fn builtin_templates() -> Vec<PromptTemplate> {
    [
        ("ocr-default", include_str!("../templates/ocr-default.txt")),
        ("postcorrect-default", include_str!("../templates/postcorrect-default.txt")),
        ("postcorrect-simple", include_str!("../templates/postcorrect-simple.txt")),
        ("ner-image", include_str!("../templates/ner-image.txt")),
        ("ner-text", include_str!("../templates/ner-text.txt")),
    ]
    .into_iter()
    .map(|(id, body)| PromptTemplate::new(id, body).expect("builtin templates are well-formed"))
    .collect()
}

pub fn builtin_template(id: &str) -> Option<PromptTemplate> {
    builtin_templates().into_iter().find(|t| t.template_id == id)
}

/// The three input modes of the entity-extraction task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NerMode {
    GtTextToCsv,
    OcrTextToCsv,
    ImageToCsv,
}

impl NerMode {
    pub fn task(self) -> TaskKind {
        match self {
            NerMode::GtTextToCsv => TaskKind::NerGtText,
            NerMode::OcrTextToCsv => TaskKind::NerOcrText,
            NerMode::ImageToCsv => TaskKind::NerImage,
        }
    }
}

impl std::fmt::Display for NerMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NerMode::GtTextToCsv => "gt-text",
            NerMode::OcrTextToCsv => "ocr-text",
            NerMode::ImageToCsv => "image",
        })
    }
}

impl std::str::FromStr for NerMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gt-text" => Ok(NerMode::GtTextToCsv),
            "ocr-text" => Ok(NerMode::OcrTextToCsv),
            "image" => Ok(NerMode::ImageToCsv),
            other => Err(format!("unknown mode {other:?}; expected gt-text, ocr-text, or image")),
        }
    }
}

/// One persisted model response with its accounting data.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredPage {
    pub text: String,
    pub model_id: String,
    pub prompt_id: String,
    pub elapsed_seconds: f64,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub attempt_count: u32,
}

#[derive(Serialize, Deserialize)]
struct StoredPageMeta {
    model_id: String,
    prompt_id: String,
    elapsed_seconds: f64,
    input_tokens: u64,
    output_tokens: u64,
    attempt_count: u32,
}

/// Durable per-page outputs under one task/directory. A page is complete
/// once both its text and its metadata sidecar exist; the text is written
/// first, so an interrupted write is re-requested on the next run.
pub struct PageStore {
    dir: PathBuf,
}

impl PageStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, PipelineError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)
            .map_err(|source| PipelineError::Store { path: dir.clone(), source })?;
        Ok(PageStore { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn stem(slot: Option<u32>) -> String {
        match slot {
            Some(page_index) => format!("page_{page_index:04}"),
            None => "response".to_string(),
        }
    }

    pub fn text_path(&self, slot: Option<u32>) -> PathBuf {
        self.dir.join(format!("{}.txt", Self::stem(slot)))
    }

    fn meta_path(&self, slot: Option<u32>) -> PathBuf {
        self.dir.join(format!("{}.meta.json", Self::stem(slot)))
    }

    pub fn get(&self, slot: Option<u32>) -> Result<Option<StoredPage>, PipelineError> {
        let meta_path = self.meta_path(slot);
        if !meta_path.is_file() {
            return Ok(None);
        }
        let store_error = |path: &Path| {
            let path = path.to_path_buf();
            move |source: std::io::Error| PipelineError::Store { path, source }
        };
        let text_path = self.text_path(slot);
        let text = std::fs::read_to_string(&text_path).map_err(store_error(&text_path))?;
        let meta_text = std::fs::read_to_string(&meta_path).map_err(store_error(&meta_path))?;
        let meta: StoredPageMeta = serde_json::from_str(&meta_text).map_err(|e| {
            PipelineError::Store {
                path: meta_path.clone(),
                source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
            }
        })?;
        Ok(Some(StoredPage {
            text,
            model_id: meta.model_id,
            prompt_id: meta.prompt_id,
            elapsed_seconds: meta.elapsed_seconds,
            input_tokens: meta.input_tokens,
            output_tokens: meta.output_tokens,
            attempt_count: meta.attempt_count,
        }))
    }

    pub fn put(&self, slot: Option<u32>, page: &StoredPage) -> Result<(), PipelineError> {
        let text_path = self.text_path(slot);
        std::fs::write(&text_path, &page.text)
            .map_err(|source| PipelineError::Store { path: text_path, source })?;
        let meta = StoredPageMeta {
            model_id: page.model_id.clone(),
            prompt_id: page.prompt_id.clone(),
            elapsed_seconds: page.elapsed_seconds,
            input_tokens: page.input_tokens,
            output_tokens: page.output_tokens,
            attempt_count: page.attempt_count,
        };
        let meta_path = self.meta_path(slot);
        let mut text = serde_json::to_string_pretty(&meta).expect("meta serializes");
        text.push('\n');
        std::fs::write(&meta_path, text)
            .map_err(|source| PipelineError::Store { path: meta_path, source })
    }
}

/// One issued (or cache-served) request within a run.
#[derive(Debug, Clone)]
pub struct RequestRecord {
    /// `None` for single-request text-mode tasks.
    pub page_index: Option<u32>,
    pub stored: StoredPage,
    pub from_cache: bool,
}

/// Result of a transcription or post-correction run over one directory.
#[derive(Debug, Clone)]
pub struct DirectoryRun {
    pub transcription: Transcription,
    pub requests: Vec<RequestRecord>,
}

/// Result of an entity-extraction run over one directory.
#[derive(Debug, Clone)]
pub struct NerRun {
    pub dataset: EntryDataset,
    pub requests: Vec<RequestRecord>,
    /// Set when the run produced no records at all.
    pub empty_warning: bool,
}

pub enum NerInput<'a> {
    Pages(&'a [PageImage]),
    Text(&'a Transcription),
}

/// Transcribes a directory: one request per page in reading order, page
/// texts joined with the corpus separator.
pub fn run_ocr(
    provider: &dyn Provider,
    model_id: &str,
    template: &PromptTemplate,
    pages: &[PageImage],
    store: Option<&PageStore>,
) -> Result<DirectoryRun, PipelineError> {
    require_closed(template, "the transcription task")?;
    let directory = first_directory(pages)?;

    let mut requests = Vec::with_capacity(pages.len());
    for page in pages {
        let record = page_request(provider, model_id, template, page, template.body(), store)?;
        requests.push(record);
    }
    Ok(assemble_run(directory, TaskKind::Ocr, model_id, template, requests))
}

/// Corrects a baseline transcription: page i's image goes out with page i's
/// baseline text substituted into the prompt.
pub fn run_post_correction(
    provider: &dyn Provider,
    model_id: &str,
    template: &PromptTemplate,
    pages: &[PageImage],
    noisy: &[Transcription],
    store: Option<&PageStore>,
) -> Result<DirectoryRun, PipelineError> {
    if !template.has_placeholder(OCR_TEXT_PLACEHOLDER) {
        return Err(PipelineError::Template {
            template_id: template.template_id.clone(),
            message: format!("post-correction requires an {OCR_TEXT_PLACEHOLDER} placeholder"),
        });
    }
    let directory = first_directory(pages)?;
    if pages.len() != noisy.len() {
        return Err(PipelineError::PageCountMismatch {
            directory: directory.to_string(),
            pages: pages.len(),
            noisy: noisy.len(),
        });
    }

    let mut requests = Vec::with_capacity(pages.len());
    for (page, noisy_page) in pages.iter().zip(noisy) {
        let prompt = template.substitute(&[(OCR_TEXT_PLACEHOLDER, noisy_page.text.as_str())])?;
        let record = page_request(provider, model_id, template, page, &prompt, store)?;
        requests.push(record);
    }
    Ok(assemble_run(directory, TaskKind::PostCorrection, model_id, template, requests))
}

/// Extracts entries. Image mode issues one request per page and
/// concatenates the parsed arrays in page order; the text modes issue a
/// single request with the directory text appended below the prompt.
pub fn run_ner(
    provider: &dyn Provider,
    model_id: &str,
    template: &PromptTemplate,
    mode: NerMode,
    input: NerInput<'_>,
    store: Option<&PageStore>,
) -> Result<NerRun, PipelineError> {
    require_closed(template, "the entity-extraction task")?;
    let (directory, requests) = match (mode, input) {
        (NerMode::ImageToCsv, NerInput::Pages(pages)) => {
            let directory = first_directory(pages)?;
            let mut requests = Vec::with_capacity(pages.len());
            for page in pages {
                requests.push(page_request(provider, model_id, template, page, template.body(), store)?);
            }
            (directory, requests)
        }
        (NerMode::GtTextToCsv | NerMode::OcrTextToCsv, NerInput::Text(transcription)) => {
            let directory = transcription.directory.clone();
            let record = match store_get(store, None)? {
                Some(stored) => RequestRecord { page_index: None, stored, from_cache: true },
                None => {
                    let prompt = template.append_text(&transcription.text);
                    let request = ModelRequest::new(model_id, prompt);
                    let response = provider.complete(&request).map_err(|source| {
                        PipelineError::RequestFailed { directory: directory.to_string(), source }
                    })?;
                    let stored = to_stored(model_id, template, &response);
                    store_put(store, None, &stored)?;
                    RequestRecord { page_index: None, stored, from_cache: false }
                }
            };
            (directory, vec![record])
        }
        (mode @ NerMode::ImageToCsv, NerInput::Text(_)) => {
            return Err(PipelineError::ModeMismatch { mode, needs: "page images" });
        }
        (mode, NerInput::Pages(_)) => {
            return Err(PipelineError::ModeMismatch { mode, needs: "a directory transcription" });
        }
    };

    let mut records = Vec::new();
    for request in &requests {
        let parsed = parse_model_json(&request.stored.text).map_err(|source| {
            let context = match request.page_index {
                Some(i) => format!("{directory} page {i}"),
                None => directory.to_string(),
            };
            PipelineError::Parse { context, source, raw: request.stored.text.clone() }
        })?;
        records.extend(parsed);
    }

    let empty_warning = records.is_empty();
    let provenance = aggregate_tag(model_id, mode.task(), template, &requests);
    Ok(NerRun {
        dataset: EntryDataset { directory, records, provenance },
        requests,
        empty_warning,
    })
}

fn require_closed(template: &PromptTemplate, what: &str) -> Result<(), PipelineError> {
    if template.placeholders().is_empty() {
        Ok(())
    } else {
        Err(PipelineError::Template {
            template_id: template.template_id.clone(),
            message: format!(
                "{what} takes a closed prompt, but this template declares {:?}",
                template.placeholders()
            ),
        })
    }
}

fn first_directory(pages: &[PageImage]) -> Result<DirectoryId, PipelineError> {
    let first = pages.first().ok_or(PipelineError::EmptyPages)?;
    debug_assert!(
        pages.iter().all(|p| p.directory == first.directory),
        "pages of one run must share a directory"
    );
    Ok(first.directory.clone())
}

fn page_request(
    provider: &dyn Provider,
    model_id: &str,
    template: &PromptTemplate,
    page: &PageImage,
    prompt: &str,
    store: Option<&PageStore>,
) -> Result<RequestRecord, PipelineError> {
    let slot = Some(page.page_index);
    if let Some(stored) = store_get(store, slot)? {
        return Ok(RequestRecord { page_index: slot, stored, from_cache: true });
    }
    let request = ModelRequest::new(model_id, prompt).with_image(page.clone());
    let response = provider.complete(&request).map_err(|source| PipelineError::PageFailed {
        directory: page.directory.to_string(),
        page_index: page.page_index,
        source,
    })?;
    let stored = to_stored(model_id, template, &response);
    store_put(store, slot, &stored)?;
    Ok(RequestRecord { page_index: slot, stored, from_cache: false })
}

fn to_stored(
    model_id: &str,
    template: &PromptTemplate,
    response: &crate::llmclient::ModelResponse,
) -> StoredPage {
    StoredPage {
        text: response.text.clone(),
        model_id: model_id.to_string(),
        prompt_id: template.template_id.clone(),
        elapsed_seconds: response.elapsed_seconds,
        input_tokens: response.input_tokens,
        output_tokens: response.output_tokens,
        attempt_count: response.attempt_count,
    }
}

fn store_get(store: Option<&PageStore>, slot: Option<u32>) -> Result<Option<StoredPage>, PipelineError> {
    match store {
        Some(store) => store.get(slot),
        None => Ok(None),
    }
}

fn store_put(store: Option<&PageStore>, slot: Option<u32>, page: &StoredPage) -> Result<(), PipelineError> {
    match store {
        Some(store) => store.put(slot, page),
        None => Ok(()),
    }
}

fn assemble_run(
    directory: DirectoryId,
    task: TaskKind,
    model_id: &str,
    template: &PromptTemplate,
    requests: Vec<RequestRecord>,
) -> DirectoryRun {
    let text = join_page_texts(requests.iter().map(|r| r.stored.text.as_str()));
    let provenance = aggregate_tag(model_id, task, template, &requests);
    DirectoryRun {
        transcription: Transcription {
            directory,
            scope: TranscriptionScope::WholeDirectory,
            text,
            provenance,
        },
        requests,
    }
}

fn aggregate_tag(
    model_id: &str,
    task: TaskKind,
    template: &PromptTemplate,
    requests: &[RequestRecord],
) -> ProvenanceTag {
    ProvenanceTag::model(
        model_id,
        task,
        template.template_id.clone(),
        requests.iter().map(|r| r.stored.elapsed_seconds).sum(),
        requests.iter().map(|r| r.stored.input_tokens).sum(),
        requests.iter().map(|r| r.stored.output_tokens).sum(),
    )
}

/// Parses one model reply into entry records.
///
/// Tolerance is a single code-fence strip; beyond that the reply must be a
/// JSON array of objects carrying exactly the four declared keys with
/// string-or-null values. Offsets refer to the fence-stripped text.
pub fn parse_model_json(raw: &str) -> Result<Vec<EntryRecord>, JsonParseError> {
    let body = strip_code_fence(raw);
    let offset = match body.find(|c: char| !c.is_whitespace()) {
        Some(offset) => offset,
        None => return Err(JsonParseError::NotAnArray { offset: 0 }),
    };
    if body.as_bytes()[offset] != b'[' {
        return Err(JsonParseError::NotAnArray { offset });
    }

    let value: serde_json::Value = serde_json::from_str(body).map_err(|e| {
        JsonParseError::InvalidJson {
            offset: offset_of(body, e.line(), e.column()),
            message: e.to_string(),
        }
    })?;
    let array = value.as_array().expect("document starts with [");

    let keys: BTreeSet<&str> = Variable::ALL.iter().map(|v| v.key()).collect();
    let mut records = Vec::with_capacity(array.len());
    for (index, element) in array.iter().enumerate() {
        let object = element
            .as_object()
            .ok_or(JsonParseError::NotAnObject { index })?;
        for key in object.keys() {
            if !keys.contains(key.as_str()) {
                return Err(JsonParseError::UnknownKey { index, key: key.clone() });
            }
        }
        let missing: Vec<&str> = Variable::ALL
            .iter()
            .map(|v| v.key())
            .filter(|key| !object.contains_key(*key))
            .collect();
        if !missing.is_empty() {
            return Err(JsonParseError::MissingKeys { index, missing: missing.join(", ") });
        }

        let mut record = EntryRecord::default();
        for variable in Variable::ALL {
            let value = &object[variable.key()];
            let cell = match value {
                serde_json::Value::Null => None,
                serde_json::Value::String(s) => Some(s.clone()),
                _ => {
                    return Err(JsonParseError::WrongType {
                        index,
                        key: variable.key().to_string(),
                    })
                }
            };
            record.set(variable, cell);
        }
        if record.is_all_null() {
            return Err(JsonParseError::AllNull { index });
        }
        records.push(record);
    }
    Ok(records)
}

/// Removes one ``` wrapper (with an optional info string) if the reply is
/// fenced; anything inside is left untouched.
fn strip_code_fence(raw: &str) -> &str {
    let trimmed = raw.trim();
    let Some(after_fence) = trimmed.strip_prefix("```") else {
        return trimmed;
    };
    let Some(newline) = after_fence.find('\n') else {
        return trimmed;
    };
    let inner = &after_fence[newline + 1..];
    let inner = inner.strip_suffix("```").unwrap_or(inner);
    inner.trim()
}

fn offset_of(text: &str, line: usize, column: usize) -> usize {
    let mut offset = 0;
    for (i, l) in text.split('\n').enumerate() {
        if i + 1 == line {
            return offset + column.saturating_sub(1);
        }
        offset += l.len() + 1;
    }
    offset
}
