//! Corpus loading: a manifest binds each city directory to its page images,
//! ground-truth transcription, ground-truth dataset, and any baseline OCR
//! transcriptions.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Inserted between page texts when a directory's pages are concatenated.
pub const PAGE_SEPARATOR: &str = "\n";

pub const PNG_SIGNATURE: [u8; 8] = [0x89, 0x50, 0x4E, 0x47, 0x0D, 0x0A, 0x1A, 0x0A];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest {path}: {message}")]
    MalformedManifest { path: PathBuf, message: String },
    #[error("no directories declared in manifest {path}")]
    NoDirectories { path: PathBuf },
    #[error("directory {directory}: {role} path does not exist: {path}")]
    DanglingPath {
        directory: String,
        role: &'static str,
        path: PathBuf,
    },
    #[error("directory {directory}: empty page list")]
    EmptyPageList { directory: String },
    #[error("duplicate directory {directory} in manifest")]
    DuplicateDirectory { directory: String },
    #[error("invalid directory identity: {0}")]
    InvalidIdentity(String),
    #[error("unknown directory {directory}")]
    UnknownDirectory { directory: String },
    #[error("page out of range: directory {directory} has {page_count} pages, requested index {page_index}")]
    PageOutOfRange {
        directory: String,
        page_index: u32,
        page_count: usize,
    },
    #[error("not a PNG (bad signature): {path}")]
    NotPng { path: PathBuf },
    #[error("invalid UTF-8 at byte {offset} in {path}")]
    InvalidUtf8 { path: PathBuf, offset: usize },
    #[error("directory {directory} has no baseline named {name}")]
    MissingBaseline { directory: String, name: String },
}

/// Identity of one source directory: a city-year pair such as Trier 1853.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DirectoryId {
    city: String,
    year: u16,
}

impl DirectoryId {
    pub fn new(city: impl Into<String>, year: u16) -> Result<Self, CorpusError> {
        let city = city.into();
        if city.is_empty() {
            return Err(CorpusError::InvalidIdentity("city must be non-empty".into()));
        }
        if !(1000..=2100).contains(&year) {
            return Err(CorpusError::InvalidIdentity(format!(
                "year {year} outside plausible range 1000-2100"
            )));
        }
        Ok(DirectoryId { city, year })
    }

    pub fn city(&self) -> &str {
        &self.city
    }

    pub fn year(&self) -> u16 {
        self.year
    }
}

/// Renders as `City-Year`, the form used in output paths and reports.
impl fmt::Display for DirectoryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.city, self.year)
    }
}

impl FromStr for DirectoryId {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (city, year) = s.rsplit_once('-').ok_or_else(|| {
            CorpusError::InvalidIdentity(format!("expected City-Year, got {s:?}"))
        })?;
        let year: u16 = year.parse().map_err(|_| {
            CorpusError::InvalidIdentity(format!("year is not a number in {s:?}"))
        })?;
        DirectoryId::new(city, year)
    }
}

/// One page image, loaded and signature-checked.
#[derive(Debug, Clone)]
pub struct PageImage {
    pub directory: DirectoryId,
    pub page_index: u32,
    pub image_bytes: Vec<u8>,
    pub source_path: PathBuf,
}

/// Manifest entry for one directory; all paths are resolved and verified.
#[derive(Debug, Clone)]
pub struct DirectoryEntry {
    pub id: DirectoryId,
    /// Page image paths in reading order.
    pub pages: Vec<PathBuf>,
    pub gt_txt: PathBuf,
    pub gt_csv: PathBuf,
    /// Per-page baseline OCR texts, keyed by baseline name; each list is
    /// parallel to `pages`.
    pub baselines: BTreeMap<String, Vec<PathBuf>>,
}

#[derive(Debug, Clone)]
pub struct CorpusManifest {
    pub root: PathBuf,
    pub directories: Vec<DirectoryEntry>,
}

impl CorpusManifest {
    pub fn directory(&self, id: &DirectoryId) -> Result<&DirectoryEntry, CorpusError> {
        self.directories
            .iter()
            .find(|d| &d.id == id)
            .ok_or_else(|| CorpusError::UnknownDirectory { directory: id.to_string() })
    }

    pub fn page_count(&self) -> usize {
        self.directories.iter().map(|d| d.pages.len()).sum()
    }
}

/// Who produced a piece of text or a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Producer {
    Model { model_id: String },
    Baseline { name: String },
    GroundTruth,
    Human,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Ocr,
    PostCorrection,
    NerGtText,
    NerOcrText,
    NerImage,
}

impl TaskKind {
    pub fn label(self) -> &'static str {
        match self {
            TaskKind::Ocr => "ocr",
            TaskKind::PostCorrection => "post_correction",
            TaskKind::NerGtText => "ner_gt_text",
            TaskKind::NerOcrText => "ner_ocr_text",
            TaskKind::NerImage => "ner_image",
        }
    }
}

/// Records how an artifact came to be. Timing and token counts are present
/// exactly when a model produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceTag {
    pub producer: Producer,
    pub task: TaskKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompt_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub elapsed_seconds: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_tokens: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_tokens: Option<u64>,
}

impl ProvenanceTag {
    pub fn model(
        model_id: impl Into<String>,
        task: TaskKind,
        prompt_id: impl Into<String>,
        elapsed_seconds: f64,
        input_tokens: u64,
        output_tokens: u64,
    ) -> Self {
        ProvenanceTag {
            producer: Producer::Model { model_id: model_id.into() },
            task,
            prompt_id: Some(prompt_id.into()),
            elapsed_seconds: Some(elapsed_seconds),
            input_tokens: Some(input_tokens),
            output_tokens: Some(output_tokens),
        }
    }

    pub fn baseline(name: impl Into<String>, task: TaskKind) -> Self {
        ProvenanceTag {
            producer: Producer::Baseline { name: name.into() },
            task,
            prompt_id: None,
            elapsed_seconds: None,
            input_tokens: None,
            output_tokens: None,
        }
    }

    pub fn ground_truth(task: TaskKind) -> Self {
        ProvenanceTag {
            producer: Producer::GroundTruth,
            task,
            prompt_id: None,
            elapsed_seconds: None,
            input_tokens: None,
            output_tokens: None,
        }
    }

    /// Checks the present-iff-model rule for the accounting fields.
    pub fn is_consistent(&self) -> bool {
        let is_model = matches!(self.producer, Producer::Model { .. });
        [
            self.elapsed_seconds.is_some(),
            self.input_tokens.is_some(),
            self.output_tokens.is_some(),
        ]
        .into_iter()
        .all(|present| present == is_model)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TranscriptionScope {
    WholeDirectory,
    SinglePage(u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcription {
    pub directory: DirectoryId,
    pub scope: TranscriptionScope,
    pub text: String,
    pub provenance: ProvenanceTag,
}

/// A loaded ground-truth transcription; `empty_warning` flags a file that
/// existed but had no content.
#[derive(Debug, Clone)]
pub struct GroundTruthText {
    pub transcription: Transcription,
    pub empty_warning: bool,
}

/// Joins page texts in order with the corpus page separator.
pub fn join_page_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> String {
    texts.into_iter().collect::<Vec<_>>().join(PAGE_SEPARATOR)
}

#[derive(Debug, Deserialize)]
struct RawManifest {
    #[serde(default)]
    directory: Vec<RawDirectory>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDirectory {
    city: String,
    year: u16,
    pages: Vec<String>,
    gt_txt: String,
    gt_csv: String,
    #[serde(default)]
    baseline_txt: BTreeMap<String, Vec<String>>,
}

/// Reads and fully validates a corpus manifest.
///
/// The manifest is UTF-8 TOML with one `[[directory]]` table per source
/// directory declaring `city`, `year`, the ordered `pages` list of PNG
/// paths, `gt_txt`, `gt_csv`, and optional `baseline_txt.<name>` lists of
/// per-page baseline transcriptions. Relative paths resolve against the
/// manifest's own directory. Every referenced path must exist.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<CorpusManifest, CorpusError> {
    let path = path.as_ref();
    let text = read_utf8_text(path)?;
    let raw: RawManifest = toml::from_str(&text).map_err(|e| CorpusError::MalformedManifest {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    if raw.directory.is_empty() {
        return Err(CorpusError::NoDirectories { path: path.to_path_buf() });
    }

    let root = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
    let mut directories = Vec::with_capacity(raw.directory.len());
    for raw_dir in raw.directory {
        let id = DirectoryId::new(raw_dir.city, raw_dir.year)?;
        let label = id.to_string();
        if directories.iter().any(|d: &DirectoryEntry| d.id == id) {
            return Err(CorpusError::DuplicateDirectory { directory: label });
        }
        if raw_dir.pages.is_empty() {
            return Err(CorpusError::EmptyPageList { directory: label });
        }

        let pages = resolve_all(&root, &label, "page image", &raw_dir.pages)?;
        let gt_txt = resolve_one(&root, &label, "ground-truth text", &raw_dir.gt_txt)?;
        let gt_csv = resolve_one(&root, &label, "ground-truth dataset", &raw_dir.gt_csv)?;
        let mut baselines = BTreeMap::new();
        for (name, paths) in raw_dir.baseline_txt {
            let resolved = resolve_all(&root, &label, "baseline text", &paths)?;
            baselines.insert(name, resolved);
        }

        directories.push(DirectoryEntry { id, pages, gt_txt, gt_csv, baselines });
    }

    Ok(CorpusManifest { root, directories })
}

fn resolve_one(
    root: &Path,
    directory: &str,
    role: &'static str,
    rel: &str,
) -> Result<PathBuf, CorpusError> {
    let path = root.join(rel);
    if path.is_file() {
        Ok(path)
    } else {
        Err(CorpusError::DanglingPath {
            directory: directory.to_string(),
            role,
            path,
        })
    }
}

fn resolve_all(
    root: &Path,
    directory: &str,
    role: &'static str,
    rels: &[String],
) -> Result<Vec<PathBuf>, CorpusError> {
    rels.iter().map(|rel| resolve_one(root, directory, role, rel)).collect()
}

/// Loads one page image and verifies the PNG signature.
pub fn load_page(
    manifest: &CorpusManifest,
    dir: &DirectoryId,
    page_index: u32,
) -> Result<PageImage, CorpusError> {
    let entry = manifest.directory(dir)?;
    let path = entry.pages.get(page_index as usize).ok_or_else(|| {
        CorpusError::PageOutOfRange {
            directory: dir.to_string(),
            page_index,
            page_count: entry.pages.len(),
        }
    })?;
    let image_bytes = fs::read(path).map_err(|source| CorpusError::Io {
        path: path.clone(),
        source,
    })?;
    if !image_bytes.starts_with(&PNG_SIGNATURE) {
        return Err(CorpusError::NotPng { path: path.clone() });
    }
    Ok(PageImage {
        directory: dir.clone(),
        page_index,
        image_bytes,
        source_path: path.clone(),
    })
}

/// Loads every page of a directory in reading order.
pub fn load_pages(
    manifest: &CorpusManifest,
    dir: &DirectoryId,
) -> Result<Vec<PageImage>, CorpusError> {
    let entry = manifest.directory(dir)?;
    (0..entry.pages.len() as u32)
        .map(|i| load_page(manifest, dir, i))
        .collect()
}

/// Loads the manually produced reference transcription of a directory.
pub fn load_ground_truth_text(
    manifest: &CorpusManifest,
    dir: &DirectoryId,
) -> Result<GroundTruthText, CorpusError> {
    let entry = manifest.directory(dir)?;
    let text = read_utf8_text(&entry.gt_txt)?;
    let empty_warning = text.is_empty();
    Ok(GroundTruthText {
        transcription: Transcription {
            directory: dir.clone(),
            scope: TranscriptionScope::WholeDirectory,
            text,
            provenance: ProvenanceTag::ground_truth(TaskKind::Ocr),
        },
        empty_warning,
    })
}

/// Loads the per-page texts of a named baseline, in page order.
pub fn load_baseline_pages(
    manifest: &CorpusManifest,
    dir: &DirectoryId,
    baseline: &str,
) -> Result<Vec<Transcription>, CorpusError> {
    let entry = manifest.directory(dir)?;
    let paths = entry.baselines.get(baseline).ok_or_else(|| {
        CorpusError::MissingBaseline {
            directory: dir.to_string(),
            name: baseline.to_string(),
        }
    })?;
    paths
        .iter()
        .enumerate()
        .map(|(i, path)| {
            Ok(Transcription {
                directory: dir.clone(),
                scope: TranscriptionScope::SinglePage(i as u32),
                text: read_utf8_text(path)?,
                provenance: ProvenanceTag::baseline(baseline, TaskKind::Ocr),
            })
        })
        .collect()
}

/// Reads a file as UTF-8, reporting the byte offset of any invalid sequence.
pub fn read_utf8_text(path: &Path) -> Result<String, CorpusError> {
    let bytes = fs::read(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    String::from_utf8(bytes).map_err(|e| CorpusError::InvalidUtf8 {
        path: path.to_path_buf(),
        offset: e.utf8_error().valid_up_to(),
    })
}
