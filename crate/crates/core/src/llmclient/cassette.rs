//! Record/replay cassettes: a content-addressed map from request key to
//! response, stored as a JSON file, enabling byte-identical offline reruns.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ClientError, ModelRequest, ModelResponse, Provider, TransportReply};

/// Content address of a request: SHA-256 over the model id, the prompt, and
/// the image bytes (length-framed, with an image-presence flag).
pub fn request_key(model_id: &str, prompt: &str, image: Option<&[u8]>) -> String {
    let mut hasher = Sha256::new();
    for part in [model_id.as_bytes(), prompt.as_bytes()] {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    match image {
        Some(bytes) => {
            hasher.update([1u8]);
            hasher.update((bytes.len() as u64).to_le_bytes());
            hasher.update(bytes);
        }
        None => hasher.update([0u8]),
    }
    let digest = hasher.finalize();
    let mut key = String::with_capacity(64);
    for byte in digest {
        key.push_str(&format!("{byte:02x}"));
    }
    key
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub model_id: String,
    pub text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub elapsed_seconds: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Cassette {
    pub entries: BTreeMap<String, CassetteEntry>,
}

impl Cassette {
    pub fn new() -> Self {
        Cassette::default()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ClientError> {
        let path = path.as_ref();
        let file_error = |message: String| ClientError::CassetteFile {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| file_error(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| file_error(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ClientError> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self).expect("cassette serializes");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| ClientError::CassetteFile {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn insert(&mut self, key: String, entry: CassetteEntry) {
        self.entries.insert(key, entry);
    }

    pub fn insert_request(&mut self, request: &ModelRequest, entry: CassetteEntry) {
        let key = request_key(&request.model_id, &request.prompt, request.image_bytes());
        self.insert(key, entry);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Replays a cassette; anything not recorded is a miss naming the key.
pub struct CassetteProvider {
    cassette: Cassette,
}

impl CassetteProvider {
    pub fn new(cassette: Cassette) -> Self {
        CassetteProvider { cassette }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ClientError> {
        Ok(CassetteProvider::new(Cassette::load(path)?))
    }
}

impl Provider for CassetteProvider {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, ClientError> {
        let key = request_key(&request.model_id, &request.prompt, request.image_bytes());
        let entry = self
            .cassette
            .entries
            .get(&key)
            .ok_or(ClientError::CassetteMiss { key })?;
        Ok(ModelResponse {
            text: entry.text.clone(),
            input_tokens: entry.input_tokens,
            output_tokens: entry.output_tokens,
            elapsed_seconds: entry.elapsed_seconds,
            attempt_count: 1,
        })
    }
}

/// Accumulates successful exchanges during a live run and persists them.
pub struct CassetteRecorder {
    path: PathBuf,
    cassette: Mutex<Cassette>,
}

impl CassetteRecorder {
    /// Starts recording into `path`, extending the file if it already holds
    /// a cassette.
    pub fn new(path: impl Into<PathBuf>) -> Result<Self, ClientError> {
        let path = path.into();
        let cassette = if path.exists() { Cassette::load(&path)? } else { Cassette::new() };
        Ok(CassetteRecorder { path, cassette: Mutex::new(cassette) })
    }

    pub fn record(
        &self,
        request: &ModelRequest,
        reply: &TransportReply,
        elapsed_seconds: f64,
    ) -> Result<(), ClientError> {
        let mut cassette = self.cassette.lock().unwrap();
        cassette.insert_request(
            request,
            CassetteEntry {
                model_id: request.model_id.clone(),
                text: reply.text.clone(),
                input_tokens: reply.input_tokens,
                output_tokens: reply.output_tokens,
                elapsed_seconds,
            },
        );
        cassette.save(&self.path)
    }

    pub fn save(&self) -> Result<(), ClientError> {
        self.cassette.lock().unwrap().save(&self.path)
    }
}
