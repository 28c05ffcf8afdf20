//! An in-memory transport for tests: canned replies keyed by request
//! content, scriptable failures, and a log of everything that was sent.

use std::collections::HashMap;
use std::collections::VecDeque;
use std::sync::{Arc, Mutex};

use super::cassette::request_key;
use super::{ClientError, ModelRequest, Transport, TransportReply};

/// What the mock saw for one send, kept for assertions.
#[derive(Debug, Clone)]
pub struct RecordedRequest {
    pub model_id: String,
    pub prompt: String,
    pub temperature: f64,
    pub image_bytes: Option<Vec<u8>>,
}

#[derive(Default)]
struct MockState {
    fixtures: HashMap<String, TransportReply>,
    /// Outcomes consumed one per send before fixtures are consulted;
    /// `Some(err)` fails that send, `None` lets it through.
    script: VecDeque<Option<ClientError>>,
    requests: Vec<RecordedRequest>,
}

/// Cloneable handle; clones share fixtures, script, and the request log.
#[derive(Clone, Default)]
pub struct MockTransport {
    state: Arc<Mutex<MockState>>,
}

impl MockTransport {
    pub fn new() -> Self {
        MockTransport::default()
    }

    /// Registers the reply for a (model, prompt, image) combination.
    pub fn add_fixture(
        &self,
        model_id: &str,
        prompt: &str,
        image: Option<&[u8]>,
        reply: TransportReply,
    ) {
        let key = request_key(model_id, prompt, image);
        self.state.lock().unwrap().fixtures.insert(key, reply);
    }

    /// Shorthand: a text fixture with fixed token counts.
    pub fn reply_with(&self, model_id: &str, prompt: &str, image: Option<&[u8]>, text: &str) {
        self.add_fixture(
            model_id,
            prompt,
            image,
            TransportReply { text: text.to_string(), input_tokens: 10, output_tokens: 20 },
        );
    }

    /// The next `count` sends fail with errors produced by `make`.
    pub fn fail_next(&self, count: usize, make: impl Fn() -> ClientError) {
        let mut state = self.state.lock().unwrap();
        for _ in 0..count {
            state.script.push_back(Some(make()));
        }
    }

    /// Explicitly lets one send through (useful between scripted failures).
    pub fn pass_next(&self) {
        self.state.lock().unwrap().script.push_back(None);
    }

    pub fn requests(&self) -> Vec<RecordedRequest> {
        self.state.lock().unwrap().requests.clone()
    }

    pub fn request_count(&self) -> usize {
        self.state.lock().unwrap().requests.len()
    }
}

impl Transport for MockTransport {
    fn send(&self, request: &ModelRequest) -> Result<TransportReply, ClientError> {
        let mut state = self.state.lock().unwrap();
        state.requests.push(RecordedRequest {
            model_id: request.model_id.clone(),
            prompt: request.prompt.clone(),
            temperature: request.temperature,
            image_bytes: request.image_bytes().map(<[u8]>::to_vec),
        });
        if let Some(outcome) = state.script.pop_front() {
            if let Some(err) = outcome {
                return Err(err);
            }
        }
        let key = request_key(&request.model_id, &request.prompt, request.image_bytes());
        state.fixtures.get(&key).cloned().ok_or_else(|| ClientError::Validation {
            message: format!("mock transport has no fixture for request key {key}"),
        })
    }
}
