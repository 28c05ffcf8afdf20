//! The two supported provider wire formats and the blocking HTTP transport
//! that speaks them. Payload construction and reply parsing are pure
//! functions so they can be tested without a network.

use std::time::Duration;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde_json::{json, Value};

use super::{ClientError, ModelRequest, ProviderConfig, ProviderKind, Transport, TransportReply};

const REQUEST_TIMEOUT: Duration = Duration::from_secs(120);

/// URL the request is POSTed to.
pub fn request_url(kind: ProviderKind, endpoint: &str, model_id: &str) -> String {
    let base = endpoint.trim_end_matches('/');
    match kind {
        ProviderKind::Gemini => format!("{base}/models/{model_id}:generateContent"),
        ProviderKind::Openai => format!("{base}/chat/completions"),
    }
}

/// JSON body for the given wire family.
pub fn build_payload(kind: ProviderKind, request: &ModelRequest) -> Value {
    match kind {
        ProviderKind::Gemini => {
            let mut parts = vec![json!({ "text": request.prompt })];
            if let Some(bytes) = request.image_bytes() {
                parts.push(json!({
                    "inline_data": {
                        "mime_type": "image/png",
                        "data": BASE64.encode(bytes),
                    }
                }));
            }
            let mut generation_config = json!({ "temperature": request.temperature });
            if let Some(max) = request.max_output_tokens {
                generation_config["maxOutputTokens"] = json!(max);
            }
            json!({
                "contents": [{ "role": "user", "parts": parts }],
                "generationConfig": generation_config,
            })
        }
        ProviderKind::Openai => {
            let content = match request.image_bytes() {
                Some(bytes) => json!([
                    { "type": "text", "text": request.prompt },
                    {
                        "type": "image_url",
                        "image_url": {
                            "url": format!("data:image/png;base64,{}", BASE64.encode(bytes)),
                        }
                    },
                ]),
                None => json!(request.prompt),
            };
            let mut payload = json!({
                "model": request.model_id,
                "temperature": request.temperature,
                "messages": [{ "role": "user", "content": content }],
            });
            if let Some(max) = request.max_output_tokens {
                payload["max_tokens"] = json!(max);
            }
            payload
        }
    }
}

/// Maps an HTTP reply (status + body) to a [`TransportReply`] or an error.
pub fn parse_reply(kind: ProviderKind, status: u16, body: &str) -> Result<TransportReply, ClientError> {
    if let Some(err) = status_error(status, body) {
        return Err(err);
    }
    let value: Value = serde_json::from_str(body).map_err(|e| ClientError::MalformedResponse {
        message: format!("response body is not JSON: {e}"),
    })?;
    match kind {
        ProviderKind::Gemini => parse_gemini(&value),
        ProviderKind::Openai => parse_openai(&value),
    }
}

fn status_error(status: u16, body: &str) -> Option<ClientError> {
    let message = || {
        let snippet: String = body.chars().take(200).collect();
        if snippet.is_empty() { "(empty body)".to_string() } else { snippet }
    };
    match status {
        200..=299 => None,
        401 | 403 => Some(ClientError::Auth { message: message() }),
        429 => Some(ClientError::RateLimited { message: message() }),
        500..=599 => Some(ClientError::Server { status, message: message() }),
        _ => Some(ClientError::MalformedResponse {
            message: format!("unexpected status {status}: {}", message()),
        }),
    }
}

fn parse_gemini(value: &Value) -> Result<TransportReply, ClientError> {
    if let Some(reason) = value
        .pointer("/promptFeedback/blockReason")
        .and_then(Value::as_str)
    {
        return Err(ClientError::Refusal { message: format!("prompt blocked: {reason}") });
    }
    let candidate = value
        .pointer("/candidates/0")
        .ok_or_else(|| malformed("no candidates in response"))?;
    if let Some(reason) = candidate.get("finishReason").and_then(Value::as_str) {
        if reason == "SAFETY" {
            return Err(ClientError::Refusal { message: "candidate blocked: SAFETY".into() });
        }
    }
    let parts = candidate
        .pointer("/content/parts")
        .and_then(Value::as_array)
        .ok_or_else(|| malformed("candidate has no content parts"))?;
    let text: String = parts
        .iter()
        .filter_map(|p| p.get("text").and_then(Value::as_str))
        .collect();
    Ok(TransportReply {
        text,
        input_tokens: token_count(value, "/usageMetadata/promptTokenCount"),
        output_tokens: token_count(value, "/usageMetadata/candidatesTokenCount"),
    })
}

fn parse_openai(value: &Value) -> Result<TransportReply, ClientError> {
    let message = value
        .pointer("/choices/0/message")
        .ok_or_else(|| malformed("no choices in response"))?;
    if let Some(refusal) = message.get("refusal").and_then(Value::as_str) {
        return Err(ClientError::Refusal { message: refusal.to_string() });
    }
    let text = message
        .get("content")
        .and_then(Value::as_str)
        .ok_or_else(|| malformed("message has no text content"))?
        .to_string();
    Ok(TransportReply {
        text,
        input_tokens: token_count(value, "/usage/prompt_tokens"),
        output_tokens: token_count(value, "/usage/completion_tokens"),
    })
}

fn token_count(value: &Value, pointer: &str) -> u64 {
    value.pointer(pointer).and_then(Value::as_u64).unwrap_or(0)
}

fn malformed(message: &str) -> ClientError {
    ClientError::MalformedResponse { message: message.to_string() }
}

/// Live transport. The credential is read from the configured environment
/// variable at send time, before anything touches the network.
pub struct HttpTransport {
    kind: ProviderKind,
    endpoint: String,
    credential_env: String,
    agent: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new(config: &ProviderConfig) -> Result<Self, ClientError> {
        let agent = reqwest::blocking::Client::builder()
            .timeout(REQUEST_TIMEOUT)
            .build()
            .map_err(|e| ClientError::Network { message: e.to_string() })?;
        Ok(HttpTransport {
            kind: config.kind,
            endpoint: config.endpoint.clone(),
            credential_env: config.credential_env.clone(),
            agent,
        })
    }
}

impl Transport for HttpTransport {
    fn send(&self, request: &ModelRequest) -> Result<TransportReply, ClientError> {
        let credential = std::env::var(&self.credential_env).map_err(|_| {
            ClientError::MissingCredential { env_var: self.credential_env.clone() }
        })?;

        let url = request_url(self.kind, &self.endpoint, &request.model_id);
        let payload = build_payload(self.kind, request);
        let builder = match self.kind {
            ProviderKind::Gemini => self.agent.post(&url).header("x-goog-api-key", &credential),
            ProviderKind::Openai => self.agent.post(&url).bearer_auth(&credential),
        };
        let response = builder.json(&payload).send().map_err(|e| {
            if e.is_timeout() {
                ClientError::Timeout { message: e.to_string() }
            } else {
                ClientError::Network { message: e.to_string() }
            }
        })?;
        let status = response.status().as_u16();
        let body = response
            .text()
            .map_err(|e| ClientError::Network { message: e.to_string() })?;
        parse_reply(self.kind, status, &body)
    }
}
