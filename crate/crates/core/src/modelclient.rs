//! Completion interface over remote models and deterministic mocks.
//!
//! Every backend implements [`ModelClient`]. Mocks are pure functions of the
//! request, so evaluation runs against them are reproducible bit for bit.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::embed::API_KEY_ENV;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("model unavailable after {attempts} attempt(s): {last}")]
    Unavailable { attempts: u32, last: String },
    #[error("model returned a malformed response: {0}")]
    Protocol(String),
    #[error("no transcript entry for prompt {prompt_sha256} (item {item_id:?})")]
    TranscriptMiss {
        prompt_sha256: String,
        item_id: Option<String>,
    },
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("transcript {path}:{line}: {message}")]
    Transcript {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A prompt plus the id of the item it was rendered from, when known.
/// Mocks may key their replies by item id; remote backends ignore it.
#[derive(Debug, Clone, Copy)]
pub struct CompletionRequest<'a> {
    pub prompt: &'a str,
    pub item_id: Option<&'a str>,
}

impl<'a> CompletionRequest<'a> {
    pub fn new(prompt: &'a str) -> Self {
        Self {
            prompt,
            item_id: None,
        }
    }

    pub fn for_item(item_id: &'a str, prompt: &'a str) -> Self {
        Self {
            prompt,
            item_id: Some(item_id),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub latency_ms: u64,
    pub attempt_count: u32,
}

pub trait ModelClient: Send + Sync {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, ModelError>;
}

impl<T: ModelClient + ?Sized> ModelClient for Box<T> {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, ModelError> {
        (**self).complete(request)
    }
}

impl<T: ModelClient + ?Sized> ModelClient for &T {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, ModelError> {
        (**self).complete(request)
    }
}

/// Hex SHA-256 of the prompt bytes; the transcript lookup key.
pub fn prompt_sha256(prompt: &str) -> String {
    hex(&Sha256::digest(prompt.as_bytes()))
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    use std::fmt::Write as _;
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        let _ = write!(s, "{b:02x}");
    }
    s
}

fn check_prompt(request: &CompletionRequest<'_>) -> Result<(), ModelError> {
    if request.prompt.is_empty() {
        return Err(ModelError::EmptyPrompt);
    }
    Ok(())
}

fn instant_completion(text: String, started: Instant) -> Completion {
    Completion {
        text,
        latency_ms: started.elapsed().as_millis() as u64,
        attempt_count: 1,
    }
}

// ---------------------------------------------------------------------------
// configuration

fn default_concurrency() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(flatten)]
    pub backend: Backend,
    /// Upper bound on in-flight requests during a run.
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Backend {
    Http(HttpModelConfig),
    MockScript { transcript: PathBuf },
    MockOracle(OracleConfig),
    /// Replies with the same text to every prompt.
    MockConstant { reply: String },
}

/// Oracle mocks. Each one knows the right answer and decides when to give it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum OracleConfig {
    /// MCQ oracle driven by an answer key (JSONL of
    /// [`crate::evalharness::OracleKeyEntry`]).
    Mcq {
        key: PathBuf,
        #[serde(default)]
        seed: u64,
    },
    /// User-association oracle that reads the problem from the prompt.
    Assoc {
        policy: crate::userassoc::AssocPolicy,
        #[serde(default)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WireFormat {
    #[default]
    Completion,
    Chat,
}

fn default_max_tokens() -> u32 {
    64
}
fn default_timeout_secs() -> u64 {
    60
}
fn default_max_retries() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpModelConfig {
    pub endpoint: String,
    pub model_name: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default)]
    pub wire: WireFormat,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    /// First backoff delay; doubles after each failed attempt.
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
}

impl HttpModelConfig {
    pub fn new(endpoint: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model_name: model_name.into(),
            temperature: 0.0,
            max_tokens: default_max_tokens(),
            wire: WireFormat::default(),
            timeout_secs: default_timeout_secs(),
            max_retries: default_max_retries(),
            backoff_ms: default_backoff_ms(),
        }
    }
}

impl ModelConfig {
    pub fn new(backend: Backend) -> Self {
        Self {
            backend,
            concurrency: default_concurrency(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ModelConfig =
            serde_json::from_str(&text).map_err(|e| ModelError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.concurrency == 0 {
            return Err(ModelError::Config("concurrency must be at least 1".into()));
        }
        if let Backend::Http(http) = &self.backend {
            if http.temperature != 0.0 {
                return Err(ModelError::Config(
                    "evaluation runs require temperature 0".into(),
                ));
            }
            if http.max_tokens < 16 {
                return Err(ModelError::Config("max_tokens must be at least 16".into()));
            }
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Box<dyn ModelClient>, ModelError> {
        self.validate()?;
        Ok(match &self.backend {
            Backend::Http(http) => Box::new(HttpModelClient::new(http.clone())),
            Backend::MockScript { transcript } => Box::new(ScriptedModel::load(transcript)?),
            Backend::MockConstant { reply } => Box::new(ConstantModel::new(reply.clone())),
            Backend::MockOracle(OracleConfig::Mcq { key, seed }) => {
                Box::new(crate::evalharness::McqOracle::load(key)?.with_seed(*seed))
            }
            Backend::MockOracle(OracleConfig::Assoc { policy, seed }) => {
                Box::new(crate::userassoc::AssocOracleModel::new(*policy, *seed))
            }
        })
    }
}

/// Completes `prompt` with the backend described by `cfg`.
pub fn complete(cfg: &ModelConfig, prompt: &str) -> Result<Completion, ModelError> {
    cfg.build()?.complete(&CompletionRequest::new(prompt))
}

// ---------------------------------------------------------------------------
// http

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct HttpRequestBody<'a> {
    model: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    prompt: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    messages: Option<[ChatMessage<'a>; 1]>,
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct HttpResponseBody {
    text: String,
}

enum AttemptError {
    Retryable(String),
    Fatal(ModelError),
}

/// Remote completion endpoint: `POST {model, prompt|messages, temperature,
/// max_tokens} -> {text}`, with exponential backoff on transport errors,
/// 429 and 5xx.
pub struct HttpModelClient {
    config: HttpModelConfig,
    agent: ureq::Agent,
    api_key: Option<String>,
}

impl HttpModelClient {
    pub fn new(config: HttpModelConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            config,
            agent,
            api_key: std::env::var(API_KEY_ENV).ok(),
        }
    }

    fn attempt(&self, prompt: &str) -> Result<String, AttemptError> {
        let body = HttpRequestBody {
            model: &self.config.model_name,
            prompt: (self.config.wire == WireFormat::Completion).then_some(prompt),
            messages: (self.config.wire == WireFormat::Chat).then_some([ChatMessage {
                role: "user",
                content: prompt,
            }]),
            temperature: self.config.temperature,
            max_tokens: self.config.max_tokens,
        };
        let mut request = self.agent.post(&self.config.endpoint);
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = request
            .send_json(&body)
            .map_err(|e| AttemptError::Retryable(e.to_string()))?;
        let status = response.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(AttemptError::Retryable(format!("HTTP {status}")));
        }
        if status >= 400 {
            return Err(AttemptError::Fatal(ModelError::Protocol(format!(
                "HTTP {status}"
            ))));
        }
        let parsed: HttpResponseBody = response
            .body_mut()
            .read_json()
            .map_err(|e| AttemptError::Fatal(ModelError::Protocol(e.to_string())))?;
        Ok(parsed.text)
    }
}

impl ModelClient for HttpModelClient {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, ModelError> {
        check_prompt(request)?;
        let started = Instant::now();
        let max_attempts = self.config.max_retries + 1;
        let mut delay = Duration::from_millis(self.config.backoff_ms);
        let mut attempt = 1;
        loop {
            match self.attempt(request.prompt) {
                Ok(text) => {
                    return Ok(Completion {
                        text,
                        latency_ms: started.elapsed().as_millis() as u64,
                        attempt_count: attempt,
                    })
                }
                Err(AttemptError::Fatal(e)) => return Err(e),
                Err(AttemptError::Retryable(last)) => {
                    if attempt >= max_attempts {
                        return Err(ModelError::Unavailable {
                            attempts: attempt,
                            last,
                        });
                    }
                    std::thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// transcripts

/// One recorded exchange. `item_id` is an optional secondary key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub prompt_sha256: String,
    pub reply: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item_id: Option<String>,
}

pub fn write_transcript<W: Write>(mut out: W, entries: &[TranscriptEntry]) -> std::io::Result<()> {
    for entry in entries {
        serde_json::to_writer(&mut out, entry)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn save_transcript(path: &Path, entries: &[TranscriptEntry]) -> std::io::Result<()> {
    write_transcript(BufWriter::new(File::create(path)?), entries)
}

pub fn read_transcript<R: BufRead>(input: R, origin: &Path) -> Result<Vec<TranscriptEntry>, ModelError> {
    let mut entries = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = serde_json::from_str(&line).map_err(|e| ModelError::Transcript {
            path: origin.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        entries.push(entry);
    }
    Ok(entries)
}

/// Replays a recorded transcript. Lookup is by prompt hash first, then by
/// item id; anything else is a miss.
#[derive(Debug, Clone, Default)]
pub struct ScriptedModel {
    by_hash: HashMap<String, String>,
    by_item: HashMap<String, String>,
}

impl ScriptedModel {
    pub fn from_entries(entries: impl IntoIterator<Item = TranscriptEntry>) -> Self {
        let mut model = Self::default();
        for e in entries {
            if let Some(id) = e.item_id {
                model.by_item.insert(id, e.reply.clone());
            }
            model.by_hash.insert(e.prompt_sha256, e.reply);
        }
        model
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let file = File::open(path).map_err(|e| {
            ModelError::Config(format!("cannot open transcript {}: {e}", path.display()))
        })?;
        Ok(Self::from_entries(read_transcript(BufReader::new(file), path)?))
    }

    pub fn len(&self) -> usize {
        self.by_hash.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_hash.is_empty()
    }
}

impl ModelClient for ScriptedModel {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, ModelError> {
        check_prompt(request)?;
        let started = Instant::now();
        let hash = prompt_sha256(request.prompt);
        let reply = self
            .by_hash
            .get(&hash)
            .or_else(|| request.item_id.and_then(|id| self.by_item.get(id)))
            .ok_or_else(|| ModelError::TranscriptMiss {
                prompt_sha256: hash,
                item_id: request.item_id.map(str::to_string),
            })?;
        Ok(instant_completion(reply.clone(), started))
    }
}

/// Wraps a client and records every successful exchange, so a live run can
/// be replayed later through [`ScriptedModel`].
pub struct RecordingModel<C> {
    inner: C,
    entries: Mutex<Vec<TranscriptEntry>>,
}

impl<C: ModelClient> RecordingModel<C> {
    pub fn new(inner: C) -> Self {
        Self {
            inner,
            entries: Mutex::new(Vec::new()),
        }
    }

    /// Recorded entries sorted by prompt hash, independent of call order.
    pub fn into_entries(self) -> Vec<TranscriptEntry> {
        let mut entries = self.entries.into_inner().expect("recorder lock poisoned");
        entries.sort_by(|a, b| a.prompt_sha256.cmp(&b.prompt_sha256));
        entries.dedup_by(|a, b| a.prompt_sha256 == b.prompt_sha256);
        entries
    }
}

impl<C: ModelClient> ModelClient for RecordingModel<C> {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, ModelError> {
        let completion = self.inner.complete(request)?;
        self.entries
            .lock()
            .expect("recorder lock poisoned")
            .push(TranscriptEntry {
                prompt_sha256: prompt_sha256(request.prompt),
                reply: completion.text.clone(),
                item_id: request.item_id.map(str::to_string),
            });
        Ok(completion)
    }
}

#[derive(Debug, Clone)]
pub struct ConstantModel {
    reply: String,
}

impl ConstantModel {
    pub fn new(reply: impl Into<String>) -> Self {
        Self {
            reply: reply.into(),
        }
    }
}

impl ModelClient for ConstantModel {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, ModelError> {
        check_prompt(request)?;
        Ok(instant_completion(self.reply.clone(), Instant::now()))
    }
}

/// Mock whose reply is computed by a closure.
pub struct FnModel<F>(pub F);

impl<F> ModelClient for FnModel<F>
where
    F: Fn(&CompletionRequest<'_>) -> Result<String, ModelError> + Send + Sync,
{
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, ModelError> {
        check_prompt(request)?;
        let started = Instant::now();
        Ok(instant_completion((self.0)(request)?, started))
    }
}

/// Deterministic per-prompt seed for mocks that need randomness.
pub(crate) fn prompt_seed(seed: u64, prompt: &str) -> u64 {
    let digest = Sha256::digest(prompt.as_bytes());
    let mut first = [0u8; 8];
    first.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(first) ^ seed
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Read;
    use std::net::TcpListener;

    /// Serves one canned HTTP response per connection, in order, and returns
    /// the request bodies it saw.
    fn serve(responses: Vec<(u16, &'static str)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/complete", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let mut bodies = Vec::new();
            for (status, body) in responses {
                let (mut stream, _) = listener.accept().unwrap();
                let mut buf = Vec::new();
                let mut chunk = [0u8; 4096];
                loop {
                    let n = stream.read(&mut chunk).unwrap();
                    buf.extend_from_slice(&chunk[..n]);
                    let text = String::from_utf8_lossy(&buf);
                    if let Some(head_end) = text.find("\r\n\r\n") {
                        let len = text[..head_end]
                            .lines()
                            .find_map(|l| {
                                let l = l.to_ascii_lowercase();
                                l.strip_prefix("content-length:").map(|v| v.trim().parse::<usize>().unwrap())
                            })
                            .unwrap_or(0);
                        if buf.len() >= head_end + 4 + len {
                            bodies.push(text[head_end + 4..].to_string());
                            break;
                        }
                    }
                    if n == 0 {
                        break;
                    }
                }
                let reply = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(reply.as_bytes()).unwrap();
            }
            bodies
        });
        (url, handle)
    }

    fn fast(url: &str) -> HttpModelConfig {
        let mut cfg = HttpModelConfig::new(url, "phi-2");
        cfg.backoff_ms = 5;
        cfg.timeout_secs = 5;
        cfg
    }

    #[test]
    fn http_retries_after_server_error() {
        let (url, server) = serve(vec![(500, "{}"), (200, r#"{"text":"2. Paging"}"#)]);
        let client = HttpModelClient::new(fast(&url));
        let out = client.complete(&CompletionRequest::new("Instruct: hi")).unwrap();
        assert_eq!(out.text, "2. Paging");
        assert_eq!(out.attempt_count, 2);
        let bodies = server.join().unwrap();
        let sent: serde_json::Value = serde_json::from_str(&bodies[1]).unwrap();
        assert_eq!(sent["model"], "phi-2");
        assert_eq!(sent["prompt"], "Instruct: hi");
        assert_eq!(sent["temperature"], 0.0);
        assert!(sent.get("messages").is_none());
    }

    #[test]
    fn http_gives_up_after_retries() {
        let (url, server) = serve(vec![(503, "{}"); 4]);
        let client = HttpModelClient::new(fast(&url));
        let err = client.complete(&CompletionRequest::new("p")).unwrap_err();
        assert!(matches!(err, ModelError::Unavailable { attempts: 4, .. }), "{err}");
        server.join().unwrap();
    }

    #[test]
    fn http_malformed_body_is_protocol_error() {
        let (url, server) = serve(vec![(200, r#"{"choices":[]}"#)]);
        let err = HttpModelClient::new(fast(&url))
            .complete(&CompletionRequest::new("p"))
            .unwrap_err();
        assert!(matches!(err, ModelError::Protocol(_)));
        server.join().unwrap();
    }

    #[test]
    fn http_chat_wire_sends_messages() {
        let (url, server) = serve(vec![(200, r#"{"text":"ok"}"#)]);
        let mut cfg = fast(&url);
        cfg.wire = WireFormat::Chat;
        HttpModelClient::new(cfg)
            .complete(&CompletionRequest::new("hello"))
            .unwrap();
        let body: serde_json::Value = serde_json::from_str(&server.join().unwrap()[0]).unwrap();
        assert_eq!(body["messages"][0]["content"], "hello");
        assert!(body.get("prompt").is_none());
    }

    #[test]
    fn empty_prompt_is_rejected() {
        let err = ConstantModel::new("1")
            .complete(&CompletionRequest::new(""))
            .unwrap_err();
        assert!(matches!(err, ModelError::EmptyPrompt));
    }

    #[test]
    fn scripted_replay_is_stable() {
        let entries = vec![
            TranscriptEntry {
                prompt_sha256: prompt_sha256("p1"),
                reply: "1. A".into(),
                item_id: None,
            },
            TranscriptEntry {
                prompt_sha256: "unused".into(),
                reply: "3. C".into(),
                item_id: Some("q7".into()),
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        save_transcript(&path, &entries).unwrap();
        let model = ScriptedModel::load(&path).unwrap();
        for _ in 0..2 {
            assert_eq!(model.complete(&CompletionRequest::new("p1")).unwrap().text, "1. A");
        }
        assert_eq!(
            model
                .complete(&CompletionRequest::for_item("q7", "other prompt"))
                .unwrap()
                .text,
            "3. C"
        );
        assert!(matches!(
            model.complete(&CompletionRequest::new("p2")),
            Err(ModelError::TranscriptMiss { .. })
        ));
    }

    #[test]
    fn recording_round_trips_through_replay() {
        let rec = RecordingModel::new(FnModel(|r: &CompletionRequest<'_>| Ok(r.prompt.len().to_string())));
        rec.complete(&CompletionRequest::new("abc")).unwrap();
        rec.complete(&CompletionRequest::new("abcdef")).unwrap();
        let replay = ScriptedModel::from_entries(rec.into_entries());
        assert_eq!(replay.complete(&CompletionRequest::new("abcdef")).unwrap().text, "6");
    }

    #[test]
    fn config_parsing_and_validation() {
        let cfg: ModelConfig = serde_json::from_str(
            r#"{"kind":"http","endpoint":"http://h","model_name":"gpt-3.5","concurrency":2}"#,
        )
        .unwrap();
        assert_eq!(cfg.concurrency, 2);
        let Backend::Http(http) = &cfg.backend else { panic!() };
        assert_eq!(http.max_retries, 3);
        assert_eq!(http.backoff_ms, 1000);
        cfg.validate().unwrap();

        let hot: ModelConfig = serde_json::from_str(
            r#"{"kind":"http","endpoint":"http://h","model_name":"m","temperature":0.7}"#,
        )
        .unwrap();
        assert!(hot.validate().is_err());

        let short: ModelConfig = serde_json::from_str(
            r#"{"kind":"http","endpoint":"http://h","model_name":"m","max_tokens":8}"#,
        )
        .unwrap();
        assert!(short.validate().is_err());

        let oracle: ModelConfig =
            serde_json::from_str(r#"{"kind":"mock_oracle","task":"assoc","policy":"perfect"}"#).unwrap();
        assert_eq!(oracle.concurrency, 4);
        let constant: ModelConfig =
            serde_json::from_str(r#"{"kind":"mock_constant","reply":"1"}"#).unwrap();
        assert_eq!(complete(&constant, "x").unwrap().text, "1");
    }
}
