//! Provider-agnostic chat client.
//!
//! A [`ChatBackend`] turns a [`ChatRequest`] into a [`ChatResponse`]. Backends
//! are either live provider adapters, a recorder wrapping another backend, a
//! replayer serving from a transcript, or a scripted fake. [`LlmClient`] sits
//! on top and adds model defaults, usage accounting and schema-checked
//! structured output with bounded repair.

mod backend;
mod transcript;
mod usage;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use schemars::JsonSchema;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{Config, Provider, DEFAULT_TEMPERATURE};

pub use backend::{LiveBackend, ScriptedBackend};
pub use transcript::{request_hash, RecordingBackend, ReplayBackend, TranscriptEntry};
pub use usage::{AgentUsage, UsageLedger};

/// Repair prompts allowed after the first invalid structured output.
pub const MAX_REPAIRS: u32 = 2;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("provider error: {0}")]
    Provider(String),
    #[error("no transcript entry for request {hash} ({digest})")]
    ReplayMiss { hash: String, digest: String },
    #[error("unknown model {0:?}")]
    UnknownModel(String),
    #[error("{schema:?} output invalid after {} attempts: {last_error}", attempts.len())]
    SchemaExhausted {
        schema: SchemaId,
        attempts: Vec<String>,
        last_error: String,
    },
    #[error("reading image {path}: {source}")]
    Image {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("transcript: {0}")]
    Transcript(String),
    #[error("environment variable {0} is not set")]
    MissingApiKey(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentRole {
    Triage,
    Doctor,
    Consultant,
    Coder,
    Synthesizer,
    Zeroshot,
}

impl AgentRole {
    pub const ALL: [AgentRole; 6] = [
        AgentRole::Triage,
        AgentRole::Doctor,
        AgentRole::Consultant,
        AgentRole::Coder,
        AgentRole::Synthesizer,
        AgentRole::Zeroshot,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentRole::Triage => "triage",
            AgentRole::Doctor => "doctor",
            AgentRole::Consultant => "consultant",
            AgentRole::Coder => "coder",
            AgentRole::Synthesizer => "synthesizer",
            AgentRole::Zeroshot => "zeroshot",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemaId {
    Triage,
    Prescription,
    Ranking,
    Synthesis,
    ZeroShot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Part {
    Text { text: String },
    /// Image file; inlined at send time and hashed by content.
    Image { path: PathBuf },
}

impl Part {
    pub fn text(s: impl Into<String>) -> Part {
        Part::Text { text: s.into() }
    }

    pub fn image(p: impl Into<PathBuf>) -> Part {
        Part::Image { path: p.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub role: AgentRole,
    pub system: String,
    pub parts: Vec<Part>,
    pub temperature: f64,
    pub schema_id: Option<SchemaId>,
}

impl ChatRequest {
    pub fn text(&self) -> String {
        self.parts
            .iter()
            .filter_map(|p| match p {
                Part::Text { text } => Some(text.as_str()),
                Part::Image { .. } => None,
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn images(&self) -> impl Iterator<Item = &Path> {
        self.parts.iter().filter_map(|p| match p {
            Part::Image { path } => Some(path.as_path()),
            Part::Text { .. } => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub structured: Option<serde_json::Value>,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency_ms: u64,
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendMode {
    Live,
    Record,
    Replay,
}

impl std::str::FromStr for BackendMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "live" => Ok(BackendMode::Live),
            "record" => Ok(BackendMode::Record),
            "replay" => Ok(BackendMode::Replay),
            other => Err(format!("unknown backend {other:?} (live|record|replay)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelProfile {
    pub name: String,
    pub provider: Provider,
    pub api_model: String,
    pub endpoint: String,
    pub api_key_env: String,
    pub temperature: f64,
    pub supports_images: bool,
    pub supports_structured: bool,
    pub thinking: bool,
}

/// Resolved sampling defaults and capabilities for a registered model.
pub fn model_profile(config: &Config, name: &str) -> Result<ModelProfile, LlmError> {
    let entry = config
        .models
        .get(name)
        .ok_or_else(|| LlmError::UnknownModel(name.to_string()))?;
    Ok(ModelProfile {
        name: name.to_string(),
        provider: entry.provider,
        api_model: entry.api_model.clone(),
        endpoint: entry.endpoint.clone(),
        api_key_env: entry.api_key_env.clone(),
        temperature: entry.temperature.unwrap_or(DEFAULT_TEMPERATURE),
        supports_images: entry.supports_images,
        supports_structured: entry.supports_structured,
        thinking: entry.thinking,
    })
}

/// Builds the backend stack for a mode. `transcript` is required for record
/// and replay.
pub fn build_backend(
    mode: BackendMode,
    profile: &ModelProfile,
    transcript: Option<&Path>,
) -> Result<Arc<dyn ChatBackend>, LlmError> {
    let need = || transcript.ok_or_else(|| LlmError::Transcript("no transcript path given".into()));
    Ok(match mode {
        BackendMode::Live => Arc::new(LiveBackend::from_env(profile.clone())?),
        BackendMode::Record => Arc::new(RecordingBackend::create(
            Box::new(LiveBackend::from_env(profile.clone())?),
            need()?,
        )?),
        BackendMode::Replay => Arc::new(ReplayBackend::open(need()?)?),
    })
}

/// A schema-checked model output.
pub trait StructuredOutput: DeserializeOwned + Serialize + JsonSchema {
    const SCHEMA_ID: SchemaId;

    /// Semantic checks beyond the JSON shape.
    fn validate(&self) -> Result<(), String> {
        Ok(())
    }
}

pub fn schema_json<T: JsonSchema>() -> String {
    serde_json::to_string_pretty(&schemars::schema_for!(T)).expect("schema serializes")
}

fn schema_instruction<T: JsonSchema>() -> String {
    format!(
        "Respond with a single JSON object (no prose) that conforms to this JSON Schema:\n{}",
        schema_json::<T>()
    )
}

/// Strips code fences and returns the outermost `{...}` span.
pub fn extract_json(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    (end > start).then(|| &text[start..=end])
}

pub fn parse_structured<T: StructuredOutput>(text: &str) -> Result<T, String> {
    let json = extract_json(text).ok_or_else(|| "response contains no JSON object".to_string())?;
    let value: T = serde_json::from_str(json).map_err(|e| format!("JSON does not match schema: {e}"))?;
    value.validate()?;
    Ok(value)
}

#[derive(Debug, Clone)]
pub struct Structured<T> {
    pub value: T,
    pub attempts: u32,
    pub raw: Vec<String>,
}

#[derive(Clone)]
pub struct LlmClient {
    backend: Arc<dyn ChatBackend>,
    profile: ModelProfile,
}

impl LlmClient {
    pub fn new(backend: Arc<dyn ChatBackend>, profile: ModelProfile) -> Self {
        LlmClient { backend, profile }
    }

    pub fn profile(&self) -> &ModelProfile {
        &self.profile
    }

    /// Request with the model's name and temperature filled in. Image parts
    /// are replaced by a text note for models without image input.
    pub fn request(&self, role: AgentRole, system: &str, parts: Vec<Part>, schema_id: Option<SchemaId>) -> ChatRequest {
        let parts = if self.profile.supports_images {
            parts
        } else {
            parts
                .into_iter()
                .map(|p| match p {
                    Part::Image { path } => Part::text(format!(
                        "[image omitted: {}]",
                        path.file_name().map(|n| n.to_string_lossy()).unwrap_or_default()
                    )),
                    t => t,
                })
                .collect()
        };
        ChatRequest {
            model: self.profile.name.clone(),
            role,
            system: system.to_string(),
            parts,
            temperature: self.profile.temperature,
            schema_id,
        }
    }

    /// One model call, recorded in `ledger`.
    pub fn complete(&self, request: &ChatRequest, ledger: &mut UsageLedger) -> Result<ChatResponse, LlmError> {
        if !(0.0..=2.0).contains(&request.temperature) {
            return Err(LlmError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                request.temperature
            )));
        }
        let response = self.backend.complete(request)?;
        ledger.record_call(
            request.role,
            response.prompt_tokens,
            response.completion_tokens,
            response.latency_ms,
        );
        Ok(response)
    }

    /// Calls until the output parses as `T` and passes both `T::validate` and
    /// `extra`, re-prompting with the error at most [`MAX_REPAIRS`] times.
    pub fn complete_structured<T: StructuredOutput>(
        &self,
        request: &ChatRequest,
        ledger: &mut UsageLedger,
        extra: impl Fn(&T) -> Result<(), String>,
    ) -> Result<Structured<T>, LlmError> {
        let mut base = request.clone();
        base.schema_id = Some(T::SCHEMA_ID);
        base.parts.push(Part::text(schema_instruction::<T>()));

        let mut raw = Vec::new();
        let mut current = base.clone();
        let mut last_error = String::new();
        for attempt in 1..=MAX_REPAIRS + 1 {
            let response = self.complete(&current, ledger)?;
            let outcome = parse_structured::<T>(&response.text).and_then(|v| extra(&v).map(|_| v));
            raw.push(response.text.clone());
            match outcome {
                Ok(value) => {
                    return Ok(Structured {
                        value,
                        attempts: attempt,
                        raw,
                    })
                }
                Err(e) => {
                    log::warn!("{:?} output rejected (attempt {attempt}): {e}", T::SCHEMA_ID);
                    last_error = e;
                    current = base.clone();
                    current.parts.push(Part::text(repair_note(&response.text, &last_error)));
                }
            }
        }
        Err(LlmError::SchemaExhausted {
            schema: T::SCHEMA_ID,
            attempts: raw,
            last_error,
        })
    }
}

/// Text appended to a request when the previous answer was rejected.
pub fn repair_note(previous: &str, error: &str) -> String {
    format!(
        "## Correction Required\nYour previous response was rejected: {error}\n\nPrevious response:\n{previous}\n\nReturn a corrected response."
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    #[derive(Debug, Serialize, Deserialize, JsonSchema, PartialEq)]
    struct Answer {
        value: u8,
    }

    impl StructuredOutput for Answer {
        const SCHEMA_ID: SchemaId = SchemaId::Triage;
        fn validate(&self) -> Result<(), String> {
            if self.value <= 10 {
                Ok(())
            } else {
                Err(format!("value {} > 10", self.value))
            }
        }
    }

    fn client_with(answers: Vec<&'static str>) -> (LlmClient, Arc<AtomicUsize>) {
        let n = Arc::new(AtomicUsize::new(0));
        let counter = n.clone();
        let backend = ScriptedBackend::new(move |_req| {
            let i = counter.fetch_add(1, Ordering::SeqCst);
            Ok(answers[i.min(answers.len() - 1)].to_string())
        });
        let profile = model_profile(&Config::default(), "gpt-5.2").unwrap();
        (LlmClient::new(Arc::new(backend), profile), n)
    }

    fn req(c: &LlmClient) -> ChatRequest {
        c.request(AgentRole::Triage, "sys", vec![Part::text("hi")], None)
    }

    #[test]
    fn profiles() {
        let cfg = Config::default();
        assert_eq!(model_profile(&cfg, "gpt-5.2").unwrap().temperature, 0.2);
        assert_eq!(model_profile(&cfg, "claude-opus-4.5").unwrap().temperature, 1.0);
        assert!(model_profile(&cfg, "gemini-3-pro").unwrap().thinking);
        assert!(!model_profile(&cfg, "medgemma-27b").unwrap().thinking);
        assert!(matches!(model_profile(&cfg, "gpt-2"), Err(LlmError::UnknownModel(_))));
    }

    #[test]
    fn valid_first_attempt() {
        let (c, n) = client_with(vec!["```json\n{\"value\": 3}\n```"]);
        let mut ledger = UsageLedger::default();
        let out = c.complete_structured::<Answer>(&req(&c), &mut ledger, |_| Ok(())).unwrap();
        assert_eq!(out.value, Answer { value: 3 });
        assert_eq!(out.attempts, 1);
        assert_eq!(n.load(Ordering::SeqCst), 1);
        assert_eq!(ledger.total().model_calls, 1);
    }

    #[test]
    fn repair_then_valid() {
        let (c, _) = client_with(vec!["{\"value\": 30}", "{\"value\": 4}"]);
        let mut ledger = UsageLedger::default();
        let out = c.complete_structured::<Answer>(&req(&c), &mut ledger, |_| Ok(())).unwrap();
        assert_eq!(out.attempts, 2);
        assert_eq!(out.raw.len(), 2);
        assert_eq!(ledger.total().model_calls, 2);
    }

    #[test]
    fn exhausted_after_three() {
        let (c, n) = client_with(vec!["nope", "{\"value\": \"x\"}", "{\"value\": 99}", "{\"value\": 1}"]);
        let mut ledger = UsageLedger::default();
        match c.complete_structured::<Answer>(&req(&c), &mut ledger, |_| Ok(())) {
            Err(LlmError::SchemaExhausted { attempts, .. }) => assert_eq!(attempts.len(), 3),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(n.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn extra_validator_participates() {
        let (c, _) = client_with(vec!["{\"value\": 2}", "{\"value\": 5}"]);
        let mut ledger = UsageLedger::default();
        let out = c
            .complete_structured::<Answer>(&req(&c), &mut ledger, |a| {
                if a.value == 2 {
                    Err("two is not allowed".into())
                } else {
                    Ok(())
                }
            })
            .unwrap();
        assert_eq!(out.value.value, 5);
    }

    #[test]
    fn images_dropped_for_text_only_models() {
        let (mut c, _) = client_with(vec!["{}"]);
        c.profile.supports_images = false;
        let r = c.request(AgentRole::Doctor, "s", vec![Part::image("/tmp/x/panel.png")], None);
        assert_eq!(r.parts, vec![Part::text("[image omitted: panel.png]")]);
    }

    #[test]
    fn rejects_bad_temperature() {
        let (c, _) = client_with(vec!["{}"]);
        let mut r = req(&c);
        r.temperature = 2.5;
        assert!(matches!(
            c.complete(&r, &mut UsageLedger::default()),
            Err(LlmError::InvalidRequest(_))
        ));
    }

    #[test]
    fn json_extraction() {
        assert_eq!(extract_json("x {\"a\": {\"b\": 1}} y"), Some("{\"a\": {\"b\": 1}}"));
        assert_eq!(extract_json("no json"), None);
        assert_eq!(extract_json("} {"), None);
    }
}
