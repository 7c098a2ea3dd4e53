//! Live provider adapters and the scripted fake.
//!
//! | provider    | auth header                     | body                                      |
//! |-------------|---------------------------------|-------------------------------------------|
//! | `openai`    | `Authorization: Bearer <key>`   | chat-completions `messages`, `image_url` data URLs |
//! | `anthropic` | `x-api-key`, `anthropic-version`| messages API, base64 `image` blocks       |
//! | `gemini`    | `x-goog-api-key`                | `generateContent`, `inline_data` parts    |
//!
//! The OpenAI-compatible adapter also serves self-hosted and router endpoints.

use std::path::Path;
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde_json::{json, Value};

use super::{ChatBackend, ChatRequest, ChatResponse, LlmError, ModelProfile, Part};
use crate::config::Provider;

const ANTHROPIC_VERSION: &str = "2023-06-01";
const MAX_OUTPUT_TOKENS: u32 = 8192;
const HTTP_TIMEOUT: Duration = Duration::from_secs(600);

type Responder = dyn Fn(&ChatRequest) -> Result<String, LlmError> + Send + Sync;

/// In-process backend answering through a closure. Token counts are estimated
/// at four characters per token and latency is derived from the output size,
/// so runs are fully deterministic.
pub struct ScriptedBackend {
    respond: Box<Responder>,
}

impl ScriptedBackend {
    pub fn new(respond: impl Fn(&ChatRequest) -> Result<String, LlmError> + Send + Sync + 'static) -> Self {
        ScriptedBackend {
            respond: Box::new(respond),
        }
    }
}

pub(crate) fn estimate_tokens(chars: usize) -> u64 {
    chars.div_ceil(4) as u64
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let text = (self.respond)(request)?;
        let images = request.images().count() as u64;
        let prompt_tokens = estimate_tokens(request.system.len() + request.text().len()) + 258 * images;
        let completion_tokens = estimate_tokens(text.len());
        Ok(ChatResponse {
            latency_ms: 200 + 4 * completion_tokens + prompt_tokens / 10,
            text,
            structured: None,
            prompt_tokens,
            completion_tokens,
        })
    }
}

/// Blocking HTTP adapter for one configured model.
pub struct LiveBackend {
    profile: ModelProfile,
    api_key: String,
    agent: ureq::Agent,
}

impl LiveBackend {
    pub fn new(profile: ModelProfile, api_key: String) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(HTTP_TIMEOUT))
            .http_status_as_error(false)
            .build()
            .into();
        LiveBackend {
            profile,
            api_key,
            agent,
        }
    }

    /// Reads the API key from the environment variable named in the profile.
    pub fn from_env(profile: ModelProfile) -> Result<Self, LlmError> {
        let key = std::env::var(&profile.api_key_env).map_err(|_| LlmError::MissingApiKey(profile.api_key_env.clone()))?;
        Ok(LiveBackend::new(profile, key))
    }

    fn url(&self) -> String {
        match self.profile.provider {
            Provider::Gemini => format!(
                "{}/{}:generateContent",
                self.profile.endpoint.trim_end_matches('/'),
                self.profile.api_model
            ),
            _ => self.profile.endpoint.clone(),
        }
    }
}

fn inline_image(path: &Path) -> Result<(String, String), LlmError> {
    let bytes = std::fs::read(path).map_err(|source| LlmError::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let mime = match path.extension().and_then(|e| e.to_str()) {
        Some("jpg") | Some("jpeg") => "image/jpeg",
        _ => "image/png",
    };
    Ok((mime.to_string(), B64.encode(bytes)))
}

/// Provider JSON body for a request.
pub fn request_body(profile: &ModelProfile, request: &ChatRequest) -> Result<Value, LlmError> {
    let want_json = request.schema_id.is_some() && profile.supports_structured;
    match profile.provider {
        Provider::Openai => {
            let mut content = Vec::new();
            for p in &request.parts {
                content.push(match p {
                    Part::Text { text } => json!({ "type": "text", "text": text }),
                    Part::Image { path } => {
                        let (mime, data) = inline_image(path)?;
                        json!({ "type": "image_url", "image_url": { "url": format!("data:{mime};base64,{data}") } })
                    }
                });
            }
            let mut body = json!({
                "model": profile.api_model,
                "temperature": request.temperature,
                "messages": [
                    { "role": "system", "content": request.system },
                    { "role": "user", "content": content },
                ],
            });
            if want_json {
                body["response_format"] = json!({ "type": "json_object" });
            }
            Ok(body)
        }
        Provider::Anthropic => {
            let mut content = Vec::new();
            for p in &request.parts {
                content.push(match p {
                    Part::Text { text } => json!({ "type": "text", "text": text }),
                    Part::Image { path } => {
                        let (mime, data) = inline_image(path)?;
                        json!({ "type": "image", "source": { "type": "base64", "media_type": mime, "data": data } })
                    }
                });
            }
            Ok(json!({
                "model": profile.api_model,
                "max_tokens": MAX_OUTPUT_TOKENS,
                "temperature": request.temperature,
                "system": request.system,
                "messages": [ { "role": "user", "content": content } ],
            }))
        }
        Provider::Gemini => {
            let mut parts = Vec::new();
            for p in &request.parts {
                parts.push(match p {
                    Part::Text { text } => json!({ "text": text }),
                    Part::Image { path } => {
                        let (mime, data) = inline_image(path)?;
                        json!({ "inline_data": { "mime_type": mime, "data": data } })
                    }
                });
            }
            let mut config = json!({ "temperature": request.temperature });
            if want_json {
                config["responseMimeType"] = json!("application/json");
            }
            Ok(json!({
                "systemInstruction": { "parts": [ { "text": request.system } ] },
                "contents": [ { "role": "user", "parts": parts } ],
                "generationConfig": config,
            }))
        }
    }
}

/// Extracts `(text, prompt_tokens, completion_tokens)` from a provider reply.
pub fn parse_reply(provider: Provider, body: &Value) -> Result<(String, u64, u64), LlmError> {
    let missing = |what: &str| LlmError::Provider(format!("response missing {what}: {body}"));
    let tokens = |v: &Value| v.as_u64().unwrap_or(0);
    match provider {
        Provider::Openai => {
            let text = body["choices"][0]["message"]["content"]
                .as_str()
                .ok_or_else(|| missing("choices[0].message.content"))?;
            Ok((
                text.to_string(),
                tokens(&body["usage"]["prompt_tokens"]),
                tokens(&body["usage"]["completion_tokens"]),
            ))
        }
        Provider::Anthropic => {
            let blocks = body["content"].as_array().ok_or_else(|| missing("content"))?;
            let text: String = blocks
                .iter()
                .filter(|b| b["type"] == "text")
                .filter_map(|b| b["text"].as_str())
                .collect();
            Ok((
                text,
                tokens(&body["usage"]["input_tokens"]),
                tokens(&body["usage"]["output_tokens"]),
            ))
        }
        Provider::Gemini => {
            let parts = body["candidates"][0]["content"]["parts"]
                .as_array()
                .ok_or_else(|| missing("candidates[0].content.parts"))?;
            let text: String = parts
                .iter()
                .filter(|p| p["thought"] != true)
                .filter_map(|p| p["text"].as_str())
                .collect();
            Ok((
                text,
                tokens(&body["usageMetadata"]["promptTokenCount"]),
                tokens(&body["usageMetadata"]["candidatesTokenCount"]) + tokens(&body["usageMetadata"]["thoughtsTokenCount"]),
            ))
        }
    }
}

impl ChatBackend for LiveBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let body = request_body(&self.profile, request)?;
        let mut call = self.agent.post(self.url()).header("content-type", "application/json");
        call = match self.profile.provider {
            Provider::Openai => call.header("authorization", format!("Bearer {}", self.api_key)),
            Provider::Anthropic => call
                .header("x-api-key", &self.api_key)
                .header("anthropic-version", ANTHROPIC_VERSION),
            Provider::Gemini => call.header("x-goog-api-key", &self.api_key),
        };
        let started = Instant::now();
        let mut resp = call
            .send_json(&body)
            .map_err(|e| LlmError::Provider(format!("{}: {e}", self.profile.name)))?;
        let status = resp.status();
        let reply: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| LlmError::Provider(format!("{}: HTTP {status}: {e}", self.profile.name)))?;
        if !status.is_success() {
            return Err(LlmError::Provider(format!("{}: HTTP {status}: {reply}", self.profile.name)));
        }
        let (text, prompt_tokens, completion_tokens) = parse_reply(self.profile.provider, &reply)?;
        Ok(ChatResponse {
            text,
            structured: None,
            prompt_tokens,
            completion_tokens,
            latency_ms: started.elapsed().as_millis() as u64,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Config;
    use crate::llm::{model_profile, AgentRole, SchemaId};

    fn request(parts: Vec<Part>) -> ChatRequest {
        ChatRequest {
            model: "x".into(),
            role: AgentRole::Triage,
            system: "sys".into(),
            parts,
            temperature: 0.2,
            schema_id: Some(SchemaId::Triage),
        }
    }

    #[test]
    fn bodies_per_provider() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("p.png");
        std::fs::write(&img, [1u8, 2, 3]).unwrap();
        let req = request(vec![Part::text("hello"), Part::image(&img)]);
        let cfg = Config::default();

        let openai = request_body(&model_profile(&cfg, "gpt-5.2").unwrap(), &req).unwrap();
        assert_eq!(openai["messages"][0]["content"], "sys");
        assert_eq!(openai["messages"][1]["content"][1]["image_url"]["url"], "data:image/png;base64,AQID");
        assert_eq!(openai["response_format"]["type"], "json_object");

        let claude = request_body(&model_profile(&cfg, "claude-opus-4.5").unwrap(), &req).unwrap();
        assert_eq!(claude["system"], "sys");
        assert_eq!(claude["messages"][0]["content"][1]["source"]["data"], "AQID");

        let gemini = request_body(&model_profile(&cfg, "gemini-3-pro").unwrap(), &req).unwrap();
        assert_eq!(gemini["contents"][0]["parts"][0]["text"], "hello");
        assert_eq!(gemini["contents"][0]["parts"][1]["inline_data"]["mime_type"], "image/png");
        assert_eq!(gemini["generationConfig"]["responseMimeType"], "application/json");
    }

    #[test]
    fn replies_per_provider() {
        let openai = json!({"choices": [{"message": {"content": "hi"}}], "usage": {"prompt_tokens": 5, "completion_tokens": 2}});
        assert_eq!(parse_reply(Provider::Openai, &openai).unwrap(), ("hi".into(), 5, 2));
        let claude = json!({"content": [{"type": "thinking", "thinking": "hmm"}, {"type": "text", "text": "ok"}], "usage": {"input_tokens": 7, "output_tokens": 3}});
        assert_eq!(parse_reply(Provider::Anthropic, &claude).unwrap(), ("ok".into(), 7, 3));
        let gemini = json!({"candidates": [{"content": {"parts": [{"text": "a", "thought": true}, {"text": "b"}]}}], "usageMetadata": {"promptTokenCount": 4, "candidatesTokenCount": 1, "thoughtsTokenCount": 6}});
        assert_eq!(parse_reply(Provider::Gemini, &gemini).unwrap(), ("b".into(), 4, 7));
        assert!(parse_reply(Provider::Openai, &json!({})).is_err());
    }

    #[test]
    fn scripted_usage_is_deterministic() {
        let b = ScriptedBackend::new(|_| Ok("abcdefgh".into()));
        let r1 = b.complete(&request(vec![Part::text("1234")])).unwrap();
        let r2 = b.complete(&request(vec![Part::text("1234")])).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(r1.completion_tokens, 2);
        assert_eq!(r1.prompt_tokens, estimate_tokens("sys".len() + 4));
    }

    #[test]
    fn gemini_url_includes_model() {
        let p = model_profile(&Config::default(), "gemini-3-pro").unwrap();
        let b = LiveBackend::new(p, "k".into());
        assert!(b.url().ends_with("/gemini-3-pro-preview:generateContent"));
    }
}
