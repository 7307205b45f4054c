//! Prompt assembly and the LM completion interface.
//!
//! A template carries `{Example 1}`..`{Example k}`, `{Objective}`, and
//! `{Observation}` placeholders. Prompts can be packaged as one concatenated
//! text or as a message list with each example in its own message. When the
//! assembled prompt would exceed the input token budget, trailing
//! static-text observation lines are dropped first; interactable lines are
//! never dropped.
//!
//! Completion goes through the [`LmBackend`] trait: a scripted mock for
//! tests and offline runs, or an HTTP chat-completion client. Transient
//! failures retry up to 3 times with exponential backoff.

use std::collections::VecDeque;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::observe::Observation;

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("template is missing placeholder {name:?}")]
    MissingPlaceholder { name: String },
    #[error("placeholder {name:?} must appear exactly once, found {count}")]
    DuplicatePlaceholder { name: String, count: usize },
    #[error("template has {expected} example slot(s) but {got} example(s) were supplied")]
    ExampleCountMismatch { expected: usize, got: usize },
    #[error("prompt exceeds the input token limit ({tokens} > {limit}) even after truncation")]
    TokenBudgetExceeded { tokens: usize, limit: usize },
}

/// Errors from the completion backend.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LmError {
    #[error("authentication: {0}")]
    Auth(String),
    #[error("rate limited by the backend")]
    RateLimited,
    #[error("request timed out")]
    Timeout,
    #[error("backend error{}: {message}", status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
    Backend {
        status: Option<u16>,
        message: String,
    },
    #[error("malformed backend response: {0}")]
    InvalidResponse(String),
    #[error("mock script exhausted: no reply left for this request")]
    ScriptExhausted,
}

impl LmError {
    /// Worth retrying: rate limits, timeouts, transport failures, and 5xx.
    pub fn is_transient(&self) -> bool {
        match self {
            LmError::RateLimited | LmError::Timeout => true,
            LmError::Backend { status, .. } => status.is_none_or(|s| s >= 500),
            _ => false,
        }
    }
}

/// Sampling and budget settings. Temperature 1.0 and top-p 0.9 everywhere;
/// the input token limit defaults to the smallest backbone budget.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmSettings {
    pub temperature: f64,
    pub top_p: f64,
    pub input_token_limit: usize,
    /// Characters per token for the budget estimator.
    pub chars_per_token: usize,
    pub request_timeout_secs: u64,
    pub max_concurrent_requests: usize,
    pub max_retries: u32,
    pub retry_base_delay_ms: u64,
}

impl Default for LmSettings {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            top_p: 0.9,
            input_token_limit: 3840,
            chars_per_token: 4,
            request_timeout_secs: 60,
            max_concurrent_requests: 4,
            max_retries: 3,
            retry_base_delay_ms: 250,
        }
    }
}

impl LmSettings {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.top_p) {
            return Err("top_p must be within [0, 1]".to_string());
        }
        if self.input_token_limit == 0 || self.chars_per_token == 0 {
            return Err("limits must be positive".to_string());
        }
        Ok(())
    }
}

/// Rough token count: split at whitespace and letter/punctuation
/// boundaries, then charge each segment at least one token plus one per
/// `chars_per_token` characters. Monotone in text length.
pub fn estimate_tokens(text: &str, chars_per_token: usize) -> usize {
    let ratio = chars_per_token.max(1);
    let mut tokens = 0usize;
    let mut segment_len = 0usize;
    let mut segment_alnum = false;
    for c in text.chars() {
        if c.is_whitespace() {
            if segment_len > 0 {
                tokens += segment_len.div_ceil(ratio).max(1);
                segment_len = 0;
            }
            continue;
        }
        let alnum = c.is_alphanumeric();
        if segment_len > 0 && alnum != segment_alnum {
            tokens += segment_len.div_ceil(ratio).max(1);
            segment_len = 0;
        }
        segment_alnum = alnum;
        segment_len += 1;
    }
    if segment_len > 0 {
        tokens += segment_len.div_ceil(ratio).max(1);
    }
    tokens
}

/// A validated template: placeholder presence checked once at parse time.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    text: String,
    example_slots: usize,
}

/// Instruction template used when no custom one is supplied. It defines the
/// observation line format, the action grammar, and the reply convention
/// the response parser relies on ("In summary ..." followed by a fenced
/// action block). It has no example slots.
pub const DEFAULT_TEMPLATE: &str = "\
You are an automation agent controlling desktop and web applications through \
high-level actions that are later compiled to coordinate-level input code.

You receive:
- OBJECTIVE: what you must accomplish.
- OBSERVATION: one line per screen element in the format [id] [tagType] [text content]. \
Only elements with a numeric id are interactable; a line like [] [StaticText] [some text] \
is read-only context. When a screenshot is attached, every interactable element is \
outlined and labeled with its id, and each label shares its color with its box.

Mouse actions:
click [id]
double_click [id]
right_click [id]
hover [id]

Keyboard actions:
type [content]
press [key_comb]
hotkey [key1] [key2]

Rules:
1. Only reference ids that appear in the observation.
2. Several actions may be issued at once, one per line.
3. Think out loud first, then commit. End your reply with the phrase \
\"In summary, the next actions I will perform are\" followed by the action \
lines inside a ``` fenced block, one action per line, nothing else inside \
the fences.

OBJECTIVE:

{Objective}

OBSERVATION:

{Observation}
";

impl PromptTemplate {
    /// Validates that `{Objective}` and `{Observation}` appear exactly once
    /// and that example slots are `{Example 1}`..`{Example k}`, each once.
    pub fn parse(text: &str) -> Result<Self, PromptError> {
        for name in ["{Objective}", "{Observation}"] {
            match text.matches(name).count() {
                1 => {}
                0 => {
                    return Err(PromptError::MissingPlaceholder {
                        name: name.to_string(),
                    })
                }
                count => {
                    return Err(PromptError::DuplicatePlaceholder {
                        name: name.to_string(),
                        count,
                    })
                }
            }
        }
        let mut example_slots = 0;
        loop {
            let name = format!("{{Example {}}}", example_slots + 1);
            match text.matches(name.as_str()).count() {
                0 => break,
                1 => example_slots += 1,
                count => return Err(PromptError::DuplicatePlaceholder { name, count }),
            }
        }
        Ok(Self {
            text: text.to_string(),
            example_slots,
        })
    }

    pub fn default_template() -> Self {
        Self::parse(DEFAULT_TEMPLATE).expect("default template is valid")
    }

    pub fn example_slots(&self) -> usize {
        self.example_slots
    }
}

/// How the prompt is handed to the backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Packaging {
    /// Everything substituted into one prompt string.
    SingleText,
    /// Each example travels as its own message.
    PerExampleMessages,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub role: String,
    pub content: String,
    /// PNG attachment, sent as an image content part.
    pub image_png: Option<Vec<u8>>,
}

impl Message {
    fn user(content: String) -> Self {
        Self {
            role: "user".to_string(),
            content,
            image_png: None,
        }
    }
}

/// An assembled prompt, ready for a backend.
#[derive(Debug, Clone, PartialEq)]
pub struct Prompt {
    pub messages: Vec<Message>,
}

impl Prompt {
    pub fn text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

fn png_bytes(image: &image::RgbaImage) -> Vec<u8> {
    let mut out = std::io::Cursor::new(Vec::new());
    image
        .write_to(&mut out, image::ImageFormat::Png)
        .expect("in-memory png encoding cannot fail");
    out.into_inner()
}

fn observation_text(observation: &Observation) -> String {
    observation.text.clone().unwrap_or_default()
}

/// Drops the last static-text line (`[] ...`); true when one was dropped.
fn drop_last_static_line(text: &mut String) -> bool {
    let lines: Vec<&str> = text.lines().collect();
    let Some(drop_at) = lines.iter().rposition(|l| l.trim_start().starts_with("[]")) else {
        return false;
    };
    let mut kept: Vec<&str> = Vec::with_capacity(lines.len() - 1);
    for (k, line) in lines.iter().enumerate() {
        if k != drop_at {
            kept.push(line);
        }
    }
    *text = kept.join("\n");
    true
}

fn assemble(
    template: &PromptTemplate,
    examples: &[String],
    objective: &str,
    observation_text: &str,
    packaging: Packaging,
    image_png: Option<&[u8]>,
) -> Prompt {
    match packaging {
        Packaging::SingleText => {
            let mut text = template.text.clone();
            for (k, example) in examples.iter().enumerate() {
                text = text.replace(&format!("{{Example {}}}", k + 1), example);
            }
            text = text.replace("{Objective}", objective);
            text = text.replace("{Observation}", observation_text);
            let mut message = Message::user(text);
            message.image_png = image_png.map(<[u8]>::to_vec);
            Prompt {
                messages: vec![message],
            }
        }
        Packaging::PerExampleMessages => {
            // split the template at the example slots; the head becomes the
            // system message and each example its own user message
            let mut messages = Vec::new();
            let mut rest = template.text.clone();
            for (k, example) in examples.iter().enumerate() {
                let slot = format!("{{Example {}}}", k + 1);
                let at = rest.find(&slot).expect("slot count was validated");
                let head = rest[..at].trim().to_string();
                if !head.is_empty() {
                    let role = if messages.is_empty() { "system" } else { "user" };
                    messages.push(Message {
                        role: role.to_string(),
                        content: head,
                        image_png: None,
                    });
                }
                messages.push(Message::user(example.clone()));
                rest = rest[at + slot.len()..].to_string();
            }
            let tail = rest
                .replace("{Objective}", objective)
                .replace("{Observation}", observation_text);
            let mut message = Message::user(tail.trim().to_string());
            message.image_png = image_png.map(<[u8]>::to_vec);
            messages.push(message);
            Prompt { messages }
        }
    }
}

fn prompt_tokens(prompt: &Prompt, chars_per_token: usize) -> usize {
    prompt
        .messages
        .iter()
        .map(|m| estimate_tokens(&m.content, chars_per_token))
        .sum()
}

/// Substitutes the template and enforces the token budget. When over
/// budget, trailing static-text observation lines are dropped first (never
/// interactable lines); a prompt still over budget is an error.
pub fn build_prompt(
    template: &PromptTemplate,
    examples: &[String],
    objective: &str,
    observation: &Observation,
    packaging: Packaging,
    settings: &LmSettings,
) -> Result<Prompt, PromptError> {
    if examples.len() != template.example_slots {
        return Err(PromptError::ExampleCountMismatch {
            expected: template.example_slots,
            got: examples.len(),
        });
    }
    let image_png = observation.image.as_ref().map(png_bytes);
    let mut obs_text = observation_text(observation);
    loop {
        let prompt = assemble(
            template,
            examples,
            objective,
            &obs_text,
            packaging,
            image_png.as_deref(),
        );
        let tokens = prompt_tokens(&prompt, settings.chars_per_token);
        if tokens <= settings.input_token_limit {
            return Ok(prompt);
        }
        if !drop_last_static_line(&mut obs_text) {
            return Err(PromptError::TokenBudgetExceeded {
                tokens,
                limit: settings.input_token_limit,
            });
        }
    }
}

// ---------------------------------------------------------------------------
// Completion backends
// ---------------------------------------------------------------------------

/// A single completion request in chat form.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub top_p: f64,
}

/// One-shot completion transport. Retries live in [`complete`], not here.
pub trait LmBackend: Send + Sync {
    fn complete_once(&self, request: &CompletionRequest) -> Result<String, LmError>;
}

/// Sends the prompt and retries transient failures up to
/// `settings.max_retries` times with exponential backoff.
pub fn complete(
    backend: &dyn LmBackend,
    prompt: &Prompt,
    settings: &LmSettings,
) -> Result<String, LmError> {
    let request = CompletionRequest {
        messages: prompt.messages.clone(),
        temperature: settings.temperature,
        top_p: settings.top_p,
    };
    let mut attempt = 0;
    loop {
        match backend.complete_once(&request) {
            Ok(reply) => return Ok(reply),
            Err(e) if e.is_transient() && attempt < settings.max_retries => {
                let delay = settings.retry_base_delay_ms.saturating_mul(1 << attempt);
                std::thread::sleep(Duration::from_millis(delay));
                attempt += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

/// Replies with fixed text, whatever the request. The CLI's `mock:<path>`
/// backend wraps one of these around the file's contents.
pub struct MockBackend {
    reply: String,
}

impl MockBackend {
    pub fn new(reply: impl Into<String>) -> Self {
        Self {
            reply: reply.into(),
        }
    }
}

impl LmBackend for MockBackend {
    fn complete_once(&self, _request: &CompletionRequest) -> Result<String, LmError> {
        Ok(self.reply.clone())
    }
}

/// Replays a queue of scripted outcomes, one per call, for failure-path
/// tests.
pub struct ScriptedBackend {
    script: Mutex<VecDeque<Result<String, LmError>>>,
    calls: Mutex<usize>,
}

impl ScriptedBackend {
    pub fn new(script: Vec<Result<String, LmError>>) -> Self {
        Self {
            script: Mutex::new(script.into()),
            calls: Mutex::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        *self.calls.lock().expect("calls lock")
    }
}

impl LmBackend for ScriptedBackend {
    fn complete_once(&self, _request: &CompletionRequest) -> Result<String, LmError> {
        *self.calls.lock().expect("calls lock") += 1;
        self.script
            .lock()
            .expect("script lock")
            .pop_front()
            .unwrap_or(Err(LmError::ScriptExhausted))
    }
}

/// Counting semaphore bounding in-flight requests.
struct Semaphore {
    permits: Mutex<usize>,
    available: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Self {
            permits: Mutex::new(permits.max(1)),
            available: Condvar::new(),
        }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut permits = self.permits.lock().expect("semaphore lock");
        while *permits == 0 {
            permits = self.available.wait(permits).expect("semaphore wait");
        }
        *permits -= 1;
        SemaphoreGuard { semaphore: self }
    }
}

struct SemaphoreGuard<'a> {
    semaphore: &'a Semaphore,
}

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        *self.semaphore.permits.lock().expect("semaphore lock") += 1;
        self.semaphore.available.notify_one();
    }
}

/// Chat-completion HTTP client. The API key comes from an environment
/// variable, checked at construction so a missing key fails before any
/// request is sent.
pub struct HttpBackend {
    endpoint: String,
    model: String,
    api_key: String,
    client: reqwest::blocking::Client,
    semaphore: Semaphore,
}

/// Environment variable holding the API key for the HTTP backend.
pub const API_KEY_ENV: &str = "LM_API_KEY";

impl HttpBackend {
    pub fn new(endpoint: &str, model: &str, settings: &LmSettings) -> Result<Self, LmError> {
        Self::with_key_env(endpoint, model, settings, API_KEY_ENV)
    }

    pub fn with_key_env(
        endpoint: &str,
        model: &str,
        settings: &LmSettings,
        key_env: &str,
    ) -> Result<Self, LmError> {
        let api_key = std::env::var(key_env)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| LmError::Auth(format!("environment variable {key_env} is not set")))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(settings.request_timeout_secs))
            .build()
            .map_err(|e| LmError::Backend {
                status: None,
                message: e.to_string(),
            })?;
        Ok(Self {
            endpoint: endpoint.trim_end_matches('/').to_string(),
            model: model.to_string(),
            api_key,
            client,
            semaphore: Semaphore::new(settings.max_concurrent_requests),
        })
    }

    fn message_json(message: &Message) -> serde_json::Value {
        use base64::Engine as _;
        match &message.image_png {
            None => serde_json::json!({
                "role": message.role,
                "content": message.content,
            }),
            Some(png) => {
                let encoded = base64::engine::general_purpose::STANDARD.encode(png);
                let data_url = format!("data:image/png;base64,{encoded}");
                serde_json::json!({
                    "role": message.role,
                    "content": [
                        { "type": "text", "text": message.content },
                        { "type": "image_url", "image_url": { "url": data_url } },
                    ],
                })
            }
        }
    }
}

impl LmBackend for HttpBackend {
    fn complete_once(&self, request: &CompletionRequest) -> Result<String, LmError> {
        let _permit = self.semaphore.acquire();
        let body = serde_json::json!({
            "model": self.model,
            "messages": request.messages.iter().map(Self::message_json).collect::<Vec<_>>(),
            "temperature": request.temperature,
            "top_p": request.top_p,
        });
        let response = self
            .client
            .post(format!("{}/chat/completions", self.endpoint))
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    LmError::Timeout
                } else {
                    LmError::Backend {
                        status: None,
                        message: e.to_string(),
                    }
                }
            })?;
        let status = response.status().as_u16();
        let text = response.text().map_err(|e| LmError::Backend {
            status: Some(status),
            message: e.to_string(),
        })?;
        match status {
            200 => {
                let value: serde_json::Value = serde_json::from_str(&text)
                    .map_err(|e| LmError::InvalidResponse(e.to_string()))?;
                value["choices"][0]["message"]["content"]
                    .as_str()
                    .map(str::to_string)
                    .ok_or_else(|| {
                        LmError::InvalidResponse(
                            "response has no choices[0].message.content string".to_string(),
                        )
                    })
            }
            401 | 403 => Err(LmError::Auth(format!("HTTP {status}: {text}"))),
            429 => Err(LmError::RateLimited),
            _ => Err(LmError::Backend {
                status: Some(status),
                message: text,
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn text_observation(text: &str) -> Observation {
        Observation {
            text: Some(text.to_string()),
            image: None,
            id_map: BTreeMap::new(),
        }
    }

    fn tight_settings(limit: usize) -> LmSettings {
        LmSettings {
            input_token_limit: limit,
            retry_base_delay_ms: 1,
            ..LmSettings::default()
        }
    }

    #[test]
    fn default_template_substitutes_observation_verbatim() {
        let template = PromptTemplate::default_template();
        let observation = text_observation("[1] [BUTTON] [Go]\n[] [StaticText] [Hi]");
        let prompt = build_prompt(
            &template,
            &[],
            "press the button",
            &observation,
            Packaging::SingleText,
            &LmSettings::default(),
        )
        .unwrap();
        let text = prompt.text();
        let obs_at = text.find("OBSERVATION:").expect("observation header");
        assert!(text[obs_at..].contains("[1] [BUTTON] [Go]\n[] [StaticText] [Hi]"));
        assert!(text.contains("press the button"));
        assert!(!text.contains("{Objective}"));
        assert!(!text.contains("{Observation}"));
    }

    #[test]
    fn build_prompt_is_deterministic() {
        let template = PromptTemplate::default_template();
        let observation = text_observation("[1] [BUTTON] [Go]");
        let build = || {
            build_prompt(
                &template,
                &[],
                "objective",
                &observation,
                Packaging::SingleText,
                &LmSettings::default(),
            )
            .unwrap()
        };
        assert_eq!(build(), build());
    }

    #[test]
    fn missing_placeholder_rejected() {
        assert_eq!(
            PromptTemplate::parse("no slots here {Objective}"),
            Err(PromptError::MissingPlaceholder {
                name: "{Observation}".to_string()
            })
        );
        assert!(matches!(
            PromptTemplate::parse("{Objective} {Observation} {Observation}"),
            Err(PromptError::DuplicatePlaceholder { .. })
        ));
    }

    #[test]
    fn example_slots_counted_and_enforced() {
        let template =
            PromptTemplate::parse("{Example 1}\n{Example 2}\n{Objective} {Observation}").unwrap();
        assert_eq!(template.example_slots(), 2);
        let observation = text_observation("x");
        assert_eq!(
            build_prompt(
                &template,
                &["only one".to_string()],
                "o",
                &observation,
                Packaging::SingleText,
                &LmSettings::default(),
            ),
            Err(PromptError::ExampleCountMismatch {
                expected: 2,
                got: 1
            })
        );
    }

    #[test]
    fn per_example_packaging_splits_messages() {
        let template = PromptTemplate::parse(
            "Instructions.\n{Example 1}\n{Example 2}\nNow answer.\nOBJECTIVE: {Objective}\nOBSERVATION: {Observation}",
        )
        .unwrap();
        let observation = text_observation("[1] [BUTTON] [Go]");
        let prompt = build_prompt(
            &template,
            &["ex one".to_string(), "ex two".to_string()],
            "obj",
            &observation,
            Packaging::PerExampleMessages,
            &LmSettings::default(),
        )
        .unwrap();
        let roles: Vec<&str> = prompt.messages.iter().map(|m| m.role.as_str()).collect();
        assert_eq!(roles, vec!["system", "user", "user", "user"]);
        assert_eq!(prompt.messages[1].content, "ex one");
        assert_eq!(prompt.messages[2].content, "ex two");
        assert!(prompt.messages[3].content.contains("OBSERVATION: [1] [BUTTON] [Go]"));
    }

    #[test]
    fn truncation_drops_trailing_static_lines_first() {
        let template = PromptTemplate::parse("{Objective}|{Observation}").unwrap();
        let observation = text_observation(
            "[1] [BUTTON] [Go]\n[] [StaticText] [first note]\n[2] [A] [link]\n[] [StaticText] [second note]",
        );
        // generous enough to keep interactable lines, too small for both
        // static lines
        let settings = tight_settings(30);
        let prompt = build_prompt(
            &template,
            &[],
            "o",
            &observation,
            Packaging::SingleText,
            &settings,
        )
        .unwrap();
        let text = prompt.text();
        assert!(text.contains("[1] [BUTTON] [Go]"));
        assert!(text.contains("[2] [A] [link]"));
        assert!(!text.contains("second note"), "last static line dropped first");
    }

    #[test]
    fn truncation_failure_is_reported() {
        let template = PromptTemplate::parse("{Objective}|{Observation}").unwrap();
        let observation = text_observation("[1] [BUTTON] [Go]\n[2] [A] [link]");
        let settings = tight_settings(2);
        assert!(matches!(
            build_prompt(
                &template,
                &[],
                "o",
                &observation,
                Packaging::SingleText,
                &settings
            ),
            Err(PromptError::TokenBudgetExceeded { .. })
        ));
    }

    #[test]
    fn token_estimate_is_monotone() {
        let mut text = String::new();
        let mut last = 0;
        for _ in 0..50 {
            text.push_str("word, ");
            let now = estimate_tokens(&text, 4);
            assert!(now >= last);
            last = now;
        }
        assert!(estimate_tokens("averyveryverylongword", 4) >= 5);
    }

    #[test]
    fn mock_returns_reply_verbatim() {
        let backend = MockBackend::new("the scripted reply");
        let prompt = Prompt {
            messages: vec![Message::user("hello".to_string())],
        };
        let reply = complete(&backend, &prompt, &LmSettings::default()).unwrap();
        assert_eq!(reply, "the scripted reply");
    }

    #[test]
    fn transient_failures_retry_until_success() {
        let backend = ScriptedBackend::new(vec![
            Err(LmError::RateLimited),
            Err(LmError::RateLimited),
            Ok("made it".to_string()),
        ]);
        let prompt = Prompt {
            messages: vec![Message::user("hello".to_string())],
        };
        let settings = LmSettings {
            retry_base_delay_ms: 1,
            ..LmSettings::default()
        };
        let reply = complete(&backend, &prompt, &settings).unwrap();
        assert_eq!(reply, "made it");
        assert_eq!(backend.calls(), 3);
    }

    #[test]
    fn retries_exhaust_and_surface_the_error() {
        let backend = ScriptedBackend::new(vec![
            Err(LmError::Timeout),
            Err(LmError::Timeout),
            Err(LmError::Timeout),
            Err(LmError::Timeout),
        ]);
        let prompt = Prompt {
            messages: vec![Message::user("x".to_string())],
        };
        let settings = LmSettings {
            retry_base_delay_ms: 1,
            ..LmSettings::default()
        };
        assert_eq!(
            complete(&backend, &prompt, &settings),
            Err(LmError::Timeout)
        );
        assert_eq!(backend.calls(), 4, "initial try plus three retries");
    }

    #[test]
    fn auth_errors_do_not_retry() {
        let backend = ScriptedBackend::new(vec![
            Err(LmError::Auth("nope".to_string())),
            Ok("unreachable".to_string()),
        ]);
        let prompt = Prompt {
            messages: vec![Message::user("x".to_string())],
        };
        let settings = LmSettings {
            retry_base_delay_ms: 1,
            ..LmSettings::default()
        };
        assert!(matches!(
            complete(&backend, &prompt, &settings),
            Err(LmError::Auth(_))
        ));
        assert_eq!(backend.calls(), 1);
    }

    #[test]
    fn missing_api_key_fails_before_any_request() {
        std::env::remove_var("ELEMARK_TEST_MISSING_KEY");
        let result = HttpBackend::with_key_env(
            "http://localhost:1",
            "test-model",
            &LmSettings::default(),
            "ELEMARK_TEST_MISSING_KEY",
        );
        assert!(matches!(result, Err(LmError::Auth(_))));
    }

}
