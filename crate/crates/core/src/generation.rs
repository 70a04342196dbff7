//! Prompt assembly from retrieved paths and the text-generation backends.
//!
//! Two backends implement [`TextGenerator`]: [`StubGenerator`], an offline
//! deterministic template, and [`ChatClient`], which POSTs a chat-completion
//! request to an HTTP endpoint.

use std::path::Path;
use std::time::{Duration, Instant};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embeddings::{EmbeddingTable, GroupVectors};
use crate::env::{PathDump, QueryContext, ReasoningPath, StepLabel, GROUP_LEAP};
use crate::error::{Error, Result};
use crate::gro::{run_rollout, Selection};
use crate::kg::{read_file, KnowledgeGraph};
use crate::linker::link_concepts;
use crate::policy::PolicyParams;

pub const DEFAULT_TEMPLATE: &str = include_str!("../templates/prompt_v1.json");
pub const DEFAULT_API_KEY_ENV: &str = "R2AG_API_KEY";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub version: u32,
    pub system: String,
    pub pre_admission_header: String,
    pub paths_header: String,
    pub instruction: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_TEMPLATE).expect("bundled template is valid")
    }
}

impl PromptTemplate {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&read_file(path)?)?)
    }
}

/// `name [Group] --relation--> name [Group] --group leap--> ...`
pub fn render_path(path: &ReasoningPath, kg: &KnowledgeGraph) -> String {
    let node = |c| format!("{} [{}]", kg.name(c), kg.group_id(kg.group_of_idx(c)));
    let mut line = String::new();
    for s in path.steps() {
        match s.label {
            None => {}
            Some(StepLabel::GroupLeap) => line.push_str(&format!(" --{GROUP_LEAP}--> ")),
            Some(StepLabel::Relation(l)) => line.push_str(&format!(" --{}--> ", kg.label(l))),
        }
        line.push_str(&node(s.concept));
    }
    line
}

/// One rendered line per path.
pub fn render_paths(paths: &[ReasoningPath], kg: &KnowledgeGraph) -> Vec<String> {
    paths.iter().map(|p| render_path(p, kg)).collect()
}

/// Paths ordered by origin id, truncated to `max_paths` when given.
pub fn select_paths(mut paths: Vec<ReasoningPath>, kg: &KnowledgeGraph, max_paths: Option<usize>) -> Vec<ReasoningPath> {
    paths.sort_by(|a, b| kg.id(a.origin()).cmp(kg.id(b.origin())));
    if let Some(n) = max_paths {
        paths.truncate(n);
    }
    paths
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptBundle {
    pub system: String,
    pub pre_admission_header: String,
    pub pre_admission: String,
    pub paths_header: String,
    /// One rendered line per path.
    pub path_lines: Vec<String>,
    /// Display names of every concept in the path block, first-seen order.
    pub path_concepts: Vec<String>,
    pub instruction: String,
}

impl PromptBundle {
    pub fn new(template: &PromptTemplate, pre_admission: &str, paths: &[ReasoningPath], kg: &KnowledgeGraph) -> Self {
        let mut path_concepts: Vec<String> = Vec::new();
        for p in paths {
            for c in p.concepts() {
                let name = kg.name(c);
                if !path_concepts.iter().any(|n| n == name) {
                    path_concepts.push(name.to_string());
                }
            }
        }
        Self {
            system: template.system.clone(),
            pre_admission_header: template.pre_admission_header.clone(),
            pre_admission: pre_admission.to_string(),
            paths_header: template.paths_header.clone(),
            path_lines: render_paths(paths, kg),
            path_concepts,
            instruction: template.instruction.clone(),
        }
    }

    pub fn path_block(&self) -> String {
        self.path_lines.join("\n")
    }

    /// The user turn; the path section is omitted when there are no paths.
    pub fn user_message(&self) -> String {
        let mut out = format!("{}\n{}\n\n", self.pre_admission_header, self.pre_admission.trim());
        if !self.path_lines.is_empty() {
            out.push_str(&format!("{}\n{}\n\n", self.paths_header, self.path_block()));
        }
        out.push_str(&self.instruction);
        out
    }
}

/// Links the pre-admission text and runs one rollout (greedy unless
/// `selection` says otherwise) of `horizon` steps.
#[allow(clippy::too_many_arguments)]
pub fn retrieve_for_patient(
    params: &PolicyParams,
    pre_admission: &str,
    kg: &KnowledgeGraph,
    table: &EmbeddingTable,
    gv: &GroupVectors,
    horizon: usize,
    selection: Selection,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<ReasoningPath>> {
    let keywords = link_concepts(pre_admission, kg);
    if keywords.is_empty() {
        return Err(Error::Unlinkable(
            pre_admission.chars().take(40).collect(),
            "no keyword links to the graph",
        ));
    }
    let ctx = QueryContext::new(keywords, kg, table)?;
    let rec = run_rollout(params, &ctx, kg, table, gv, horizon, selection, rng)?;
    Ok(rec.state.into_paths())
}

/// One line of the generated corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedRecord {
    pub id: String,
    pub generated: String,
    pub paths: Vec<PathDump>,
}

#[derive(Debug, thiserror::Error)]
pub enum EndpointError {
    #[error("network error after {attempts} attempt(s): {message}")]
    Network { attempts: u32, message: String },

    #[error("endpoint returned HTTP {status} after {attempts} attempt(s): {body}")]
    Status { status: u16, attempts: u32, body: String },

    #[error("request timed out after {attempts} attempt(s) ({elapsed:?})")]
    Timeout { attempts: u32, elapsed: Duration },

    #[error("malformed response after {attempts} attempt(s): {message}")]
    Malformed { attempts: u32, message: String },
}

pub trait TextGenerator: Send + Sync {
    fn generate(&self, bundle: &PromptBundle) -> std::result::Result<String, EndpointError>;
}

/// First sentence of `text`, terminator included.
fn first_sentence(text: &str) -> &str {
    let text = text.trim();
    let mut chars = text.char_indices().peekable();
    while let Some((i, ch)) = chars.next() {
        if matches!(ch, '.' | '!' | '?') && chars.peek().is_none_or(|(_, n)| n.is_whitespace()) {
            return &text[..i + ch.len_utf8()];
        }
    }
    text
}

/// Deterministic offline output: the first pre-admission sentence, then
/// one sentence per path concept name.
pub fn stub_generate(bundle: &PromptBundle) -> String {
    let mut out = first_sentence(&bundle.pre_admission).to_string();
    for name in &bundle.path_concepts {
        out.push_str(" Follow up regarding ");
        out.push_str(name);
        out.push('.');
    }
    out
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StubGenerator;

impl TextGenerator for StubGenerator {
    fn generate(&self, bundle: &PromptBundle) -> std::result::Result<String, EndpointError> {
        Ok(stub_generate(bundle))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    /// Full URL of the chat-completions route.
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
    /// Overall budget for one `generate` call, retries included.
    pub timeout_secs: f64,
    /// Extra attempts after the first for retryable failures.
    pub retries: u32,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "mistral-7b-instruct".into(),
            temperature: 0.0,
            max_tokens: 512,
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            timeout_secs: 60.0,
            retries: 2,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(Error::Config("temperature must be non-negative".into()));
        }
        if !self.timeout_secs.is_finite() || self.timeout_secs <= 0.0 {
            return Err(Error::Config("timeout must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
}

/// Blocking chat-completion client. 5xx, 429 and transport failures are
/// retried while the overall deadline allows.
pub struct ChatClient {
    cfg: GeneratorConfig,
    agent: ureq::Agent,
    api_key: Option<String>,
}

impl ChatClient {
    pub fn new(cfg: GeneratorConfig) -> Result<Self> {
        cfg.validate()?;
        let api_key = std::env::var(&cfg.api_key_env).ok().filter(|k| !k.is_empty());
        Ok(Self {
            cfg,
            agent: ureq::AgentBuilder::new().build(),
            api_key,
        })
    }

    pub fn request_body(&self, bundle: &PromptBundle) -> String {
        let user = bundle.user_message();
        let req = ChatRequest {
            model: &self.cfg.model,
            messages: vec![
                ChatMessage {
                    role: "system",
                    content: &bundle.system,
                },
                ChatMessage {
                    role: "user",
                    content: &user,
                },
            ],
            temperature: self.cfg.temperature,
            max_tokens: self.cfg.max_tokens,
        };
        serde_json::to_string(&req).expect("request serializes")
    }
}

fn parse_completion(body: &str) -> std::result::Result<String, String> {
    let v: serde_json::Value = serde_json::from_str(body).map_err(|e| e.to_string())?;
    v.pointer("/choices/0/message/content")
        .and_then(serde_json::Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| "missing choices[0].message.content".to_string())
}

fn is_timeout(t: &ureq::Transport) -> bool {
    let mut src: Option<&(dyn std::error::Error + 'static)> = std::error::Error::source(t);
    while let Some(e) = src {
        if let Some(io) = e.downcast_ref::<std::io::Error>() {
            if matches!(io.kind(), std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock) {
                return true;
            }
        }
        src = e.source();
    }
    t.to_string().contains("timed out")
}

impl TextGenerator for ChatClient {
    fn generate(&self, bundle: &PromptBundle) -> std::result::Result<String, EndpointError> {
        let body = self.request_body(bundle);
        let start = Instant::now();
        let budget = Duration::from_secs_f64(self.cfg.timeout_secs);
        let mut attempts = 0;
        loop {
            attempts += 1;
            let remaining = budget.saturating_sub(start.elapsed());
            if remaining.is_zero() {
                return Err(EndpointError::Timeout {
                    attempts: attempts - 1,
                    elapsed: start.elapsed(),
                });
            }
            let mut req = self
                .agent
                .post(&self.cfg.endpoint)
                .timeout(remaining)
                .set("Content-Type", "application/json");
            if let Some(key) = &self.api_key {
                req = req.set("Authorization", &format!("Bearer {key}"));
            }
            let retryable = match req.send_string(&body) {
                Ok(resp) => {
                    let text = resp.into_string().map_err(|e| EndpointError::Network {
                        attempts,
                        message: e.to_string(),
                    })?;
                    return parse_completion(&text)
                        .map_err(|message| EndpointError::Malformed { attempts, message });
                }
                Err(ureq::Error::Status(status, resp)) => {
                    let body = resp.into_string().unwrap_or_default();
                    let err = EndpointError::Status { status, attempts, body };
                    if status == 429 || status >= 500 {
                        err
                    } else {
                        return Err(err);
                    }
                }
                Err(ureq::Error::Transport(t)) => {
                    if is_timeout(&t) || start.elapsed() >= budget {
                        EndpointError::Timeout {
                            attempts,
                            elapsed: start.elapsed(),
                        }
                    } else {
                        EndpointError::Network {
                            attempts,
                            message: t.to_string(),
                        }
                    }
                }
            };
            if attempts > self.cfg.retries {
                return Err(retryable);
            }
            let backoff = Duration::from_millis(50 << attempts.min(6));
            let remaining = budget.saturating_sub(start.elapsed());
            if remaining <= backoff {
                return Err(retryable);
            }
            std::thread::sleep(backoff);
        }
    }
}

/// Sends one chat-completion request for `bundle`.
pub fn generate(cfg: &GeneratorConfig, bundle: &PromptBundle) -> Result<String> {
    Ok(ChatClient::new(cfg.clone())?.generate(bundle)?)
}
