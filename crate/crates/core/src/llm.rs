//! Zero-shot labeling and mental-state summaries through a chat-completion
//! provider.
//!
//! Prompts are frozen byte-for-byte because their hash is the response cache
//! key. The preamble and the post are sent as a single user message.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::{CacheError, JsonlCache};
use crate::corpus::Post;
use crate::hashing;
use crate::provider::{bounded_map, JsonClient, ProviderError, RetryPolicy};
use crate::task::{TaskKind, TaskLabel};

pub const API_KEY_ENV: &str = "LLM_API_KEY";
pub const BASE_URL_ENV: &str = "LLM_BASE_URL";

/// Where the preamble goes; recorded in run metadata.
pub const PROMPT_ROLE: &str = "user";

const CLASSIFY_PREAMBLE: &str = "You are a mental health expert. Read the following social media post and determine the user's mental health condition.";

const SUMMARY_PREAMBLE: &str = "You are a mental health expert. Read the following social media post and describe the user's mental state in one or two sentences. Focus on emotional tone, cognitive state, and any signs of mental health conditions. Avoid quoting the post verbatim.";

#[derive(Debug, Error)]
pub enum LlmError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error("cannot read fixture {path}: {message}")]
    Fixture { path: String, message: String },
    #[error("invalid LLM configuration: {0}")]
    Config(String),
}

/// `Summary` or one of the three classification tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Classify(TaskKind),
    Summary,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub kind: PromptKind,
    pub preamble: String,
    pub label_list: Vec<&'static str>,
}

impl PromptTemplate {
    pub fn zero_shot(task: TaskKind) -> Self {
        PromptTemplate { kind: PromptKind::Classify(task), preamble: CLASSIFY_PREAMBLE.to_string(), label_list: task.label_names() }
    }

    pub fn summary() -> Self {
        PromptTemplate { kind: PromptKind::Summary, preamble: SUMMARY_PREAMBLE.to_string(), label_list: Vec::new() }
    }

    pub fn render(&self, post_text: &str) -> String {
        let mut prompt = self.preamble.clone();
        if !self.label_list.is_empty() {
            prompt.push_str(" Choose from the following labels: ");
            prompt.push_str(&self.label_list.join(", "));
            prompt.push('.');
        }
        prompt.push_str("\n\nPost: ");
        prompt.push_str(post_text);
        prompt
    }
}

pub fn build_zero_shot_prompt(task: TaskKind, post: &Post) -> String {
    PromptTemplate::zero_shot(task).render(&post.text)
}

pub fn build_summary_prompt(post: &Post) -> String {
    PromptTemplate::summary().render(&post.text)
}

fn normalize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

/// Parses a free-text response into an index into `labels`.
///
/// After normalization (lowercase, punctuation to spaces, collapsed
/// whitespace) an exact match wins. Otherwise labels are searched as whole
/// words, longest first, each hit consuming its words so that
/// "non-depression" never also counts as "depression". Exactly one distinct
/// label must be found; zero or several give `None`.
pub fn parse_label(response: &str, labels: &[&str]) -> Option<usize> {
    let tokens = normalize(response);
    let label_tokens: Vec<Vec<String>> = labels.iter().map(|l| normalize(l)).collect();

    if let Some(i) = label_tokens.iter().position(|l| !l.is_empty() && *l == tokens) {
        return Some(i);
    }

    let mut order: Vec<usize> = (0..labels.len()).filter(|&i| !label_tokens[i].is_empty()).collect();
    order.sort_by_key(|&i| {
        let l = &label_tokens[i];
        (std::cmp::Reverse(l.len()), std::cmp::Reverse(l.iter().map(String::len).sum::<usize>()), i)
    });

    let mut consumed = vec![false; tokens.len()];
    let mut hits: Vec<usize> = Vec::new();
    for i in order {
        let needle = &label_tokens[i];
        let k = needle.len();
        let mut start = 0;
        while start + k <= tokens.len() {
            let window = start..start + k;
            if tokens[window.clone()] == needle[..] && !consumed[window.clone()].iter().any(|&c| c) {
                consumed[window].iter_mut().for_each(|c| *c = true);
                if !hits.contains(&i) {
                    hits.push(i);
                }
                start += k;
            } else {
                start += 1;
            }
        }
    }
    match hits.as_slice() {
        [only] => Some(*only),
        _ => None,
    }
}

/// [`parse_label`] against a task's label space.
pub fn parse_task_label(response: &str, task: TaskKind) -> Option<TaskLabel> {
    let labels = task.labels();
    let names: Vec<&str> = labels.iter().map(|l| l.name()).collect();
    parse_label(response, &names).map(|i| labels[i])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Parsed {
    Label(TaskLabel),
    Summary(String),
    Unparseable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmOutcome {
    pub post_id: String,
    pub raw_response: String,
    pub parsed: Parsed,
}

impl LlmOutcome {
    pub fn label(&self) -> Option<TaskLabel> {
        match self.parsed {
            Parsed::Label(l) => Some(l),
            _ => None,
        }
    }
}

pub trait ChatProvider: Send + Sync {
    fn model_name(&self) -> String;
    /// Single completion at temperature 0; returns the first message content.
    fn complete(&self, prompt: &str) -> Result<String, ProviderError>;
}

/// Hash under which mock fixtures store canned responses.
pub fn prompt_hash(prompt: &str) -> String {
    hashing::sha256_hex(&[prompt])
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockFixture {
    /// prompt hash -> canned response
    pub responses: HashMap<String, String>,
    /// Returned when a prompt has no entry; absent means the call fails.
    #[serde(default)]
    pub default: Option<String>,
}

/// Offline chat provider answering from a fixture.
#[derive(Debug, Clone, Default)]
pub struct MockChat {
    pub fixture: MockFixture,
}

impl MockChat {
    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let fail = |message: String| LlmError::Fixture { path: path.display().to_string(), message };
        let text = std::fs::read_to_string(path).map_err(|e| fail(e.to_string()))?;
        let fixture = serde_json::from_str(&text).map_err(|e| fail(e.to_string()))?;
        Ok(MockChat { fixture })
    }

    /// Registers a canned response for an exact prompt.
    pub fn insert(&mut self, prompt: &str, response: impl Into<String>) {
        self.fixture.responses.insert(prompt_hash(prompt), response.into());
    }
}

impl ChatProvider for MockChat {
    fn model_name(&self) -> String {
        "mock".into()
    }

    fn complete(&self, prompt: &str) -> Result<String, ProviderError> {
        let hash = prompt_hash(prompt);
        self.fixture
            .responses
            .get(&hash)
            .or(self.fixture.default.as_ref())
            .cloned()
            .ok_or(ProviderError::NoFixture(hash))
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
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatReply,
}

#[derive(Deserialize)]
struct ChatReply {
    #[serde(default)]
    content: Option<String>,
}

/// Client for the common chat-completions endpoint (`POST {base}/chat/completions`).
pub struct RemoteChat {
    client: JsonClient,
    model: String,
}

impl RemoteChat {
    pub fn new(base_url: Option<&str>, model: &str, timeout: Duration, retry: RetryPolicy) -> Result<Self, LlmError> {
        let base = base_url
            .map(str::to_string)
            .or_else(|| std::env::var(BASE_URL_ENV).ok())
            .ok_or_else(|| LlmError::Config(format!("remote LLM needs base_url or {BASE_URL_ENV}")))?;
        let key = std::env::var(API_KEY_ENV).ok();
        let client = JsonClient::new(&base, "chat/completions", key, timeout, retry)?;
        Ok(RemoteChat { client, model: model.to_string() })
    }
}

impl ChatProvider for RemoteChat {
    fn model_name(&self) -> String {
        self.model.clone()
    }

    fn complete(&self, prompt: &str) -> Result<String, ProviderError> {
        let req = ChatRequest {
            model: &self.model,
            messages: [ChatMessage { role: PROMPT_ROLE, content: prompt }],
            temperature: 0.0,
        };
        let resp: ChatResponse = self.client.post(&req)?;
        resp.choices
            .into_iter()
            .next()
            .map(|c| c.message.content.unwrap_or_default())
            .ok_or_else(|| ProviderError::BadResponse("response has no choices".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredResponse {
    pub response: String,
}

pub type ResponseCache = JsonlCache<StoredResponse>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmStats {
    pub requested: usize,
    pub cache_hits: usize,
    pub provider_calls: usize,
    pub failures: usize,
    pub unparseable: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlmFailure {
    pub post_id: String,
    pub error: ProviderError,
}

/// Order-aligned results of one batch; `outcomes[i]` is `None` exactly when
/// post `i` appears in `failures`.
#[derive(Debug, Clone, PartialEq)]
pub struct LlmRun {
    pub outcomes: Vec<Option<LlmOutcome>>,
    pub failures: Vec<LlmFailure>,
}

impl LlmRun {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }
}

pub struct LlmClient {
    provider: Box<dyn ChatProvider>,
    cache: ResponseCache,
    concurrency: usize,
    stats: LlmStats,
}

impl LlmClient {
    pub fn new(provider: Box<dyn ChatProvider>, cache: ResponseCache, concurrency: usize) -> Self {
        LlmClient { provider, cache, concurrency: concurrency.max(1), stats: LlmStats::default() }
    }

    pub fn with_cache_path(provider: Box<dyn ChatProvider>, cache_path: Option<&Path>, concurrency: usize) -> Result<Self, LlmError> {
        let cache = match cache_path {
            Some(p) => ResponseCache::open(p)?,
            None => ResponseCache::in_memory(),
        };
        Ok(LlmClient::new(provider, cache, concurrency))
    }

    pub fn model_name(&self) -> String {
        self.provider.model_name()
    }

    pub fn stats(&self) -> LlmStats {
        self.stats
    }

    /// Raw responses for `prompts`; successful responses are cached even when
    /// other prompts fail.
    fn complete_all(&mut self, prompts: &[String]) -> Result<Vec<Result<String, ProviderError>>, LlmError> {
        let model = self.provider.model_name();
        let keys: Vec<String> = prompts.iter().map(|p| hashing::sha256_hex(&[&model, p])).collect();

        let mut first_index: HashMap<&str, usize> = HashMap::new();
        let mut pending = Vec::new();
        for (i, key) in keys.iter().enumerate() {
            if !self.cache.contains(key) && !first_index.contains_key(key.as_str()) {
                first_index.insert(key, i);
                pending.push(i);
            }
        }

        let calls = AtomicUsize::new(0);
        let provider = &*self.provider;
        let fetched = bounded_map(&pending, self.concurrency, |&i| {
            calls.fetch_add(1, Ordering::Relaxed);
            provider.complete(&prompts[i])
        });
        self.stats.provider_calls += calls.into_inner();

        let mut errors: HashMap<String, ProviderError> = HashMap::new();
        for (&i, result) in pending.iter().zip(fetched) {
            match result {
                Ok(response) => self.cache.put(&keys[i], &model, StoredResponse { response })?,
                Err(e) => {
                    errors.insert(keys[i].clone(), e);
                }
            }
        }

        self.stats.requested += prompts.len();
        self.stats.cache_hits += prompts.len() - pending.len();
        Ok(keys
            .iter()
            .map(|k| match self.cache.get(k) {
                Some(stored) => Ok(stored.response.clone()),
                None => Err(errors[k].clone()),
            })
            .collect())
    }

    fn run(&mut self, posts: &[Post], prompts: Vec<String>, parse: impl Fn(&str) -> Parsed) -> Result<LlmRun, LlmError> {
        let responses = self.complete_all(&prompts)?;
        let mut outcomes = Vec::with_capacity(posts.len());
        let mut failures = Vec::new();
        for (post, response) in posts.iter().zip(responses) {
            match response {
                Ok(raw) => {
                    let parsed = parse(&raw);
                    if parsed == Parsed::Unparseable {
                        self.stats.unparseable += 1;
                    }
                    outcomes.push(Some(LlmOutcome { post_id: post.id.clone(), raw_response: raw, parsed }));
                }
                Err(error) => {
                    log::warn!("LLM call for {} failed: {error}", post.id);
                    self.stats.failures += 1;
                    failures.push(LlmFailure { post_id: post.id.clone(), error });
                    outcomes.push(None);
                }
            }
        }
        Ok(LlmRun { outcomes, failures })
    }

    /// Zero-shot labels for `posts`. Off-list or ambiguous responses become
    /// [`Parsed::Unparseable`].
    pub fn classify_zero_shot(&mut self, task: TaskKind, posts: &[Post]) -> Result<LlmRun, LlmError> {
        let template = PromptTemplate::zero_shot(task);
        let prompts = posts.iter().map(|p| template.render(&p.text)).collect();
        self.run(posts, prompts, |raw| match parse_task_label(raw, task) {
            Some(label) => Parsed::Label(label),
            None => Parsed::Unparseable,
        })
    }

    /// Mental-state summaries, stored verbatim. Blank summaries are unparseable.
    pub fn summarize(&mut self, posts: &[Post]) -> Result<LlmRun, LlmError> {
        let template = PromptTemplate::summary();
        let prompts = posts.iter().map(|p| template.render(&p.text)).collect();
        self.run(posts, prompts, |raw| {
            if raw.trim().is_empty() {
                Parsed::Unparseable
            } else {
                Parsed::Summary(raw.to_string())
            }
        })
    }
}
