//! Chat-completions client with a content-addressed on-disk cache and
//! offline backends (replay from a directory, scripted queue).

use std::collections::VecDeque;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dsl::{parse_dsl, DynamicSceneLayout};
use crate::prompting::{ChatMessage, PromptBundle};

pub const MAX_ATTEMPTS: u32 = 3;
pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";
pub const DEFAULT_MODEL: &str = "gpt-4";
pub const DEFAULT_API_KEY_ENV: &str = "OPENAI_API_KEY";

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("no parsable layout after {} attempts", .completions.len())]
    AllAttemptsFailed { completions: Vec<String>, attempts: Vec<GenerationAttempt> },
    #[error("transport: {0}")]
    Transport(String),
    #[error("no fixture at {0}")]
    MissingFixture(PathBuf),
    #[error("scripted backend has no completions left")]
    ScriptExhausted,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub api_key_env: String,
    #[serde(with = "secs")]
    pub timeout: Duration,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            endpoint: DEFAULT_ENDPOINT.to_string(),
            model: DEFAULT_MODEL.to_string(),
            temperature: 0.7,
            max_tokens: 1024,
            api_key_env: DEFAULT_API_KEY_ENV.to_string(),
            timeout: Duration::from_secs(60),
        }
    }
}

impl LlmConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(LlmError::InvalidConfig(format!("temperature {} < 0", self.temperature)));
        }
        if self.timeout.is_zero() {
            return Err(LlmError::InvalidConfig("timeout must be positive".into()));
        }
        if self.model.is_empty() {
            return Err(LlmError::InvalidConfig("empty model name".into()));
        }
        Ok(())
    }
}

mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        Duration::try_from_secs_f64(v).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum ParseOutcome {
    Ok,
    Error { kind: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationAttempt {
    pub prompt_hash: String,
    pub raw: String,
    pub outcome: ParseOutcome,
    /// 1-based.
    pub attempt: u32,
    /// Seconds.
    pub wall_time: f64,
}

#[derive(Debug, Clone)]
pub struct Generation {
    pub layout: DynamicSceneLayout,
    pub reasoning: Option<String>,
    pub attempts: Vec<GenerationAttempt>,
}

/// One completion request as seen by a backend.
#[derive(Debug, Clone, Copy)]
pub struct Request<'a> {
    pub messages: &'a [ChatMessage],
    /// Canonical prompt text used for hashing.
    pub prompt: &'a str,
    pub sample: u32,
    pub attempt: u32,
}

impl Request<'_> {
    pub fn key(&self, model: &str) -> String {
        cache_key_for_sample(model, self.prompt, self.sample, self.attempt)
    }
}

pub trait CompletionSource: Send + Sync {
    fn complete(&self, req: &Request<'_>, cfg: &LlmConfig) -> Result<String, LlmError>;
}

fn sha256_hex(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for (i, p) in parts.iter().enumerate() {
        if i > 0 {
            h.update([0u8]);
        }
        h.update(p);
    }
    hex::encode(h.finalize())
}

pub fn prompt_hash(prompt: &str) -> String {
    sha256_hex(&[prompt.as_bytes()])
}

pub fn cache_key(model: &str, prompt: &str, attempt: u32) -> String {
    sha256_hex(&[model.as_bytes(), prompt.as_bytes(), attempt.to_string().as_bytes()])
}

/// Sample 0 has the same key as [`cache_key`]; later samples of the same
/// prompt get their own entries.
pub fn cache_key_for_sample(model: &str, prompt: &str, sample: u32, attempt: u32) -> String {
    if sample == 0 {
        return cache_key(model, prompt, attempt);
    }
    sha256_hex(&[model.as_bytes(), prompt.as_bytes(), attempt.to_string().as_bytes(), format!("sample={sample}").as_bytes()])
}

/// Canonical text of a message list, as hashed for cache keys.
pub fn prompt_text(messages: &[ChatMessage]) -> String {
    serde_json::to_string(messages).expect("messages serialize")
}

fn model_dir(model: &str) -> String {
    model.chars().map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' }).collect()
}

pub fn cache_path(dir: &Path, model: &str, key: &str) -> PathBuf {
    dir.join(model_dir(model)).join(format!("{key}.txt"))
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Writes `text` at `path` unless something is already there. Returns the
/// content that ends up on disk.
fn write_once(path: &Path, text: &str) -> std::io::Result<String> {
    let dir = path.parent().expect("cache path has a parent");
    fs::create_dir_all(dir)?;
    let n = TMP_COUNTER.fetch_add(1, Ordering::Relaxed);
    let tmp = dir.join(format!(".tmp-{}-{n}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(text.as_bytes())?;
        f.sync_all()?;
    }
    // hard_link fails if the target exists, so the first writer wins
    let linked = fs::hard_link(&tmp, path);
    fs::remove_file(&tmp)?;
    match linked {
        Ok(()) => Ok(text.to_string()),
        Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => fs::read_to_string(path),
        Err(e) => Err(e),
    }
}

/// Removes every cached completion under `dir`. Returns the number of files removed.
pub fn purge_cache(dir: &Path) -> Result<usize, LlmError> {
    if !dir.exists() {
        return Ok(0);
    }
    let mut removed = 0;
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            removed += purge_cache(&path)?;
            if fs::read_dir(&path)?.next().is_none() {
                fs::remove_dir(&path)?;
            }
        } else if path.extension().is_some_and(|e| e == "txt") {
            fs::remove_file(&path)?;
            removed += 1;
        }
    }
    Ok(removed)
}

/// HTTP backend. Cached responses are reused; fresh ones are written back.
pub struct Live {
    agent: ureq::Agent,
    cache_dir: Option<PathBuf>,
}

impl Live {
    pub fn new(cfg: &LlmConfig, cache_dir: Option<PathBuf>) -> Self {
        let agent = ureq::Agent::config_builder().timeout_global(Some(cfg.timeout)).build().into();
        Self { agent, cache_dir }
    }

    fn request(&self, req: &Request<'_>, cfg: &LlmConfig) -> Result<String, LlmError> {
        let body = serde_json::json!({
            "model": cfg.model,
            "messages": req.messages,
            "temperature": cfg.temperature,
            "max_tokens": cfg.max_tokens,
        });
        let mut call = self.agent.post(&cfg.endpoint);
        if let Ok(key) = std::env::var(&cfg.api_key_env) {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = call.send_json(&body).map_err(|e| LlmError::Transport(e.to_string()))?;
        let v: serde_json::Value = resp.body_mut().read_json().map_err(|e| LlmError::Transport(e.to_string()))?;
        v.pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .map(str::to_string)
            .ok_or_else(|| LlmError::Transport("response has no choices[0].message.content".into()))
    }
}

impl CompletionSource for Live {
    fn complete(&self, req: &Request<'_>, cfg: &LlmConfig) -> Result<String, LlmError> {
        let path = self.cache_dir.as_ref().map(|d| cache_path(d, &cfg.model, &req.key(&cfg.model)));
        if let Some(p) = &path {
            if p.exists() {
                return Ok(fs::read_to_string(p)?);
            }
        }
        let text = self.request(req, cfg)?;
        match path {
            Some(p) => Ok(write_once(&p, &text)?),
            None => Ok(text),
        }
    }
}

/// Reads completions from a directory laid out like the cache.
pub struct Replay {
    pub dir: PathBuf,
}

impl Replay {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    /// Stores a fixture so that a later replay of `req` returns `text`.
    pub fn record(&self, model: &str, req: &Request<'_>, text: &str) -> Result<PathBuf, LlmError> {
        let path = cache_path(&self.dir, model, &req.key(model));
        write_once(&path, text)?;
        Ok(path)
    }
}

impl CompletionSource for Replay {
    fn complete(&self, req: &Request<'_>, cfg: &LlmConfig) -> Result<String, LlmError> {
        let path = cache_path(&self.dir, &cfg.model, &req.key(&cfg.model));
        fs::read_to_string(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => LlmError::MissingFixture(path),
            _ => LlmError::Io(e),
        })
    }
}

/// Hands out queued completions in order, ignoring the request.
#[derive(Default)]
pub struct Scripted {
    queue: Mutex<VecDeque<String>>,
}

impl Scripted {
    pub fn new<I, S>(completions: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self { queue: Mutex::new(completions.into_iter().map(Into::into).collect()) }
    }

    pub fn remaining(&self) -> usize {
        self.queue.lock().expect("queue lock").len()
    }
}

impl CompletionSource for Scripted {
    fn complete(&self, _req: &Request<'_>, _cfg: &LlmConfig) -> Result<String, LlmError> {
        self.queue.lock().expect("queue lock").pop_front().ok_or(LlmError::ScriptExhausted)
    }
}

pub fn generate_dsl(bundle: &PromptBundle, cfg: &LlmConfig, source: &dyn CompletionSource) -> Result<Generation, LlmError> {
    generate_dsl_sample(bundle, cfg, source, 0)
}

/// Sends the same messages up to three times and keeps the first completion
/// that parses.
pub fn generate_dsl_sample(
    bundle: &PromptBundle,
    cfg: &LlmConfig,
    source: &dyn CompletionSource,
    sample: u32,
) -> Result<Generation, LlmError> {
    cfg.validate()?;
    let messages = bundle.build_messages();
    let prompt = prompt_text(&messages);
    let hash = prompt_hash(&prompt);
    let mut attempts = Vec::new();
    for attempt in 1..=MAX_ATTEMPTS {
        let req = Request { messages: &messages, prompt: &prompt, sample, attempt };
        let start = Instant::now();
        let raw = source.complete(&req, cfg)?;
        let parsed = parse_dsl(&raw);
        let outcome = match &parsed {
            Ok(_) => ParseOutcome::Ok,
            Err(e) => ParseOutcome::Error { kind: e.kind().to_string(), message: e.to_string() },
        };
        attempts.push(GenerationAttempt {
            prompt_hash: hash.clone(),
            raw,
            outcome,
            attempt,
            wall_time: start.elapsed().as_secs_f64(),
        });
        if let Ok(p) = parsed {
            return Ok(Generation { layout: p.layout, reasoning: p.reasoning, attempts });
        }
    }
    Err(LlmError::AllAttemptsFailed { completions: attempts.iter().map(|a| a.raw.clone()).collect(), attempts })
}

#[cfg(test)]
mod tests {
    use super::*;

    const VALID: &str = "Reasoning: still.\nFrame 1: [{'id': 0, 'name': 'cup', 'box': [10, 10, 20, 20]}]\nBackground keyword: table";

    #[test]
    fn keys_are_stable_and_distinct() {
        assert_eq!(cache_key("m", "p", 1), cache_key("m", "p", 1));
        assert_ne!(cache_key("m", "p", 1), cache_key("m", "p", 2));
        assert_ne!(cache_key("m", "p", 1), cache_key("n", "p", 1));
        assert_eq!(cache_key_for_sample("m", "p", 0, 1), cache_key("m", "p", 1));
        assert_ne!(cache_key_for_sample("m", "p", 1, 1), cache_key("m", "p", 1));
        // field separator keeps ("ab","c") apart from ("a","bc")
        assert_ne!(cache_key("ab", "c", 1), cache_key("a", "bc", 1));
    }

    #[test]
    fn scripted_retries_until_parse() {
        let bundle = PromptBundle::new("a cup").unwrap();
        let src = Scripted::new(["nonsense", "Frame 1: [oops]", VALID]);
        let g = generate_dsl(&bundle, &LlmConfig::default(), &src).unwrap();
        assert_eq!(g.attempts.len(), 3);
        assert_eq!(g.attempts.iter().map(|a| a.attempt).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert!(matches!(g.attempts[1].outcome, ParseOutcome::Error { ref kind, .. } if kind == "malformed_frame_line"));
        assert_eq!(g.attempts[2].outcome, ParseOutcome::Ok);
        assert_eq!(g.reasoning.as_deref(), Some("still."));
    }

    #[test]
    fn all_failures_carry_completions() {
        let bundle = PromptBundle::new("a cup").unwrap();
        let src = Scripted::new(["a", "b", "c", VALID]);
        match generate_dsl(&bundle, &LlmConfig::default(), &src) {
            Err(LlmError::AllAttemptsFailed { completions, .. }) => assert_eq!(completions, vec!["a", "b", "c"]),
            other => panic!("{other:?}"),
        }
        assert_eq!(src.remaining(), 1);
    }

    #[test]
    fn config_checks() {
        let mut c = LlmConfig { temperature: -0.1, ..Default::default() };
        assert!(c.validate().is_err());
        c.temperature = 0.0;
        c.timeout = Duration::ZERO;
        assert!(c.validate().is_err());
    }

    #[test]
    fn write_once_keeps_first() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m").join("k.txt");
        assert_eq!(write_once(&p, "first").unwrap(), "first");
        assert_eq!(write_once(&p, "second").unwrap(), "first");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn purge_counts_files() {
        let dir = tempfile::tempdir().unwrap();
        write_once(&cache_path(dir.path(), "gpt-4", "a"), "x").unwrap();
        write_once(&cache_path(dir.path(), "org/model", "b"), "y").unwrap();
        assert_eq!(purge_cache(dir.path()).unwrap(), 2);
        assert_eq!(purge_cache(dir.path()).unwrap(), 0);
        assert_eq!(purge_cache(&dir.path().join("absent")).unwrap(), 0);
    }
}
