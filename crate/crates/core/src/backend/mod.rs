//! Token-logprob interface to language models.
//!
//! Three implementations ship with the crate: [`ScriptedBackend`] (rule
//! tables, used by tests and demos), [`HttpBackend`] (OpenAI-compatible
//! completions endpoint) and the gridworld oracle in
//! [`crate::gridworld::OracleBackend`].

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use thiserror::Error;

mod http;
mod scripted;

pub use http::{parse_completion, request_json, CompletionChoice, HttpBackend, HttpConfig, ENV_API_KEY, ENV_BACKEND_URL, ENV_MODEL};
pub use scripted::{ContinuationRule, GenerateRule, PromptMatch, ScriptRules, ScriptedBackend, TokenRule};

/// Probability assigned to marker candidates the model did not report.
pub const EPSILON_FLOOR: f64 = 1e-10;

/// Number of next-token alternatives requested from remote backends.
pub const TOP_LOGPROBS: usize = 20;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("malformed backend response: {0}")]
    Protocol(String),
    #[error("backend does not support {0}")]
    Unsupported(&'static str),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("oracle desync: {0}")]
    Desync(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transport(_))
    }
}

pub type BackendResult<T> = std::result::Result<T, BackendError>;

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub prompt: String,
    pub max_tokens: usize,
    pub temperature: f64,
    pub stop: Vec<String>,
}

impl GenerationRequest {
    /// Greedy single-line request.
    pub fn line(prompt: impl Into<String>, max_tokens: usize) -> Self {
        GenerationRequest { prompt: prompt.into(), max_tokens, temperature: 0.0, stop: vec!["\n".into()] }
    }

    pub fn validate(&self) -> BackendResult<()> {
        if self.prompt.is_empty() {
            return Err(BackendError::InvalidRequest("prompt is empty".into()));
        }
        if self.max_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_tokens must be >= 1".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(BackendError::InvalidRequest("temperature must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GenerationResult {
    pub text: String,
    /// Token strings, when the backend reports them.
    pub tokens: Vec<String>,
    pub token_logprobs: Vec<f64>,
    pub total_tokens: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scored {
    pub logprob: f64,
    pub total_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TokenProbs {
    pub probs: Vec<(String, f64)>,
    pub total_tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenQuery {
    pub prompt: String,
    pub candidate_tokens: Vec<String>,
}

impl TokenQuery {
    pub fn new(prompt: impl Into<String>, candidates: &[&str]) -> Self {
        TokenQuery { prompt: prompt.into(), candidate_tokens: candidates.iter().map(|s| s.to_string()).collect() }
    }

    pub fn validate(&self) -> BackendResult<()> {
        if self.candidate_tokens.is_empty() {
            return Err(BackendError::InvalidRequest("candidate_tokens is empty".into()));
        }
        let mut seen: Vec<String> = Vec::new();
        for c in &self.candidate_tokens {
            let n = normalize_token(c);
            if n.is_empty() || seen.contains(&n) {
                return Err(BackendError::InvalidRequest(format!("candidate token {c:?} is empty or duplicated")));
            }
            seen.push(n);
        }
        Ok(())
    }
}

/// Trim + case-fold, used to match token variants against candidates.
pub fn normalize_token(s: &str) -> String {
    s.trim().to_lowercase()
}

/// Sums the probability of every reported alternative whose normalized text
/// equals each candidate; unreported candidates get [`EPSILON_FLOOR`].
pub fn aggregate_candidates<S: AsRef<str>>(alternatives: &[(S, f64)], candidates: &[String]) -> Vec<(String, f64)> {
    candidates
        .iter()
        .map(|c| {
            let key = normalize_token(c);
            let mass: f64 = alternatives.iter().filter(|(t, _)| normalize_token(t.as_ref()) == key).map(|(_, p)| p).sum();
            (c.clone(), if mass > 0.0 { mass.min(1.0) } else { EPSILON_FLOOR })
        })
        .collect()
}

/// Truncates `text` at the earliest stop string.
pub fn apply_stop(text: &str, stop: &[String]) -> String {
    let cut = stop.iter().filter(|s| !s.is_empty()).filter_map(|s| text.find(s.as_str())).min();
    match cut {
        Some(i) => text[..i].to_string(),
        None => text.to_string(),
    }
}

/// Word-level tokenizer used by the scripted and oracle backends: each
/// token is a run of whitespace followed by a run of non-whitespace.
pub fn word_tokens(s: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut in_word = false;
    for (i, ch) in s.char_indices() {
        if ch.is_whitespace() {
            if in_word {
                out.push(&s[start..i]);
                start = i;
                in_word = false;
            }
        } else {
            in_word = true;
        }
    }
    if in_word {
        out.push(&s[start..]);
    }
    out
}

/// Rough token count for local backends.
pub fn count_tokens(s: &str) -> u64 {
    s.split_whitespace().count() as u64
}

pub trait LlmBackend: Send + Sync {
    fn generate(&self, req: &GenerationRequest) -> BackendResult<GenerationResult>;

    /// Sum of natural-log token probabilities of `continuation` given `prompt`.
    fn score_continuation(&self, prompt: &str, continuation: &str) -> BackendResult<Scored>;

    /// Probability of each candidate as the next token after `q.prompt`.
    fn next_token_probs(&self, q: &TokenQuery) -> BackendResult<TokenProbs>;

    /// The `k` most likely next tokens after `prompt`, most likely first.
    fn top_next_tokens(&self, prompt: &str, k: usize) -> BackendResult<TokenProbs>;
}

impl<T: LlmBackend + ?Sized> LlmBackend for Arc<T> {
    fn generate(&self, req: &GenerationRequest) -> BackendResult<GenerationResult> {
        (**self).generate(req)
    }
    fn score_continuation(&self, prompt: &str, continuation: &str) -> BackendResult<Scored> {
        (**self).score_continuation(prompt, continuation)
    }
    fn next_token_probs(&self, q: &TokenQuery) -> BackendResult<TokenProbs> {
        (**self).next_token_probs(q)
    }
    fn top_next_tokens(&self, prompt: &str, k: usize) -> BackendResult<TokenProbs> {
        (**self).top_next_tokens(prompt, k)
    }
}

impl<T: LlmBackend + ?Sized> LlmBackend for &T {
    fn generate(&self, req: &GenerationRequest) -> BackendResult<GenerationResult> {
        (**self).generate(req)
    }
    fn score_continuation(&self, prompt: &str, continuation: &str) -> BackendResult<Scored> {
        (**self).score_continuation(prompt, continuation)
    }
    fn next_token_probs(&self, q: &TokenQuery) -> BackendResult<TokenProbs> {
        (**self).next_token_probs(q)
    }
    fn top_next_tokens(&self, prompt: &str, k: usize) -> BackendResult<TokenProbs> {
        (**self).top_next_tokens(prompt, k)
    }
}

/// Wraps a backend and accumulates the token counts it reports.
pub struct Metered<B> {
    inner: B,
    tokens: AtomicU64,
}

impl<B: LlmBackend> Metered<B> {
    pub fn new(inner: B) -> Self {
        Metered { inner, tokens: AtomicU64::new(0) }
    }

    pub fn tokens(&self) -> u64 {
        self.tokens.load(Ordering::Relaxed)
    }

    fn add(&self, n: u64) {
        self.tokens.fetch_add(n, Ordering::Relaxed);
    }
}

impl<B: LlmBackend> LlmBackend for Metered<B> {
    fn generate(&self, req: &GenerationRequest) -> BackendResult<GenerationResult> {
        let r = self.inner.generate(req)?;
        self.add(r.total_tokens);
        Ok(r)
    }
    fn score_continuation(&self, prompt: &str, continuation: &str) -> BackendResult<Scored> {
        let r = self.inner.score_continuation(prompt, continuation)?;
        self.add(r.total_tokens);
        Ok(r)
    }
    fn next_token_probs(&self, q: &TokenQuery) -> BackendResult<TokenProbs> {
        let r = self.inner.next_token_probs(q)?;
        self.add(r.total_tokens);
        Ok(r)
    }
    fn top_next_tokens(&self, prompt: &str, k: usize) -> BackendResult<TokenProbs> {
        let r = self.inner.top_next_tokens(prompt, k)?;
        self.add(r.total_tokens);
        Ok(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregation_sums_variants() {
        let top = [(" GOOD", 0.3), ("GOOD", 0.1), (" BAD", 0.05), ("good", 0.01)];
        let got = aggregate_candidates(&top, &["GOOD".into(), "BAD".into(), "UNKNOWN".into()]);
        assert!((got[0].1 - 0.41).abs() < 1e-12);
        assert!((got[1].1 - 0.05).abs() < 1e-12);
        assert_eq!(got[2].1, EPSILON_FLOOR);
    }

    #[test]
    fn leading_space_variant() {
        let top = [(" GOOD", 0.3), ("GOOD", 0.1)];
        let got = aggregate_candidates(&top, &["GOOD".into()]);
        assert!((got[0].1 - 0.4).abs() < 1e-12);
    }

    #[test]
    fn stop_truncation() {
        assert_eq!(apply_stop("turn left\nObservation:", &["\n".into()]), "turn left");
        assert_eq!(apply_stop("abc", &[]), "abc");
        assert_eq!(apply_stop("a.b;c", &[";".into(), ".".into()]), "a");
    }

    #[test]
    fn tokenizer() {
        assert_eq!(word_tokens("go forward"), vec!["go", " forward"]);
        assert_eq!(word_tokens("  a  b "), vec!["  a", "  b"]);
        assert!(word_tokens("").is_empty());
    }

    #[test]
    fn query_validation() {
        assert!(TokenQuery::new("p", &[]).validate().is_err());
        assert!(TokenQuery::new("p", &["GOOD", " good"]).validate().is_err());
        assert!(TokenQuery::new("p", &["GOOD", "BAD"]).validate().is_ok());
        assert!(GenerationRequest::line("p", 0).validate().is_err());
        assert!(GenerationRequest::line("", 3).validate().is_err());
    }
}
