//! OpenAI-compatible `/completions` client.
//!
//! Generation, echo scoring and next-token distributions are all served by
//! the same endpoint: `echo: true` returns prompt-token logprobs, and
//! `logprobs: k` returns the top-k alternatives at every position.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    aggregate_candidates, apply_stop, BackendError, BackendResult, GenerationRequest, GenerationResult, LlmBackend, Scored, TokenProbs,
    TokenQuery, TOP_LOGPROBS,
};

pub const ENV_BACKEND_URL: &str = "LAC_BACKEND_URL";
pub const ENV_API_KEY: &str = "LAC_API_KEY";
pub const ENV_MODEL: &str = "LAC_MODEL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    pub base_url: String,
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_top")]
    pub top_logprobs: usize,
}

fn default_timeout() -> u64 {
    60
}
fn default_retries() -> u32 {
    2
}
fn default_top() -> usize {
    TOP_LOGPROBS
}

impl HttpConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        HttpConfig {
            base_url: base_url.into(),
            model: model.into(),
            api_key: None,
            timeout_secs: default_timeout(),
            retries: default_retries(),
            top_logprobs: TOP_LOGPROBS,
        }
    }

    /// Reads `LAC_BACKEND_URL`, `LAC_MODEL` and `LAC_API_KEY`.
    pub fn from_env() -> Option<Self> {
        let url = std::env::var(ENV_BACKEND_URL).ok()?;
        let model = std::env::var(ENV_MODEL).unwrap_or_default();
        let mut cfg = HttpConfig::new(url, model);
        cfg.api_key = std::env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty());
        Some(cfg)
    }

    fn endpoint(&self) -> String {
        format!("{}/completions", self.base_url.trim_end_matches('/'))
    }
}

#[derive(Debug, Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: usize,
    temperature: f64,
    #[serde(skip_serializing_if = "<[String]>::is_empty")]
    stop: &'a [String],
    #[serde(skip_serializing_if = "Option::is_none")]
    logprobs: Option<usize>,
    echo: bool,
}

/// First choice of a completions response, with logprob arrays flattened.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CompletionChoice {
    pub text: String,
    pub tokens: Vec<String>,
    pub token_logprobs: Vec<Option<f64>>,
    pub top_logprobs: Vec<Option<BTreeMap<String, f64>>>,
    pub text_offset: Vec<usize>,
    pub has_logprobs: bool,
    pub total_tokens: Option<u64>,
}

#[derive(Deserialize)]
struct RawResponse {
    choices: Vec<RawChoice>,
    #[serde(default)]
    usage: Option<RawUsage>,
}

#[derive(Deserialize)]
struct RawChoice {
    #[serde(default)]
    text: String,
    #[serde(default)]
    logprobs: Option<RawLogprobs>,
}

#[derive(Deserialize)]
struct RawLogprobs {
    #[serde(default)]
    tokens: Vec<String>,
    #[serde(default)]
    token_logprobs: Vec<Option<f64>>,
    #[serde(default)]
    top_logprobs: Option<Vec<Option<BTreeMap<String, f64>>>>,
    #[serde(default)]
    text_offset: Vec<usize>,
}

#[derive(Deserialize)]
struct RawUsage {
    #[serde(default)]
    total_tokens: Option<u64>,
}

/// Parses a completions response body and returns its first choice.
pub fn parse_completion(body: &str) -> BackendResult<CompletionChoice> {
    let raw: RawResponse = serde_json::from_str(body).map_err(|e| BackendError::Protocol(e.to_string()))?;
    let choice = raw.choices.into_iter().next().ok_or_else(|| BackendError::Protocol("response has no choices".into()))?;
    let total_tokens = raw.usage.and_then(|u| u.total_tokens);
    let mut out = CompletionChoice { text: choice.text, total_tokens, ..Default::default() };
    if let Some(lp) = choice.logprobs {
        if lp.tokens.len() != lp.token_logprobs.len() {
            return Err(BackendError::Protocol("tokens and token_logprobs differ in length".into()));
        }
        out.has_logprobs = true;
        out.tokens = lp.tokens;
        out.token_logprobs = lp.token_logprobs;
        out.top_logprobs = lp.top_logprobs.unwrap_or_default();
        out.text_offset = lp.text_offset;
    }
    Ok(out)
}

impl CompletionChoice {
    /// Sum of logprobs over tokens that overlap the byte range `[start, end)`
    /// of the echoed text.
    pub fn range_logprob(&self, start: usize, end: usize) -> BackendResult<f64> {
        let offsets: Vec<usize> = if self.text_offset.len() == self.tokens.len() {
            self.text_offset.clone()
        } else {
            let first = self.text_offset.first().copied().unwrap_or(0);
            self.tokens
                .iter()
                .scan(first, |pos, t| {
                    let s = *pos;
                    *pos += t.len();
                    Some(s)
                })
                .collect()
        };
        let mut total = 0.0;
        let mut covered = false;
        for ((tok, lp), off) in self.tokens.iter().zip(&self.token_logprobs).zip(offsets) {
            let tok_end = off + tok.len();
            if tok_end > start && off < end {
                covered = true;
                total += lp.ok_or_else(|| BackendError::Protocol("missing logprob inside scored range".into()))?;
            }
        }
        if !covered {
            return Err(BackendError::Protocol("echoed tokens do not cover the continuation".into()));
        }
        Ok(total)
    }

    /// Top-k alternatives at the first generated position, as probabilities.
    pub fn first_alternatives(&self, position: usize) -> BackendResult<Vec<(String, f64)>> {
        let map = self
            .top_logprobs
            .get(position)
            .and_then(|m| m.as_ref())
            .ok_or(BackendError::Unsupported("top logprobs in the backend response"))?;
        let mut alts: Vec<(String, f64)> = map.iter().map(|(t, lp)| (t.clone(), lp.exp())).collect();
        alts.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(alts)
    }
}

pub struct HttpBackend {
    cfg: HttpConfig,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(cfg: HttpConfig) -> BackendResult<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(HttpBackend { cfg, client })
    }

    pub fn config(&self) -> &HttpConfig {
        &self.cfg
    }

    fn post_once(&self, body: &CompletionRequest<'_>) -> BackendResult<CompletionChoice> {
        let mut req = self.client.post(self.cfg.endpoint()).json(body);
        if let Some(key) = &self.cfg.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| BackendError::Transport(e.to_string()))?;
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(BackendError::Transport(format!("HTTP {status}: {}", truncate(&text))));
        }
        if !status.is_success() {
            return Err(BackendError::Protocol(format!("HTTP {status}: {}", truncate(&text))));
        }
        parse_completion(&text)
    }

    fn post(&self, body: &CompletionRequest<'_>) -> BackendResult<CompletionChoice> {
        let mut attempt = 0;
        loop {
            match self.post_once(body) {
                Err(e) if e.is_retryable() && attempt < self.cfg.retries => {
                    attempt += 1;
                    log::warn!("completions request failed ({e}); retry {attempt}/{}", self.cfg.retries);
                    std::thread::sleep(Duration::from_millis(200 * attempt as u64));
                }
                other => return other,
            }
        }
    }

    fn next_token_distribution(&self, prompt: &str, k: usize) -> BackendResult<(Vec<(String, f64)>, u64)> {
        let body = CompletionRequest {
            model: &self.cfg.model,
            prompt,
            max_tokens: 1,
            temperature: 0.0,
            stop: &[],
            logprobs: Some(k.max(1)),
            echo: false,
        };
        let choice = self.post(&body)?;
        if !choice.has_logprobs {
            return Err(BackendError::Unsupported("logprobs in the backend response"));
        }
        let alts = choice.first_alternatives(0)?;
        Ok((alts, choice.total_tokens.unwrap_or(0)))
    }
}

fn truncate(s: &str) -> &str {
    match s.char_indices().nth(200) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

impl LlmBackend for HttpBackend {
    fn generate(&self, req: &GenerationRequest) -> BackendResult<GenerationResult> {
        req.validate()?;
        let body = CompletionRequest {
            model: &self.cfg.model,
            prompt: &req.prompt,
            max_tokens: req.max_tokens,
            temperature: req.temperature,
            stop: &req.stop,
            logprobs: Some(1),
            echo: false,
        };
        let choice = self.post(&body)?;
        let text = apply_stop(&choice.text, &req.stop);
        let token_logprobs: Vec<f64> = choice.token_logprobs.iter().map(|lp| lp.unwrap_or(0.0).min(0.0)).collect();
        let total_tokens = choice.total_tokens.unwrap_or(token_logprobs.len() as u64).max(token_logprobs.len() as u64);
        Ok(GenerationResult { text, tokens: choice.tokens, token_logprobs, total_tokens })
    }

    fn score_continuation(&self, prompt: &str, continuation: &str) -> BackendResult<Scored> {
        if continuation.is_empty() {
            return Err(BackendError::InvalidRequest("continuation is empty".into()));
        }
        let full = format!("{prompt}{continuation}");
        let body = CompletionRequest {
            model: &self.cfg.model,
            prompt: &full,
            max_tokens: 1,
            temperature: 0.0,
            stop: &[],
            logprobs: Some(1),
            echo: true,
        };
        let choice = self.post(&body)?;
        if !choice.has_logprobs {
            return Err(BackendError::Unsupported("echo scoring"));
        }
        let logprob = choice.range_logprob(prompt.len(), full.len())?.min(0.0);
        Ok(Scored { logprob, total_tokens: choice.total_tokens.unwrap_or(choice.tokens.len() as u64) })
    }

    fn next_token_probs(&self, q: &TokenQuery) -> BackendResult<TokenProbs> {
        q.validate()?;
        let (alts, total_tokens) = self.next_token_distribution(&q.prompt, self.cfg.top_logprobs)?;
        Ok(TokenProbs { probs: aggregate_candidates(&alts, &q.candidate_tokens), total_tokens })
    }

    fn top_next_tokens(&self, prompt: &str, k: usize) -> BackendResult<TokenProbs> {
        let (mut probs, total_tokens) = self.next_token_distribution(prompt, k)?;
        probs.truncate(k);
        Ok(TokenProbs { probs, total_tokens })
    }
}

/// Request body as sent on the wire; exposed for protocol tests.
pub fn request_json(cfg: &HttpConfig, req: &GenerationRequest, logprobs: Option<usize>, echo: bool) -> Value {
    serde_json::to_value(CompletionRequest {
        model: &cfg.model,
        prompt: &req.prompt,
        max_tokens: req.max_tokens,
        temperature: req.temperature,
        stop: &req.stop,
        logprobs,
        echo,
    })
    .expect("request serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOPK: &str = r#"{"choices":[{"text":" GOOD","logprobs":{"tokens":[" GOOD"],"token_logprobs":[-0.9],
        "top_logprobs":[{" GOOD":-1.2039728043259361,"GOOD":-2.3025850929940455," BAD":-0.6931471805599453}]}}],
        "usage":{"total_tokens":17}}"#;

    #[test]
    fn parses_top_logprobs() {
        let c = parse_completion(TOPK).unwrap();
        assert_eq!(c.text, " GOOD");
        assert_eq!(c.total_tokens, Some(17));
        let alts = c.first_alternatives(0).unwrap();
        assert_eq!(alts[0].0, " BAD");
        let agg = aggregate_candidates(&alts, &["GOOD".into(), "BAD".into(), "UNKNOWN".into()]);
        assert!((agg[0].1 - 0.4).abs() < 1e-12);
        assert!((agg[1].1 - 0.5).abs() < 1e-12);
        assert_eq!(agg[2].1, super::super::EPSILON_FLOOR);
    }

    #[test]
    fn echo_range_sum() {
        let body = r#"{"choices":[{"text":"Action: go forward!","logprobs":{
            "tokens":["Action",":"," go"," forward","!"],
            "token_logprobs":[null,-0.1,-0.5,-0.25,-3.0]}}]}"#;
        let c = parse_completion(body).unwrap();
        // prompt "Action:" (7 bytes), continuation " go forward" (11 bytes)
        let lp = c.range_logprob(7, 18).unwrap();
        assert!((lp + 0.75).abs() < 1e-12);
    }

    #[test]
    fn malformed_responses() {
        assert!(matches!(parse_completion("not json"), Err(BackendError::Protocol(_))));
        assert!(matches!(parse_completion(r#"{"choices":[]}"#), Err(BackendError::Protocol(_))));
        let no_lp = parse_completion(r#"{"choices":[{"text":"x"}]}"#).unwrap();
        assert!(!no_lp.has_logprobs);
        assert!(matches!(no_lp.first_alternatives(0), Err(BackendError::Unsupported(_))));
    }

    #[test]
    fn wire_fields() {
        let cfg = HttpConfig::new("http://localhost:8000/v1/", "m");
        assert_eq!(cfg.endpoint(), "http://localhost:8000/v1/completions");
        let v = request_json(&cfg, &GenerationRequest::line("Action:", 12), Some(20), false);
        assert_eq!(v["model"], "m");
        assert_eq!(v["prompt"], "Action:");
        assert_eq!(v["max_tokens"], 12);
        assert_eq!(v["temperature"], 0.0);
        assert_eq!(v["stop"][0], "\n");
        assert_eq!(v["logprobs"], 20);
        assert_eq!(v["echo"], false);
    }
}
