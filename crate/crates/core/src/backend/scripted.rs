use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    aggregate_candidates, apply_stop, count_tokens, normalize_token, word_tokens, BackendError, BackendResult, GenerationRequest,
    GenerationResult, LlmBackend, Scored, TokenProbs, TokenQuery,
};

/// Prompt predicate: every set field must hold.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PromptMatch {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suffix: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<String>,
}

impl PromptMatch {
    pub fn any() -> Self {
        PromptMatch::default()
    }

    pub fn suffix(s: impl Into<String>) -> Self {
        PromptMatch { suffix: Some(s.into()), contains: None }
    }

    pub fn contains(s: impl Into<String>) -> Self {
        PromptMatch { suffix: None, contains: Some(s.into()) }
    }

    pub fn and_contains(mut self, s: impl Into<String>) -> Self {
        self.contains = Some(s.into());
        self
    }

    pub fn matches(&self, prompt: &str) -> bool {
        self.suffix.as_deref().is_none_or(|s| prompt.ends_with(s)) && self.contains.as_deref().is_none_or(|c| prompt.contains(c))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRule {
    #[serde(flatten)]
    pub when: PromptMatch,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenRule {
    #[serde(flatten)]
    pub when: PromptMatch,
    pub probs: Vec<(String, f64)>,
}

/// Whole-continuation probability, checked before per-token scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuationRule {
    #[serde(flatten)]
    pub when: PromptMatch,
    pub text: String,
    pub prob: f64,
}

fn one() -> f64 {
    1.0
}

/// Rule tables for [`ScriptedBackend`]. Within each table the first matching
/// rule wins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptRules {
    #[serde(default)]
    pub generate: Vec<GenerateRule>,
    #[serde(default)]
    pub next_tokens: Vec<TokenRule>,
    #[serde(default)]
    pub top_tokens: Vec<TokenRule>,
    #[serde(default)]
    pub continuations: Vec<ContinuationRule>,
    /// Context-free per-token probabilities, keyed by trimmed token text.
    #[serde(default)]
    pub token_probs: BTreeMap<String, f64>,
    #[serde(default = "one")]
    pub default_token_prob: f64,
    /// Text generated when no rule matches.
    #[serde(default)]
    pub default_text: String,
}

impl Default for ScriptRules {
    fn default() -> Self {
        ScriptRules {
            generate: Vec::new(),
            next_tokens: Vec::new(),
            top_tokens: Vec::new(),
            continuations: Vec::new(),
            token_probs: BTreeMap::new(),
            default_token_prob: 1.0,
            default_text: String::new(),
        }
    }
}

/// Deterministic backend driven by prompt-matching rules; a pure function of
/// its rules and the request.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScriptedBackend {
    pub rules: ScriptRules,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_rules(rules: ScriptRules) -> Self {
        ScriptedBackend { rules }
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }

    pub fn on_generate(mut self, when: PromptMatch, text: impl Into<String>) -> Self {
        self.rules.generate.push(GenerateRule { when, text: text.into() });
        self
    }

    pub fn on_next_tokens(mut self, when: PromptMatch, probs: &[(&str, f64)]) -> Self {
        self.rules.next_tokens.push(TokenRule { when, probs: own(probs) });
        self
    }

    pub fn on_top_tokens(mut self, when: PromptMatch, probs: &[(&str, f64)]) -> Self {
        self.rules.top_tokens.push(TokenRule { when, probs: own(probs) });
        self
    }

    pub fn on_continuation(mut self, when: PromptMatch, text: impl Into<String>, prob: f64) -> Self {
        self.rules.continuations.push(ContinuationRule { when, text: text.into(), prob });
        self
    }

    pub fn token_prob(mut self, token: impl Into<String>, prob: f64) -> Self {
        self.rules.token_probs.insert(token.into(), prob);
        self
    }

    pub fn default_token_prob(mut self, prob: f64) -> Self {
        self.rules.default_token_prob = prob;
        self
    }

    pub fn default_text(mut self, text: impl Into<String>) -> Self {
        self.rules.default_text = text.into();
        self
    }

    fn token_logprob(&self, token: &str) -> f64 {
        self.rules.token_probs.get(token.trim()).copied().unwrap_or(self.rules.default_token_prob).ln()
    }

    fn raw_text(&self, prompt: &str) -> &str {
        self.rules.generate.iter().find(|r| r.when.matches(prompt)).map_or(self.rules.default_text.as_str(), |r| r.text.as_str())
    }
}

fn own(probs: &[(&str, f64)]) -> Vec<(String, f64)> {
    probs.iter().map(|(t, p)| (t.to_string(), *p)).collect()
}

impl LlmBackend for ScriptedBackend {
    fn generate(&self, req: &GenerationRequest) -> BackendResult<GenerationResult> {
        req.validate()?;
        let text = apply_stop(self.raw_text(&req.prompt), &req.stop);
        let tokens: Vec<String> = word_tokens(&text).into_iter().take(req.max_tokens).map(str::to_string).collect();
        let text = tokens.concat();
        let token_logprobs = tokens.iter().map(|t| self.token_logprob(t)).collect();
        let total_tokens = count_tokens(&req.prompt) + tokens.len() as u64;
        Ok(GenerationResult { text, tokens, token_logprobs, total_tokens })
    }

    fn score_continuation(&self, prompt: &str, continuation: &str) -> BackendResult<Scored> {
        if continuation.is_empty() {
            return Err(BackendError::InvalidRequest("continuation is empty".into()));
        }
        let total_tokens = count_tokens(prompt) + count_tokens(continuation);
        if let Some(rule) = self.rules.continuations.iter().find(|r| r.text == continuation && r.when.matches(prompt)) {
            return Ok(Scored { logprob: rule.prob.ln(), total_tokens });
        }
        let logprob = word_tokens(continuation).into_iter().map(|t| self.token_logprob(t)).sum();
        Ok(Scored { logprob, total_tokens })
    }

    fn next_token_probs(&self, q: &TokenQuery) -> BackendResult<TokenProbs> {
        q.validate()?;
        let rule = self.rules.next_tokens.iter().find(|r| r.when.matches(&q.prompt)).ok_or(BackendError::Unsupported("next-token probabilities for this prompt"))?;
        Ok(TokenProbs { probs: aggregate_candidates(&rule.probs, &q.candidate_tokens), total_tokens: count_tokens(&q.prompt) + 1 })
    }

    fn top_next_tokens(&self, prompt: &str, k: usize) -> BackendResult<TokenProbs> {
        let total_tokens = count_tokens(prompt) + 1;
        let mut probs = match self.rules.top_tokens.iter().find(|r| r.when.matches(prompt)) {
            Some(rule) => rule.probs.clone(),
            None => {
                let greedy = apply_stop(self.raw_text(prompt), &["\n".to_string()]);
                match word_tokens(&greedy).first() {
                    Some(t) => vec![(t.to_string(), self.token_logprob(t).exp())],
                    None => Vec::new(),
                }
            }
        };
        // stable: equal probabilities keep rule order
        probs.sort_by(|a, b| b.1.total_cmp(&a.1));
        let mut seen = Vec::new();
        probs.retain(|(t, _)| {
            let n = normalize_token(t);
            let fresh = !seen.contains(&n);
            seen.push(n);
            fresh
        });
        probs.truncate(k);
        Ok(TokenProbs { probs, total_tokens })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn table_lookup_generation() {
        let b = ScriptedBackend::new().on_generate(PromptMatch::suffix("Action:"), "turn left");
        let req = GenerationRequest::line("Observation:x\nAction:", 8);
        let r1 = b.generate(&req).unwrap();
        assert_eq!(r1.text, "turn left");
        assert_eq!(r1, b.generate(&req).unwrap());
    }

    #[test]
    fn stop_strings_honored() {
        let b = ScriptedBackend::new().default_text("go forward\nObservation: more");
        let r = b.generate(&GenerationRequest::line("p", 16)).unwrap();
        assert_eq!(r.text, "go forward");
        assert!(!r.text.contains('\n'));
    }

    #[test]
    fn score_two_half_tokens() {
        let b = ScriptedBackend::new().default_token_prob(0.5);
        let s = b.score_continuation("Action:", "go forward").unwrap();
        assert!((s.logprob - (-1.386294361119891)).abs() < 1e-12);
        assert!((s.logprob - 0.25f64.ln()).abs() < 1e-15);
        let certain = ScriptedBackend::new();
        assert_eq!(certain.score_continuation("Action:", "go forward").unwrap().logprob, 0.0);
        assert!(certain.score_continuation("Action:", "").is_err());
    }

    #[test]
    fn next_token_lookup() {
        let b = ScriptedBackend::new().on_next_tokens(PromptMatch::suffix("This step is "), &[("GOOD", 0.6), ("BAD", 0.2)]);
        let got = b.next_token_probs(&TokenQuery::new("x. This step is ", &["GOOD", "BAD"])).unwrap();
        assert_eq!(got.probs, vec![("GOOD".to_string(), 0.6), ("BAD".to_string(), 0.2)]);
        assert!(matches!(b.next_token_probs(&TokenQuery::new("nope", &["GOOD"])), Err(BackendError::Unsupported(_))));
    }

    #[test]
    fn rules_from_json() {
        let b = ScriptedBackend::from_json(r#"{"generate":[{"suffix":"Action:","text":"pick up"}],"token_probs":{"pick":0.5}}"#).unwrap();
        assert_eq!(b.generate(&GenerationRequest::line("Action:", 4)).unwrap().text, "pick up");
        assert!((b.score_continuation("Action:", "pick up").unwrap().logprob - 0.5f64.ln()).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn chain_rule(a in prop::collection::vec("[a-d]{1,3}", 1..4), b in prop::collection::vec("[a-d]{1,3}", 1..4)) {
            let backend = ScriptedBackend::new().token_prob("a", 0.5).token_prob("b", 0.25).token_prob("ab", 0.125).default_token_prob(0.75);
            let a = a.join(" ");
            let b = format!(" {}", b.join(" "));
            let whole = backend.score_continuation("P:", &format!("{a}{b}")).unwrap().logprob;
            let split = backend.score_continuation("P:", &a).unwrap().logprob + backend.score_continuation(&format!("P:{a}"), &b).unwrap().logprob;
            prop_assert!((whole - split).abs() < 1e-12);
            prop_assert!(whole <= 0.0);
        }
    }
}
