//! Prior policy: proposes candidate actions and scores them.
//!
//! At temperature 0 the greedy completion is the first candidate; the rest
//! come from branching at the divergence points of the greedy path (the
//! most likely alternative tokens at each position, each completed
//! greedily). Candidates are deduplicated after whitespace normalization and
//! returned in descending order of their raw summed log-probability.

use serde::{Deserialize, Serialize};

use crate::backend::{word_tokens, GenerationRequest, LlmBackend, TOP_LOGPROBS};
use crate::error::{Error, Result};
use crate::prompt::Prompter;
use crate::types::{normalize_text, History};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorConfig {
    pub num_candidates: usize,
    pub max_action_tokens: usize,
    pub max_resample_attempts: usize,
}

impl Default for ActorConfig {
    fn default() -> Self {
        ActorConfig { num_candidates: 5, max_action_tokens: 24, max_resample_attempts: 20 }
    }
}

impl ActorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_candidates == 0 || self.max_action_tokens == 0 || self.max_resample_attempts == 0 {
            return Err(Error::Config("actor limits must all be >= 1".into()));
        }
        Ok(())
    }
}

/// Log-probability of `action` given the action prompt for `history`.
pub fn action_logprob(history: &History, action: &str, prompter: &Prompter<'_>, backend: &dyn LlmBackend) -> Result<f64> {
    if action.trim().is_empty() {
        return Err(Error::Validation("action is empty".into()));
    }
    let prompt = prompter.action(history)?;
    Ok(backend.score_continuation(&prompt, action)?.logprob.min(0.0))
}

pub fn sample_candidates(history: &History, cfg: &ActorConfig, prompter: &Prompter<'_>, backend: &dyn LlmBackend) -> Result<Vec<(String, f64)>> {
    cfg.validate()?;
    let prompt = prompter.action(history)?;
    let greedy = backend.generate(&GenerationRequest::line(prompt.clone(), cfg.max_action_tokens))?;

    let mut actions: Vec<String> = Vec::new();
    let push = |raw: &str, actions: &mut Vec<String>| {
        let a = normalize_text(raw);
        if !a.is_empty() && !actions.contains(&a) {
            actions.push(a);
        }
    };
    push(&greedy.text, &mut actions);

    let greedy_tokens: Vec<String> = if greedy.tokens.is_empty() {
        word_tokens(&greedy.text).into_iter().map(str::to_string).collect()
    } else {
        greedy.tokens.clone()
    };

    let mut attempts = 0;
    // divergence points along the greedy path, earliest first
    'outer: for depth in 0..greedy_tokens.len().max(1) {
        if actions.len() >= cfg.num_candidates {
            break;
        }
        let prefix: String = greedy_tokens[..depth.min(greedy_tokens.len())].concat();
        let branch_prompt = format!("{prompt}{prefix}");
        let alternatives = backend.top_next_tokens(&branch_prompt, TOP_LOGPROBS)?;
        for (token, _) in alternatives.probs {
            if actions.len() >= cfg.num_candidates || attempts >= cfg.max_resample_attempts {
                break 'outer;
            }
            if greedy_tokens.get(depth).is_some_and(|g| g == &token) || token.contains('\n') {
                continue;
            }
            attempts += 1;
            let stem = format!("{prefix}{token}");
            let completion = backend.generate(&GenerationRequest::line(format!("{prompt}{stem}"), cfg.max_action_tokens))?;
            push(&format!("{stem}{}", completion.text), &mut actions);
        }
    }

    if actions.is_empty() {
        return Err(Error::ActorExhausted);
    }
    let mut scored = Vec::with_capacity(actions.len());
    for a in actions {
        let lp = backend.score_continuation(&prompt, &a)?.logprob.min(0.0);
        scored.push((a, lp));
    }
    // stable sort keeps discovery order on ties
    scored.sort_by(|a, b| b.1.total_cmp(&a.1));
    Ok(scored)
}
