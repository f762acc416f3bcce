//! Value estimation from marker-token probabilities.
//!
//! The success belief links to the value through the logistic function
//! `P(success) = sigmoid(Q)`, so `Q = ln P(success) - ln P(failure)` once the
//! pair sums to one. Only the ratio of the two marker masses matters.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::backend::{normalize_token, BackendError, GenerationRequest, LlmBackend, TokenQuery, EPSILON_FLOOR};
use crate::error::{Error, Result};
use crate::prompt::Prompter;
use crate::types::{History, OutcomeBelief, RolloutTrajectory};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkerPair {
    pub positive: String,
    pub negative: String,
}

impl Default for MarkerPair {
    fn default() -> Self {
        MarkerPair { positive: "GOOD".into(), negative: "BAD".into() }
    }
}

impl MarkerPair {
    pub fn new(positive: impl Into<String>, negative: impl Into<String>) -> Result<Self> {
        let m = MarkerPair { positive: positive.into(), negative: negative.into() };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let (p, n) = (normalize_token(&self.positive), normalize_token(&self.negative));
        if p.is_empty() || n.is_empty() || p == n {
            return Err(Error::Config(format!("invalid marker pair {:?}/{:?}", self.positive, self.negative)));
        }
        Ok(())
    }

    pub fn swapped(&self) -> Self {
        MarkerPair { positive: self.negative.clone(), negative: self.positive.clone() }
    }
}

pub fn sigmoid(q: f64) -> f64 {
    if q >= 0.0 {
        1.0 / (1.0 + (-q).exp())
    } else {
        let e = q.exp();
        e / (1.0 + e)
    }
}

/// `ln(p / (1 - p))`, computed without cancellation near 0 and 1.
pub fn logit(p: f64) -> f64 {
    p.ln() - (-p).ln_1p()
}

/// Reads both marker probabilities at the judgment position.
pub fn outcome_belief(context_prompt: &str, markers: &MarkerPair, backend: &dyn LlmBackend) -> Result<OutcomeBelief> {
    let q = TokenQuery { prompt: context_prompt.to_string(), candidate_tokens: vec![markers.positive.clone(), markers.negative.clone()] };
    let probs = backend.next_token_probs(&q).map_err(|e| match e {
        BackendError::Unsupported(what) => Error::CriticUnavailable(what.to_string()),
        other => Error::Backend(other),
    })?;
    let lookup = |name: &str| probs.probs.iter().find(|(t, _)| t == name).map_or(EPSILON_FLOOR, |(_, p)| *p);
    Ok(belief_from_raw(lookup(&markers.positive), lookup(&markers.negative)))
}

/// Floors and pair-normalizes raw marker masses.
pub fn belief_from_raw(raw_success: f64, raw_failure: f64) -> OutcomeBelief {
    let clamp = |p: f64| if p.is_finite() { p.max(EPSILON_FLOOR) } else { EPSILON_FLOOR };
    OutcomeBelief::from_raw(clamp(raw_success), clamp(raw_failure))
}

/// Belief implied by a value through the logistic link. Both sides are
/// computed directly so the pair stays accurate for large |q|.
pub fn belief_from_q(q: f64) -> OutcomeBelief {
    OutcomeBelief::from_raw(sigmoid(q), sigmoid(-q))
}

/// Log-ratio value of a belief.
pub fn q_value(belief: &OutcomeBelief) -> f64 {
    belief.p_success.ln() - belief.p_failure.ln()
}

/// Variant value `ln P(success)` over the raw (unnormalized) success mass.
pub fn q_variant_logpw(belief: &OutcomeBelief) -> f64 {
    belief.raw_success.ln()
}

/// Value of `action` given its predicted rollout, read at the final
/// judgment position of the (goal, history, action, rollout) context.
pub fn q_with_rollout(
    history: &History,
    action: &str,
    rollout: &RolloutTrajectory,
    markers: &MarkerPair,
    prompter: &Prompter<'_>,
    backend: &dyn LlmBackend,
) -> Result<(OutcomeBelief, f64)> {
    let prompt = prompter.judgment(history, action, &rollout.steps)?;
    let belief = outcome_belief(&prompt, markers, backend)?;
    Ok((belief, q_value(&belief)))
}

fn number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"([0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)\s*(%?)").expect("valid regex"))
}

/// Parses the first probability-like number in `text`; percentages are
/// scaled to [0, 1].
pub fn parse_probability(text: &str) -> Option<f64> {
    let caps = number_re().captures(text)?;
    let v: f64 = caps[1].parse().ok()?;
    let v = if &caps[2] == "%" { v / 100.0 } else { v };
    v.is_finite().then_some(v)
}

/// Direct-evaluation variant: the model writes a success probability as text.
/// Unparseable output falls back to `p = 0.5`. Returns the belief and value.
pub fn q_direct_eval(context_prompt: &str, backend: &dyn LlmBackend) -> Result<(OutcomeBelief, f64)> {
    let out = backend.generate(&GenerationRequest::line(context_prompt, 16))?;
    let p = match parse_probability(&out.text) {
        Some(p) => p.clamp(EPSILON_FLOOR, 1.0 - EPSILON_FLOOR),
        None => {
            log::warn!("direct evaluation output {:?} is not a probability; using 0.5", out.text);
            0.5
        }
    };
    let belief = OutcomeBelief::from_success(p);
    Ok((belief, logit(p)))
}
