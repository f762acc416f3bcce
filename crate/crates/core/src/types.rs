//! Shared vocabulary: goals, histories, reflections, candidate evaluations
//! and the per-step / per-episode records written to trace files.
//!
//! Every type here is a plain immutable value (`Clone + Send + Sync`) and
//! round-trips through the JSONL trace format via serde.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Literal prefix that introduces the judgment marker in a reflection.
pub const JUDGMENT_PREFIX: &str = "This step is ";

/// Trims and collapses internal whitespace runs to a single space.
pub fn normalize_text(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Natural-language task goal. Never empty after trimming.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Goal(String);

impl Goal {
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::Validation("goal text is empty".into()));
        }
        Ok(Goal(text))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Goal {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        Goal::new(s)
    }
}

impl From<Goal> for String {
    fn from(g: Goal) -> String {
        g.0
    }
}

impl fmt::Display for Goal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Judgment {
    Good,
    Bad,
    Unknown,
}

impl Judgment {
    pub fn is_terminal(self) -> bool {
        !matches!(self, Judgment::Unknown)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Judgment::Good => "GOOD",
            Judgment::Bad => "BAD",
            Judgment::Unknown => "UNKNOWN",
        }
    }

    /// Reads the judgment from the final sentence of a reflection using the
    /// default GOOD/BAD markers.
    pub fn from_reflection(text: &str) -> Judgment {
        Self::from_reflection_with(text, "GOOD", "BAD")
    }

    /// Reads the judgment from the final sentence of `text`. The text must end
    /// with `This step is <MARKER>` (optionally followed by a period);
    /// anything else maps to `Unknown`.
    pub fn from_reflection_with(text: &str, positive: &str, negative: &str) -> Judgment {
        let text = text.trim_end();
        let Some(idx) = text.rfind(JUDGMENT_PREFIX) else {
            return Judgment::Unknown;
        };
        let tail = &text[idx + JUDGMENT_PREFIX.len()..];
        let word = tail.strip_suffix('.').unwrap_or(tail);
        if word == positive {
            Judgment::Good
        } else if word == negative {
            Judgment::Bad
        } else {
            Judgment::Unknown
        }
    }
}

/// Short natural-language judgment of the preceding action. The
/// `judgment` field is derived from `text` and kept in sync by construction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reflection {
    pub text: String,
    pub judgment: Judgment,
}

impl Reflection {
    pub fn new(text: impl Into<String>) -> Self {
        let text = text.into();
        let judgment = Judgment::from_reflection(&text);
        Reflection { text, judgment }
    }

    pub fn with_markers(text: impl Into<String>, positive: &str, negative: &str) -> Self {
        let text = text.into();
        let judgment = Judgment::from_reflection_with(&text, positive, negative);
        Reflection { text, judgment }
    }

    /// Text before the final judgment prefix, i.e. the explanation part.
    pub fn explanation(&self) -> &str {
        match self.text.rfind(JUDGMENT_PREFIX) {
            Some(idx) => &self.text[..idx],
            None => &self.text,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub action: String,
    pub observation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reflection: Option<Reflection>,
}

impl Step {
    pub fn new(action: impl Into<String>, observation: impl Into<String>) -> Result<Self> {
        let action = action.into();
        let observation = observation.into();
        if action.trim().is_empty() {
            return Err(Error::Validation("step action is empty".into()));
        }
        if observation.trim().is_empty() {
            return Err(Error::Validation("step observation is empty".into()));
        }
        Ok(Step { action, observation, reflection: None })
    }

    pub fn with_reflection(mut self, reflection: Reflection) -> Self {
        self.reflection = Some(reflection);
        self
    }
}

/// Decision context: goal, initial observation and the append-only list of
/// executed steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub goal: Goal,
    pub initial_observation: String,
    pub steps: Vec<Step>,
}

impl History {
    pub fn new(goal: Goal, initial_observation: impl Into<String>) -> Self {
        History { goal, initial_observation: initial_observation.into(), steps: Vec::new() }
    }

    pub fn push(&mut self, step: Step) {
        self.steps.push(step);
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Copy of this history extended by `extra` steps.
    pub fn extended(&self, extra: &[Step]) -> History {
        let mut h = self.clone();
        h.steps.extend_from_slice(extra);
        h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Termination {
    Good,
    Bad,
    DepthLimit,
}

/// Predicted future steps for one candidate action. The first step is the
/// candidate itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutTrajectory {
    pub steps: Vec<Step>,
    pub terminated_by: Termination,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl RolloutTrajectory {
    pub fn empty() -> Self {
        RolloutTrajectory { steps: Vec::new(), terminated_by: Termination::DepthLimit, warning: None }
    }
}

/// Success/failure belief read from marker-token probabilities.
///
/// `p_success + p_failure == 1`; `raw_*` keep the floored masses as read
/// from the model before pair normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeBelief {
    pub p_success: f64,
    pub p_failure: f64,
    pub raw_success: f64,
    pub raw_failure: f64,
}

impl OutcomeBelief {
    /// Builds a belief from raw (unnormalized) marker masses, each already
    /// clamped to the probability floor by the caller.
    pub fn from_raw(raw_success: f64, raw_failure: f64) -> Self {
        let z = raw_success + raw_failure;
        OutcomeBelief {
            p_success: raw_success / z,
            p_failure: raw_failure / z,
            raw_success,
            raw_failure,
        }
    }

    /// Belief with `p_success = p`, raw masses equal to the normalized pair.
    pub fn from_success(p: f64) -> Self {
        Self::from_raw(p, 1.0 - p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateEvaluation {
    pub action: String,
    pub prior_logprob: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rollout: Option<RolloutTrajectory>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub belief: Option<OutcomeBelief>,
    pub q_value: f64,
}

/// KL-regularization strength. `CriticOnly` is the α → ∞ limit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Alpha {
    Finite(f64),
    CriticOnly,
}

impl Alpha {
    pub fn validate(self) -> Result<Self> {
        match self {
            Alpha::Finite(a) if !a.is_finite() || a < 0.0 => {
                Err(Error::Validation(format!("alpha must be finite and >= 0, got {a}")))
            }
            other => Ok(other),
        }
    }
}

impl fmt::Display for Alpha {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Alpha::Finite(a) => write!(f, "{a}"),
            Alpha::CriticOnly => f.write_str("critic_only"),
        }
    }
}

impl Serialize for Alpha {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Alpha::Finite(a) => s.serialize_f64(*a),
            Alpha::CriticOnly => s.serialize_str("critic_only"),
        }
    }
}

impl<'de> Deserialize<'de> for Alpha {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(a) => Ok(Alpha::Finite(a)),
            Raw::Str(s) if s == "critic_only" => Ok(Alpha::CriticOnly),
            Raw::Str(s) => s
                .parse::<f64>()
                .map(Alpha::Finite)
                .map_err(|_| serde::de::Error::custom(format!("invalid alpha {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovedDistribution {
    pub candidate_probs: Vec<f64>,
    pub log_partition: f64,
    pub alpha: Alpha,
    pub chosen_index: usize,
}

/// Decision-loop variant. `Full` is the complete actor-critic step; the
/// others remove or replace one component.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Full,
    NoCritic,
    CriticOnly,
    NoRollout,
    NoReflection,
    QVariant,
    DirectEval,
}

impl Mode {
    pub const ALL: [Mode; 7] = [
        Mode::Full,
        Mode::NoCritic,
        Mode::CriticOnly,
        Mode::NoRollout,
        Mode::NoReflection,
        Mode::QVariant,
        Mode::DirectEval,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::NoCritic => "no-critic",
            Mode::CriticOnly => "critic-only",
            Mode::NoRollout => "no-rollout",
            Mode::NoReflection => "no-reflection",
            Mode::QVariant => "q-variant",
            Mode::DirectEval => "direct-eval",
        }
    }

    pub fn uses_reflections(self) -> bool {
        self != Mode::NoReflection
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == key)
            .ok_or_else(|| Error::Config(format!("unknown mode {s:?}")))
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub step_index: usize,
    pub candidates: Vec<CandidateEvaluation>,
    pub improved: ImprovedDistribution,
    pub mode: Mode,
}

impl DecisionRecord {
    pub fn chosen(&self) -> &CandidateEvaluation {
        &self.candidates[self.improved.chosen_index]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    #[serde(default)]
    pub label: String,
    #[serde(default)]
    pub task: String,
    #[serde(default)]
    pub seed: u64,
    pub history: History,
    pub reward: f64,
    pub success: bool,
    pub steps_used: usize,
    pub tokens_used: u64,
    pub records: Vec<DecisionRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

/// One line of a JSONL trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TraceLine {
    Decision(DecisionRecord),
    Episode(EpisodeResult),
}

impl TraceLine {
    pub fn to_json_line(&self) -> Result<String> {
        let mut s = serde_json::to_string(self)?;
        s.push('\n');
        Ok(s)
    }
}
