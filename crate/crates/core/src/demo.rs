//! Scripted single-decision scenes.
//!
//! A [`Scene`] lists candidate actions with their prior probabilities, the
//! future the world model predicts for each, and the raw marker masses the
//! critic reads at the end of that future. [`Scene::backend`] turns it into
//! a [`ScriptedBackend`] that plays all three roles.
//!
//! [`Scene::saltshaker`] is a kitchen where prior and critic disagree: the
//! prior favours checking the drawer, while the critic, having looked one
//! step ahead, prefers taking the saltshaker from the cabinet.

use std::fmt::Write as _;

use crate::backend::{word_tokens, PromptMatch, ScriptedBackend};
use crate::error::{Error, Result};
use crate::harness::{decide_step, EngineConfig, Roles};
use crate::prompt::{ACTION_TAG, CRITIC_TAG, OBSERVATION_TAG};
use crate::types::{Alpha, DecisionRecord, Goal, History, JUDGMENT_PREFIX};

#[derive(Debug, Clone, PartialEq)]
pub struct SceneStep {
    pub action: String,
    pub observation: String,
    pub reflection: String,
}

impl SceneStep {
    pub fn new(action: impl Into<String>, observation: impl Into<String>, reflection: impl Into<String>) -> Self {
        SceneStep { action: action.into(), observation: observation.into(), reflection: reflection.into() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneCandidate {
    pub prior: f64,
    /// Predicted future; the first step's action is the candidate itself.
    pub steps: Vec<SceneStep>,
    /// Raw next-token masses of the success and failure markers.
    pub good: f64,
    pub bad: f64,
}

impl SceneCandidate {
    pub fn action(&self) -> &str {
        &self.steps[0].action
    }
}

/// Observations must be unique across the scene, first words of the
/// candidate actions must differ, and each future must end in a GOOD/BAD
/// reflection or run at least to the rollout depth.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub goal: String,
    pub observation: String,
    pub candidates: Vec<SceneCandidate>,
}

impl Scene {
    pub fn history(&self) -> History {
        History::new(Goal::new(self.goal.clone()).expect("scene goal is non-empty"), self.observation.clone())
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = Vec::new();
        for c in &self.candidates {
            if c.steps.is_empty() {
                return Err(Error::Validation("scene candidate has no steps".into()));
            }
            for s in &c.steps {
                if seen.contains(&&s.observation) {
                    return Err(Error::Validation(format!("observation {:?} appears twice", s.observation)));
                }
                seen.push(&s.observation);
            }
        }
        Ok(())
    }

    pub fn backend(&self) -> ScriptedBackend {
        let mut b = ScriptedBackend::new();
        for c in &self.candidates {
            // deepest step first so the latest observation in the prompt wins
            for j in (0..c.steps.len() - 1).rev() {
                let when = PromptMatch::suffix(ACTION_TAG).and_contains(format!("{OBSERVATION_TAG}{}\n", c.steps[j].observation));
                b = b.on_generate(when, &c.steps[j + 1].action);
            }
            // the judgment may come before the end of the future when the
            // rollout hits its depth limit
            let markers = [("GOOD", c.good), ("BAD", c.bad)];
            for s in c.steps.iter().rev() {
                b = b.on_next_tokens(PromptMatch::suffix(JUDGMENT_PREFIX).and_contains(format!("{OBSERVATION_TAG}{}\n{CRITIC_TAG}", s.observation)), &markers);
            }
            b = b.on_next_tokens(PromptMatch::suffix(JUDGMENT_PREFIX).and_contains(format!("{ACTION_TAG}{}\n{CRITIC_TAG}", c.action())), &markers);
            for s in &c.steps {
                b = b
                    .on_generate(PromptMatch::suffix(format!("{ACTION_TAG}{}\n{OBSERVATION_TAG}", s.action)), &s.observation)
                    .on_generate(PromptMatch::suffix(format!("{OBSERVATION_TAG}{}\n{CRITIC_TAG}", s.observation)), &s.reflection);
            }
            let first = word_tokens(c.action())[0];
            b = b
                .on_generate(PromptMatch::suffix(format!("{ACTION_TAG}{first}")), &c.action()[first.len()..])
                .on_continuation(PromptMatch::suffix(ACTION_TAG), c.action(), c.prior);
        }
        let greedy = self.candidates.iter().fold(&self.candidates[0], |best, c| if c.prior > best.prior { c } else { best });
        let firsts: Vec<(&str, f64)> = self.candidates.iter().map(|c| (word_tokens(c.action())[0], c.prior)).collect();
        b.on_generate(PromptMatch::suffix(ACTION_TAG), greedy.action()).on_top_tokens(PromptMatch::suffix(ACTION_TAG), &firsts)
    }

    /// One decision in the scene.
    pub fn decide(&self, cfg: &EngineConfig) -> Result<DecisionRecord> {
        self.validate()?;
        let b = self.backend();
        Ok(decide_step(&self.history(), cfg, Roles::shared(&b))?.1)
    }

    /// Q is −1, +2 and 0 for the three candidates.
    pub fn saltshaker() -> Scene {
        let one = |action: &str, prior: f64, obs: &str, reflection: &str, p: f64| SceneCandidate {
            prior,
            steps: vec![SceneStep::new(action, obs, reflection)],
            good: p,
            bad: 1.0 - p,
        };
        Scene {
            goal: GOAL.into(),
            observation: OBSERVATION.into(),
            candidates: vec![
                one("go to drawer 1", 0.5, "The drawer 1 is closed.", "The drawer is empty and the saltshaker is not here. This step is BAD.", crate::critic::sigmoid(-1.0)),
                one(
                    "take saltshaker 1 from cabinet 2",
                    0.3,
                    "You pick up the saltshaker 1 from the cabinet 2.",
                    "I have found the saltshaker. This step is GOOD.",
                    crate::critic::sigmoid(2.0),
                ),
                one("open drawer 1", 0.2, "You open the drawer 1. The drawer 1 is open. In it, you see nothing.", "Nothing useful here yet. This step is BAD.", 0.5),
            ],
        }
    }
}

pub const GOAL: &str = "put a saltshaker in drawer 1";
pub const OBSERVATION: &str = "You are in the middle of a room. Looking quickly around you, you see a cabinet 2, a countertop 1, and a drawer 1.";

/// One decision in the saltshaker scene at the given alpha.
pub fn decide(alpha: Alpha) -> Result<DecisionRecord> {
    let cfg = EngineConfig { alpha, parallel_candidates: false, ..EngineConfig::default() };
    Scene::saltshaker().decide(&cfg)
}

/// Per-candidate table: prior probability, Q and improved probability.
pub fn table(rec: &DecisionRecord) -> String {
    let width = rec.candidates.iter().map(|c| c.action.len()).max().unwrap_or(6).max(6);
    let mut s = String::new();
    let _ = writeln!(s, "{:<width$}  {:>6}  {:>7}  {:>8}", "action", "prior", "Q", "improved");
    for (i, c) in rec.candidates.iter().enumerate() {
        let mark = if i == rec.improved.chosen_index { "  <- chosen" } else { "" };
        let _ = writeln!(s, "{:<width$}  {:>6.3}  {:>+7.3}  {:>8.3}{mark}", c.action, c.prior_logprob.exp(), c.q_value, rec.improved.candidate_probs[i]);
    }
    s
}
