//! Forward model: predicts the trajectory that follows a candidate action.
//!
//! Each predicted step is (observation, reflection, next action), generated
//! with the same prompt grammar as the live history. A rollout stops at the
//! first GOOD/BAD reflection or after `max_depth` steps. It only queries the
//! backend and never touches the real environment.

use serde::{Deserialize, Serialize};

use crate::backend::{GenerationRequest, LlmBackend};
use crate::critic::MarkerPair;
use crate::error::{Error, Result};
use crate::prompt::Prompter;
use crate::types::{normalize_text, History, Judgment, Reflection, RolloutTrajectory, Step, Termination};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutConfig {
    pub max_depth: usize,
    pub include_reflections: bool,
    #[serde(default = "default_line_tokens")]
    pub max_line_tokens: usize,
}

fn default_line_tokens() -> usize {
    128
}

impl Default for RolloutConfig {
    fn default() -> Self {
        RolloutConfig { max_depth: 4, include_reflections: true, max_line_tokens: default_line_tokens() }
    }
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth == 0 {
            return Err(Error::Config("rollout max_depth must be >= 1".into()));
        }
        Ok(())
    }
}

/// Generates a reflection for the last step of `history`.
pub fn reflect(history: &History, markers: &MarkerPair, prompter: &Prompter<'_>, backend: &dyn LlmBackend, max_tokens: usize) -> Result<Reflection> {
    let prompt = prompter.reflection(history)?;
    let out = backend.generate(&GenerationRequest::line(prompt, max_tokens))?;
    Ok(Reflection::with_markers(out.text.trim(), &markers.positive, &markers.negative))
}

pub fn rollout(
    history: &History,
    action: &str,
    cfg: &RolloutConfig,
    markers: &MarkerPair,
    prompter: &Prompter<'_>,
    backend: &dyn LlmBackend,
) -> Result<RolloutTrajectory> {
    cfg.validate()?;
    let reflections = cfg.include_reflections && prompter.reflections;
    let mut sim = history.clone();
    let mut steps: Vec<Step> = Vec::new();
    let mut next_action = normalize_text(action);
    if next_action.is_empty() {
        return Err(Error::Validation("rollout action is empty".into()));
    }

    let partial = |steps: Vec<Step>, e: &dyn std::fmt::Display| {
        log::warn!("rollout stopped early: {e}");
        Ok(RolloutTrajectory { steps, terminated_by: Termination::DepthLimit, warning: Some(e.to_string()) })
    };

    for depth in 0..cfg.max_depth {
        let obs = match prompter
            .observation(&sim, &next_action)
            .and_then(|p| Ok(backend.generate(&GenerationRequest::line(p, cfg.max_line_tokens))?))
        {
            Ok(out) => out.text.trim().to_string(),
            Err(e) => return partial(steps, &e),
        };
        let mut step = match Step::new(next_action.clone(), obs) {
            Ok(s) => s,
            Err(e) => return partial(steps, &e),
        };
        if reflections {
            sim.push(step.clone());
            let reflection = reflect(&sim, markers, prompter, backend, cfg.max_line_tokens);
            sim.steps.pop();
            match reflection {
                Ok(r) => step.reflection = Some(r),
                Err(e) => return partial(steps, &e),
            }
        }
        let judgment = step.reflection.as_ref().map_or(Judgment::Unknown, |r| r.judgment);
        sim.push(step.clone());
        steps.push(step);
        match judgment {
            Judgment::Good => return Ok(RolloutTrajectory { steps, terminated_by: Termination::Good, warning: None }),
            Judgment::Bad => return Ok(RolloutTrajectory { steps, terminated_by: Termination::Bad, warning: None }),
            Judgment::Unknown => {}
        }
        if depth + 1 == cfg.max_depth {
            break;
        }
        next_action = match prompter
            .action(&sim)
            .and_then(|p| Ok(backend.generate(&GenerationRequest::line(p, cfg.max_line_tokens))?))
        {
            Ok(out) => normalize_text(&out.text),
            Err(e) => return partial(steps, &e),
        };
        if next_action.is_empty() {
            return partial(steps, &"world model produced an empty action");
        }
    }
    Ok(RolloutTrajectory { steps, terminated_by: Termination::DepthLimit, warning: None })
}
