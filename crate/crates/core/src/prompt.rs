//! Prompt assembly for the actor, world model and critic.
//!
//! Layout (few-shot examples first, then the live task):
//!
//! ```text
//! <examples>
//! Goal of the agent: <goal>
//! Observation:<o_0>
//! Action:<a_1>
//! Observation:<o_1>
//! Critic:<c_1>
//! ...
//! ```
//!
//! Each query appends an open line (`Action:`, `Observation:`, `Critic:` or a
//! judgment line ending in `This step is `) that the model completes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{History, Reflection, Step, JUDGMENT_PREFIX};

pub const GOAL_LINE: &str = "Goal of the agent: ";
pub const OBSERVATION_TAG: &str = "Observation:";
pub const ACTION_TAG: &str = "Action:";
pub const CRITIC_TAG: &str = "Critic:";
/// Open-line tail for the direct-evaluation critic variant.
pub const DIRECT_EVAL_PREFIX: &str = "The probability of success is ";

const GOAL_SLOT: &str = "{goal}";
const TRAJECTORY_SLOT: &str = "{trajectory}";
const EXAMPLES_SLOT: &str = "{examples}";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    /// Must contain `{goal}` and `{trajectory}`; `{examples}` is required
    /// whenever `examples` is non-empty.
    pub layout: String,
    #[serde(default)]
    pub examples: Vec<String>,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate { layout: format!("{EXAMPLES_SLOT}{GOAL_LINE}{GOAL_SLOT}\n{TRAJECTORY_SLOT}"), examples: Vec::new() }
    }
}

impl PromptTemplate {
    pub fn with_examples(examples: Vec<String>) -> Self {
        PromptTemplate { examples, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        for slot in [GOAL_SLOT, TRAJECTORY_SLOT] {
            if !self.layout.contains(slot) {
                return Err(Error::Config(format!("prompt template is missing the {slot} placeholder")));
            }
        }
        if !self.examples.is_empty() && !self.layout.contains(EXAMPLES_SLOT) {
            return Err(Error::Config(format!("prompt template has examples but no {EXAMPLES_SLOT} placeholder")));
        }
        Ok(())
    }

    fn examples_block(&self) -> String {
        let mut out = String::new();
        for ex in &self.examples {
            out.push_str(ex.trim_end_matches('\n'));
            out.push_str("\n\n");
        }
        out
    }
}

/// Renders goal, initial observation and steps in (action, observation,
/// reflection) order. The result ends with a newline.
pub fn history_to_prompt(history: &History, template: &PromptTemplate) -> Result<String> {
    render(history, template, true)
}

pub(crate) fn render(history: &History, template: &PromptTemplate, reflections: bool) -> Result<String> {
    template.validate()?;
    let mut traj = String::new();
    push_line(&mut traj, OBSERVATION_TAG, &history.initial_observation);
    for step in &history.steps {
        push_step(&mut traj, step, reflections);
    }
    Ok(template
        .layout
        .replace(EXAMPLES_SLOT, &template.examples_block())
        .replace(GOAL_SLOT, history.goal.as_str())
        .replace(TRAJECTORY_SLOT, &traj))
}

fn push_line(out: &mut String, tag: &str, body: &str) {
    out.push_str(tag);
    out.push_str(&single_line(body));
    out.push('\n');
}

fn push_step(out: &mut String, step: &Step, reflections: bool) {
    push_line(out, ACTION_TAG, &step.action);
    push_line(out, OBSERVATION_TAG, &step.observation);
    if reflections {
        if let Some(r) = &step.reflection {
            push_line(out, CRITIC_TAG, &r.text);
        }
    }
}

fn single_line(s: &str) -> String {
    if s.contains('\n') {
        s.replace(['\r', '\n'], " ")
    } else {
        s.to_string()
    }
}

/// Builds the open-line prompts used by the decision loop. `reflections`
/// controls whether reflection lines are rendered at all.
#[derive(Debug, Clone)]
pub struct Prompter<'a> {
    pub template: &'a PromptTemplate,
    pub reflections: bool,
}

impl<'a> Prompter<'a> {
    pub fn new(template: &'a PromptTemplate, reflections: bool) -> Self {
        Prompter { template, reflections }
    }

    pub fn context(&self, history: &History) -> Result<String> {
        render(history, self.template, self.reflections)
    }

    /// Prompt whose completion is the next action.
    pub fn action(&self, history: &History) -> Result<String> {
        Ok(self.context(history)? + ACTION_TAG)
    }

    /// Prompt whose completion is the observation produced by `action`.
    pub fn observation(&self, history: &History, action: &str) -> Result<String> {
        let mut p = self.context(history)?;
        push_line(&mut p, ACTION_TAG, action);
        p.push_str(OBSERVATION_TAG);
        Ok(p)
    }

    /// Prompt whose completion is a reflection on the last step of `history`.
    pub fn reflection(&self, history: &History) -> Result<String> {
        Ok(self.context(history)? + CRITIC_TAG)
    }

    /// Judgment context over (goal, history, action, rollout): the rollout's
    /// last reflection is cut right before its marker; when it carries no
    /// reflection a fresh judgment line is opened. `tail` is the text the
    /// open line ends with.
    pub fn judgment_with_tail(&self, history: &History, action: &str, rollout: &[Step], tail: &str) -> Result<String> {
        let mut p = self.context(history)?;
        let Some((last, init)) = rollout.split_last() else {
            push_line(&mut p, ACTION_TAG, action);
            p.push_str(CRITIC_TAG);
            p.push_str(tail);
            return Ok(p);
        };
        for step in init {
            push_step(&mut p, step, self.reflections);
        }
        push_line(&mut p, ACTION_TAG, &last.action);
        push_line(&mut p, OBSERVATION_TAG, &last.observation);
        p.push_str(CRITIC_TAG);
        if let Some(r) = last.reflection.as_ref().filter(|_| self.reflections) {
            p.push_str(&judgment_lead(r));
        }
        p.push_str(tail);
        Ok(p)
    }

    pub fn judgment(&self, history: &History, action: &str, rollout: &[Step]) -> Result<String> {
        self.judgment_with_tail(history, action, rollout, JUDGMENT_PREFIX)
    }

    pub fn direct_eval(&self, history: &History, action: &str, rollout: &[Step]) -> Result<String> {
        self.judgment_with_tail(history, action, rollout, DIRECT_EVAL_PREFIX)
    }
}

/// Explanation text of a reflection, normalized so that a judgment tail can
/// follow it directly.
fn judgment_lead(r: &Reflection) -> String {
    let lead = single_line(r.explanation()).trim_end().to_string();
    if lead.is_empty() {
        lead
    } else {
        lead + " "
    }
}
