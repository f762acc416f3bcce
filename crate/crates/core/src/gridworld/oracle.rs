//! Ground-truth stand-in for the language model, derived from the room.
//!
//! Every query is answered by replaying the live trajectory in the prompt
//! (the part after the last goal line) on a mirror of the episode's initial
//! state, then reading the open line at the end:
//!
//! | open line                     | answer                                   |
//! |-------------------------------|------------------------------------------|
//! | `Action:`                     | the prior's centre action                |
//! | `Observation:`                | rendered view after the last action      |
//! | `Critic:`                     | reflection ending in the step's label    |
//! | `Critic:... This step is `    | marker distribution (GOOD/BAD/UNKNOWN)   |
//! | `... probability of success is ` | the success probability as text      |
//!
//! Each primitive action string is a single token.

use std::collections::HashMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::nav::plan_distance;
use super::{GridState, Primitive, VIEW_FORWARD, VIEW_LATERAL};
use crate::backend::{
    aggregate_candidates, apply_stop, count_tokens, word_tokens, BackendError, BackendResult, GenerationRequest, GenerationResult, LlmBackend,
    Scored, TokenProbs, TokenQuery, EPSILON_FLOOR,
};
use crate::critic::sigmoid;
use crate::prompt::{ACTION_TAG, CRITIC_TAG, DIRECT_EVAL_PREFIX, GOAL_LINE, OBSERVATION_TAG};
use crate::types::{Judgment, JUDGMENT_PREFIX};

pub const KAPPA: f64 = 2.0;
pub const BETA: f64 = 2.0;
/// Lower bound on the success probability of a GOOD step that still fits
/// the budget.
pub const GOOD_FLOOR: f64 = 0.9;
/// Mass given to the non-centre actions when `epsilon` is zero.
pub const MIN_ALTERNATIVE_MASS: f64 = 1e-6;
const UNKNOWN_MASS: f64 = 0.6;
const STRAY_UNKNOWN_MASS: f64 = 0.02;

/// Which action the prior concentrates on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OraclePrior {
    /// The action that most reduces the plan distance.
    #[default]
    Exact,
    /// The action that most increases it (invalid actions next); used to
    /// force failing trajectories.
    Adversarial,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    /// Probability, per visited state, that the prior's centre is replaced
    /// by a uniformly random primitive. Also the mass left for the
    /// non-centre actions.
    #[serde(default)]
    pub epsilon: f64,
    /// Probability, per judged step, that the label and success probability
    /// are flipped.
    #[serde(default)]
    pub judgment_noise: f64,
    #[serde(default)]
    pub prior: OraclePrior,
    /// Mixed into every noise draw.
    #[serde(default)]
    pub salt: u64,
    /// Step budget of the episode. When set, the success probability drops
    /// by `KAPPA` for every step the remaining budget falls short of the
    /// plan distance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<u32>,
}

impl OracleConfig {
    pub fn exact() -> Self {
        Self::default()
    }

    pub fn noisy_prior(epsilon: f64) -> Self {
        OracleConfig { epsilon, ..Self::default() }
    }

    pub fn validate(&self) -> crate::Result<()> {
        for (name, v) in [("epsilon", self.epsilon), ("judgment_noise", self.judgment_noise)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(crate::Error::Config(format!("oracle {name} must lie in [0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

/// Outcome of judging one step.
#[derive(Debug, Clone, PartialEq)]
pub struct Assessment {
    pub label: Judgment,
    pub p_success: f64,
    pub explanation: &'static str,
}

impl Assessment {
    pub fn reflection(&self) -> String {
        format!("{} {JUDGMENT_PREFIX}{}.", self.explanation, self.label.as_str())
    }

    /// Next-token distribution at the judgment position.
    pub fn markers(&self) -> [(&'static str, f64); 3] {
        let u = if self.label == Judgment::Unknown { UNKNOWN_MASS } else { STRAY_UNKNOWN_MASS };
        [("GOOD", self.p_success * (1.0 - u)), ("BAD", (1.0 - self.p_success) * (1.0 - u)), ("UNKNOWN", u)]
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Open {
    Action(String),
    Observation,
    Critic,
    Judgment,
    DirectEval,
    Other,
}

#[derive(Debug, Clone)]
struct Replay {
    before: GridState,
    state: GridState,
    actions: Vec<String>,
    last_invalid: bool,
    last_observation: String,
    open: Open,
}

pub struct OracleBackend {
    cfg: OracleConfig,
    initial: GridState,
    goal: String,
    initial_observation: String,
    distances: Mutex<HashMap<GridState, u32>>,
}

impl std::fmt::Debug for OracleBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OracleBackend").field("cfg", &self.cfg).field("goal", &self.goal).finish()
    }
}

fn fnv1a(h: &mut u64, bytes: &[u8]) {
    for b in bytes {
        *h ^= u64::from(*b);
        *h = h.wrapping_mul(0x0100_0000_01b3);
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn unit(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

impl OracleBackend {
    /// Oracle for the episode starting at `initial`.
    pub fn new(initial: GridState, cfg: OracleConfig) -> Self {
        OracleBackend {
            goal: initial.goal().to_string(),
            initial_observation: initial.render(),
            initial,
            cfg,
            distances: Mutex::new(HashMap::new()),
        }
    }

    pub fn exact(initial: GridState) -> Self {
        Self::new(initial, OracleConfig::exact())
    }

    pub fn config(&self) -> &OracleConfig {
        &self.cfg
    }

    pub fn distance(&self, st: &GridState) -> u32 {
        if let Some(d) = self.distances.lock().expect("cache lock").get(st) {
            return *d;
        }
        let d = plan_distance(st);
        self.distances.lock().expect("cache lock").insert(st.clone(), d);
        d
    }

    fn seeded(&self, tag: &str) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        fnv1a(&mut h, &self.cfg.salt.to_le_bytes());
        fnv1a(&mut h, &self.initial.rng_seed.to_le_bytes());
        fnv1a(&mut h, self.goal.as_bytes());
        fnv1a(&mut h, tag.as_bytes());
        h
    }

    /// Noise draw for a judged step, keyed by the action sequence.
    fn draw(&self, actions: &[String], tag: &str) -> u64 {
        let mut h = self.seeded(tag);
        for a in actions {
            fnv1a(&mut h, a.as_bytes());
            fnv1a(&mut h, b"\n");
        }
        splitmix(h)
    }

    /// Noise draw keyed by the room state alone, so revisiting a state
    /// repeats the same mistake.
    fn draw_state(&self, st: &GridState, tag: &str) -> u64 {
        let mut h = self.seeded(tag);
        let b = |h: &mut u64, v: i32| fnv1a(h, &v.to_le_bytes());
        b(&mut h, st.agent_pos.x);
        b(&mut h, st.agent_pos.y);
        b(&mut h, st.agent_dir.index() as i32);
        b(&mut h, i32::from(st.progress));
        if let Some(c) = st.carried {
            fnv1a(&mut h, c.to_string().as_bytes());
        }
        for o in &st.objects {
            fnv1a(&mut h, o.desc.to_string().as_bytes());
            b(&mut h, o.pos.x);
            b(&mut h, o.pos.y);
        }
        splitmix(h)
    }

    fn replay(&self, prompt: &str) -> BackendResult<Replay> {
        let start = prompt.rfind(GOAL_LINE).ok_or_else(|| BackendError::InvalidRequest("prompt has no goal line".into()))?;
        let mut lines: Vec<&str> = prompt[start + GOAL_LINE.len()..].split('\n').collect();
        let open_line = lines.pop().unwrap_or_default();
        if lines.is_empty() {
            return Err(BackendError::InvalidRequest("prompt has no trajectory".into()));
        }
        if lines[0] != self.goal {
            return Err(BackendError::Desync(format!("goal {:?} does not match the mirrored episode {:?}", lines[0], self.goal)));
        }
        let mut state = self.initial.clone();
        let mut before = state.clone();
        let mut actions = Vec::new();
        let mut last_invalid = false;
        let mut last_observation = self.initial_observation.clone();
        for line in &lines[1..] {
            if let Some(obs) = line.strip_prefix(OBSERVATION_TAG) {
                if obs != last_observation {
                    return Err(BackendError::Desync(format!("observation {obs:?} differs from mirror {last_observation:?}")));
                }
            } else if let Some(action) = line.strip_prefix(ACTION_TAG) {
                before = state.clone();
                let out = state.step(action);
                last_invalid = Primitive::parse(action.trim()).is_none() || unchanged(&before, &state);
                last_observation = out.observation_text;
                actions.push(action.to_string());
            } else if !line.starts_with(CRITIC_TAG) {
                return Err(BackendError::InvalidRequest(format!("unexpected prompt line {line:?}")));
            }
        }
        let open = if let Some(partial) = open_line.strip_prefix(ACTION_TAG) {
            Open::Action(partial.to_string())
        } else if open_line == OBSERVATION_TAG {
            Open::Observation
        } else if open_line == CRITIC_TAG {
            Open::Critic
        } else if open_line.starts_with(CRITIC_TAG) && open_line.ends_with(JUDGMENT_PREFIX) {
            Open::Judgment
        } else if open_line.ends_with(DIRECT_EVAL_PREFIX) {
            Open::DirectEval
        } else {
            Open::Other
        };
        Ok(Replay { before, state, actions, last_invalid, last_observation, open })
    }

    /// Judges the last replayed action.
    fn assess(&self, r: &Replay) -> BackendResult<Assessment> {
        if r.actions.is_empty() {
            return Err(BackendError::InvalidRequest("no action to judge".into()));
        }
        let (d_prev, d) = (self.distance(&r.before), self.distance(&r.state));
        let completed = r.state.done && !r.before.done;
        let subtask = r.state.progress > r.before.progress;
        let delta = if r.last_invalid { -1.0 } else { f64::from(d_prev) - f64::from(d) };
        let (label, explanation) = if r.last_invalid {
            (Judgment::Bad, "That action changed nothing.")
        } else if completed {
            (Judgment::Good, "I have completed the task.")
        } else if subtask {
            (Judgment::Good, "I have finished the first part of the task.")
        } else if d < d_prev {
            (Judgment::Good, "I am closer to the goal.")
        } else if d > d_prev && visible_targets(&r.state) <= visible_targets(&r.before) {
            (Judgment::Bad, "I moved away from the goal.")
        } else {
            (Judgment::Unknown, "I am not closer to the goal yet.")
        };
        let shortfall = self.cfg.budget.map_or(0.0, |b| (f64::from(d) + r.actions.len() as f64 - f64::from(b)).max(0.0));
        let mut p = sigmoid(KAPPA * (delta - shortfall) + BETA / (1.0 + f64::from(d)));
        if label == Judgment::Good && shortfall == 0.0 {
            p = p.max(GOOD_FLOOR);
        }
        let mut a = Assessment { label, p_success: p, explanation };
        if self.cfg.judgment_noise > 0.0 && unit(self.draw(&r.actions, "judge")) < self.cfg.judgment_noise {
            a = match a.label {
                Judgment::Good => Assessment { label: Judgment::Bad, p_success: 1.0 - a.p_success, explanation: "I moved away from the goal." },
                Judgment::Bad => Assessment { label: Judgment::Good, p_success: 1.0 - a.p_success, explanation: "I am closer to the goal." },
                Judgment::Unknown => Assessment { p_success: 1.0 - a.p_success, ..a },
            };
        }
        Ok(a)
    }

    /// Prior over the six primitives at `st`, in [`Primitive::ALL`] order.
    pub fn prior(&self, st: &GridState) -> [f64; 6] {
        let d = self.distance(st);
        let outcomes: Vec<(f64, bool)> = Primitive::ALL
            .iter()
            .map(|&prim| {
                let mut n = st.clone();
                n.step(prim.as_str());
                let invalid = unchanged(st, &n);
                (f64::from(if invalid { d } else { self.distance(&n) }), invalid)
            })
            .collect();
        let score = |(dn, invalid): (f64, bool)| match self.cfg.prior {
            OraclePrior::Exact => dn + if invalid { 0.5 } else { 0.0 },
            OraclePrior::Adversarial => -dn + if invalid { 1.5 } else { 0.0 },
        };
        let mut centre = 0;
        for i in 1..6 {
            if score(outcomes[i]) < score(outcomes[centre]) {
                centre = i;
            }
        }
        if self.cfg.epsilon > 0.0 {
            let h = self.draw_state(st, "prior");
            if unit(h) < self.cfg.epsilon {
                centre = (splitmix(h) % 6) as usize;
            }
        }
        let rest = self.cfg.epsilon.max(MIN_ALTERNATIVE_MASS);
        let weights: Vec<f64> = outcomes.iter().map(|&o| (-score(o) + score(outcomes[centre])).exp()).collect();
        let z: f64 = weights.iter().enumerate().filter(|(i, _)| *i != centre).map(|(_, w)| w).sum();
        let mut probs = [0.0; 6];
        for i in 0..6 {
            probs[i] = if i == centre { 1.0 - rest } else { rest * weights[i] / z };
        }
        probs
    }

    fn action_completion(&self, r: &Replay, partial: &str) -> String {
        let prior = self.prior(&r.state);
        let best = Primitive::ALL
            .iter()
            .enumerate()
            .filter(|(_, p)| p.as_str().starts_with(partial))
            .fold(None::<(usize, f64)>, |acc, (i, _)| match acc {
                Some((_, bp)) if bp >= prior[i] => acc,
                _ => Some((i, prior[i])),
            });
        best.map(|(i, _)| Primitive::ALL[i].as_str()[partial.len()..].to_string()).unwrap_or_default()
    }

    fn raw_text(&self, r: &Replay) -> BackendResult<String> {
        Ok(match &r.open {
            Open::Action(partial) => self.action_completion(r, partial),
            Open::Observation => r.last_observation.clone(),
            Open::Critic => self.assess(r)?.reflection(),
            Open::Judgment => format!("{}.", self.assess(r)?.label.as_str()),
            Open::DirectEval => format!("{:.4}", self.assess(r)?.p_success),
            Open::Other => String::new(),
        })
    }
}

fn unchanged(a: &GridState, b: &GridState) -> bool {
    a.agent_pos == b.agent_pos && a.agent_dir == b.agent_dir && a.carried == b.carried && a.objects == b.objects
}

fn visible_targets(st: &GridState) -> usize {
    st.task
        .targets
        .iter()
        .filter_map(|t| st.position_of(*t))
        .filter(|p| {
            let (lat, fwd) = st.relative(*p);
            lat.abs() <= VIEW_LATERAL && (0..=VIEW_FORWARD).contains(&fwd)
        })
        .count()
}

impl LlmBackend for OracleBackend {
    fn generate(&self, req: &GenerationRequest) -> BackendResult<GenerationResult> {
        req.validate()?;
        let r = self.replay(&req.prompt)?;
        let raw = apply_stop(&self.raw_text(&r)?, &req.stop);
        let tokens: Vec<String> = match &r.open {
            Open::Action(_) if !raw.is_empty() => vec![raw.clone()],
            _ => word_tokens(&raw).into_iter().take(req.max_tokens).map(str::to_string).collect(),
        };
        let text = tokens.concat();
        let token_logprobs = match &r.open {
            Open::Action(p) if p.is_empty() && !text.is_empty() => {
                let prior = self.prior(&r.state);
                let i = Primitive::ALL.iter().position(|x| x.as_str() == text).expect("completion is a primitive");
                vec![prior[i].ln()]
            }
            _ => vec![0.0; tokens.len()],
        };
        let total_tokens = count_tokens(&req.prompt) + tokens.len() as u64;
        Ok(GenerationResult { text, tokens, token_logprobs, total_tokens })
    }

    fn score_continuation(&self, prompt: &str, continuation: &str) -> BackendResult<Scored> {
        if continuation.is_empty() {
            return Err(BackendError::InvalidRequest("continuation is empty".into()));
        }
        let total_tokens = count_tokens(prompt) + count_tokens(continuation);
        let r = self.replay(prompt)?;
        let logprob = match &r.open {
            Open::Action(partial) => {
                let prior = self.prior(&r.state);
                let full = format!("{partial}{continuation}");
                let support: f64 = Primitive::ALL.iter().zip(prior).filter(|(p, _)| p.as_str().starts_with(partial.as_str())).map(|(_, q)| q).sum();
                match Primitive::ALL.iter().position(|p| p.as_str() == full.trim()) {
                    Some(i) if support > 0.0 => (prior[i] / support).ln().min(0.0),
                    _ => EPSILON_FLOOR.ln(),
                }
            }
            _ => {
                if self.raw_text(&r)?.trim() == continuation.trim() {
                    0.0
                } else {
                    EPSILON_FLOOR.ln()
                }
            }
        };
        Ok(Scored { logprob, total_tokens })
    }

    fn next_token_probs(&self, q: &TokenQuery) -> BackendResult<TokenProbs> {
        q.validate()?;
        let r = self.replay(&q.prompt)?;
        let total_tokens = count_tokens(&q.prompt) + 1;
        let probs = match &r.open {
            Open::Judgment => aggregate_candidates(&self.assess(&r)?.markers(), &q.candidate_tokens),
            Open::Action(p) if p.is_empty() => {
                let prior = self.prior(&r.state);
                let alts: Vec<(&str, f64)> = Primitive::ALL.iter().map(|p| p.as_str()).zip(prior).collect();
                aggregate_candidates(&alts, &q.candidate_tokens)
            }
            _ => return Err(BackendError::Unsupported("oracle next-token probabilities outside judgment and action positions")),
        };
        Ok(TokenProbs { probs, total_tokens })
    }

    fn top_next_tokens(&self, prompt: &str, k: usize) -> BackendResult<TokenProbs> {
        let r = self.replay(prompt)?;
        let total_tokens = count_tokens(prompt) + 1;
        let mut probs: Vec<(String, f64)> = match &r.open {
            Open::Action(p) if p.is_empty() => {
                let prior = self.prior(&r.state);
                Primitive::ALL.iter().map(|p| p.as_str().to_string()).zip(prior).collect()
            }
            Open::Judgment => self.assess(&r)?.markers().iter().map(|(t, p)| (t.to_string(), *p)).collect(),
            _ => {
                let text = self.raw_text(&r)?;
                word_tokens(&text).first().map(|t| vec![(t.to_string(), 1.0)]).unwrap_or_default()
            }
        };
        probs.sort_by(|a, b| b.1.total_cmp(&a.1));
        probs.truncate(k);
        Ok(TokenProbs { probs, total_tokens })
    }
}
