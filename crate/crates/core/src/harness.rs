//! The decision loop: one actor-critic step per environment step, episodes
//! bounded by a horizon, and seeded batches over task sets.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::actor::{sample_candidates, ActorConfig};
use crate::backend::{HttpBackend, HttpConfig, LlmBackend, Metered, ScriptRules, ScriptedBackend, ENV_API_KEY};
use crate::critic::{outcome_belief, q_direct_eval, q_variant_logpw, q_with_rollout, MarkerPair};
use crate::error::{Error, Result};
use crate::gridworld::{Environment, ExternalEnv, GridState, GridWorld, OracleBackend, OracleConfig};
use crate::policy::{improve, select_action, ImprovementInput};
use crate::prompt::{PromptTemplate, Prompter};
use crate::types::{Alpha, CandidateEvaluation, DecisionRecord, EpisodeResult, Goal, History, Mode, RolloutTrajectory, Step, TraceLine};
use crate::world_model::{reflect, rollout, RolloutConfig};

/// Benchmark whose horizon a configuration inherits.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    #[default]
    Babyai,
    Alfworld,
    Webshop,
}

impl Profile {
    pub fn horizon(self) -> usize {
        match self {
            Profile::Babyai => 30,
            Profile::Alfworld => 40,
            Profile::Webshop => 15,
        }
    }
}

impl std::str::FromStr for Profile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "babyai" => Ok(Profile::Babyai),
            "alfworld" => Ok(Profile::Alfworld),
            "webshop" => Ok(Profile::Webshop),
            _ => Err(Error::Config(format!("unknown profile {s:?}"))),
        }
    }
}

fn default_alpha() -> Alpha {
    Alpha::Finite(1.0)
}
fn default_candidates() -> usize {
    5
}
fn default_action_tokens() -> usize {
    24
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    #[serde(default = "default_alpha")]
    pub alpha: Alpha,
    #[serde(default = "default_candidates")]
    pub num_candidates: usize,
    #[serde(default)]
    pub rollout: RolloutConfig,
    #[serde(default)]
    pub markers: MarkerPair,
    #[serde(default)]
    pub profile: Profile,
    /// Overrides the profile's horizon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub template: PromptTemplate,
    #[serde(default = "default_action_tokens")]
    pub max_action_tokens: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Evaluate candidates concurrently.
    #[serde(default = "default_true")]
    pub parallel_candidates: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            alpha: default_alpha(),
            num_candidates: default_candidates(),
            rollout: RolloutConfig::default(),
            markers: MarkerPair::default(),
            profile: Profile::default(),
            horizon: None,
            mode: Mode::Full,
            template: PromptTemplate::default(),
            max_action_tokens: default_action_tokens(),
            label: None,
            parallel_candidates: true,
        }
    }
}

impl EngineConfig {
    pub fn for_profile(profile: Profile) -> Self {
        EngineConfig { profile, ..Self::default() }
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_alpha(mut self, alpha: Alpha) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn horizon(&self) -> usize {
        self.horizon.unwrap_or(self.profile.horizon())
    }

    /// Alpha actually used by the improvement step.
    pub fn effective_alpha(&self) -> Alpha {
        match self.mode {
            Mode::NoCritic => Alpha::Finite(0.0),
            Mode::CriticOnly => Alpha::CriticOnly,
            _ => self.alpha,
        }
    }

    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| format!("{}/alpha={}", self.mode, self.alpha))
    }

    pub fn validate(&self) -> Result<()> {
        self.alpha.validate()?;
        if self.num_candidates == 0 || self.max_action_tokens == 0 {
            return Err(Error::Config("num_candidates and max_action_tokens must be >= 1".into()));
        }
        if self.horizon() == 0 {
            return Err(Error::Config("horizon must be >= 1".into()));
        }
        self.rollout.validate()?;
        self.markers.validate()?;
        self.template.validate()
    }

    fn actor(&self) -> ActorConfig {
        ActorConfig { num_candidates: self.num_candidates, max_action_tokens: self.max_action_tokens, ..ActorConfig::default() }
    }
}

/// The three roles the language model plays in a decision step.
#[derive(Clone, Copy)]
pub struct Roles<'a> {
    pub actor: &'a dyn LlmBackend,
    pub critic: &'a dyn LlmBackend,
    pub world_model: &'a dyn LlmBackend,
}

impl<'a> Roles<'a> {
    pub fn shared(backend: &'a dyn LlmBackend) -> Self {
        Roles { actor: backend, critic: backend, world_model: backend }
    }
}

fn evaluate(history: &History, action: &str, prior_logprob: f64, cfg: &EngineConfig, prompter: &Prompter<'_>, roles: Roles<'_>) -> Result<CandidateEvaluation> {
    let no_critic = CandidateEvaluation { action: action.to_string(), prior_logprob, rollout: None, belief: None, q_value: 0.0 };
    let predicted = match cfg.mode {
        Mode::NoCritic => return Ok(no_critic),
        Mode::NoRollout => RolloutTrajectory::empty(),
        _ => rollout(history, action, &cfg.rollout, &cfg.markers, prompter, roles.world_model)?,
    };
    let (belief, q) = match cfg.mode {
        Mode::QVariant => {
            let belief = outcome_belief(&prompter.judgment(history, action, &predicted.steps)?, &cfg.markers, roles.critic)?;
            (belief, q_variant_logpw(&belief))
        }
        Mode::DirectEval => q_direct_eval(&prompter.direct_eval(history, action, &predicted.steps)?, roles.critic)?,
        _ => q_with_rollout(history, action, &predicted, &cfg.markers, prompter, roles.critic)?,
    };
    Ok(CandidateEvaluation { action: action.to_string(), prior_logprob, rollout: Some(predicted), belief: Some(belief), q_value: q })
}

/// One actor-critic step: sample candidates, evaluate each, improve the
/// prior and pick the argmax.
pub fn decide_step(history: &History, cfg: &EngineConfig, roles: Roles<'_>) -> Result<(String, DecisionRecord)> {
    if history.len() >= cfg.horizon() {
        return Err(Error::Validation(format!("history already has {} steps (horizon {})", history.len(), cfg.horizon())));
    }
    let prompter = Prompter::new(&cfg.template, cfg.mode.uses_reflections());
    let proposals = sample_candidates(history, &cfg.actor(), &prompter, roles.actor)?;
    if proposals.is_empty() {
        return Err(Error::ActorExhausted);
    }
    let candidates: Vec<CandidateEvaluation> = if cfg.parallel_candidates && cfg.mode != Mode::NoCritic {
        proposals.par_iter().map(|(a, lp)| evaluate(history, a, *lp, cfg, &prompter, roles)).collect::<Result<_>>()?
    } else {
        proposals.iter().map(|(a, lp)| evaluate(history, a, *lp, cfg, &prompter, roles)).collect::<Result<_>>()?
    };
    let improved = improve(&ImprovementInput::from_candidates(&candidates, cfg.effective_alpha())?)?;
    let action = select_action(&improved, &candidates)?.to_string();
    Ok((action, DecisionRecord { step_index: history.len(), candidates, improved, mode: cfg.mode }))
}

/// Owned backends for the three roles of one episode.
#[derive(Clone)]
pub struct RoleBackends {
    pub actor: Arc<dyn LlmBackend>,
    pub critic: Arc<dyn LlmBackend>,
    pub world_model: Arc<dyn LlmBackend>,
}

impl RoleBackends {
    pub fn shared(backend: Arc<dyn LlmBackend>) -> Self {
        RoleBackends { actor: backend.clone(), critic: backend.clone(), world_model: backend }
    }
}

/// Builds the backends for an episode. `state` is the environment's ground
/// truth right after reset, when it exposes one.
pub trait BackendFactory: Sync {
    fn build(&self, state: Option<&GridState>) -> Result<RoleBackends>;
}

impl BackendFactory for RoleBackends {
    fn build(&self, _: Option<&GridState>) -> Result<RoleBackends> {
        Ok(self.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    Oracle(OracleConfig),
    Scripted {
        #[serde(default)]
        rules: ScriptRules,
    },
    /// Completions endpoint; unset fields come from `LAC_BACKEND_URL`,
    /// `LAC_MODEL` and `LAC_API_KEY`.
    Http {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        base_url: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        model: Option<String>,
    },
}

impl Default for BackendSpec {
    fn default() -> Self {
        BackendSpec::Oracle(OracleConfig::exact())
    }
}

impl BackendSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            BackendSpec::Oracle(c) => c.validate(),
            _ => Ok(()),
        }
    }

    pub fn build(&self, state: Option<&GridState>) -> Result<Arc<dyn LlmBackend>> {
        Ok(match self {
            BackendSpec::Oracle(cfg) => {
                let st = state.ok_or_else(|| Error::Config("the oracle backend needs the built-in gridworld environment".into()))?;
                Arc::new(OracleBackend::new(st.clone(), cfg.clone()))
            }
            BackendSpec::Scripted { rules } => Arc::new(ScriptedBackend::from_rules(rules.clone())),
            BackendSpec::Http { base_url, model } => {
                let mut cfg = HttpConfig::from_env().unwrap_or_else(|| HttpConfig::new("", ""));
                if let Some(u) = base_url {
                    cfg.base_url = u.clone();
                }
                if let Some(m) = model {
                    cfg.model = m.clone();
                }
                if cfg.api_key.is_none() {
                    cfg.api_key = std::env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty());
                }
                if cfg.base_url.is_empty() {
                    return Err(Error::Config("http backend needs base_url or LAC_BACKEND_URL".into()));
                }
                Arc::new(HttpBackend::new(cfg)?)
            }
        })
    }
}

/// A default backend plus optional per-role overrides.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    #[serde(flatten)]
    pub default: BackendSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actor: Option<BackendSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub critic: Option<BackendSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub world_model: Option<BackendSpec>,
}

impl BackendDescriptor {
    pub fn new(default: BackendSpec) -> Self {
        BackendDescriptor { default, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        self.default.validate()?;
        for s in [&self.actor, &self.critic, &self.world_model].into_iter().flatten() {
            s.validate()?;
        }
        Ok(())
    }
}

impl BackendFactory for BackendDescriptor {
    fn build(&self, state: Option<&GridState>) -> Result<RoleBackends> {
        let default = self.default.build(state)?;
        let role = |s: &Option<BackendSpec>| s.as_ref().map_or_else(|| Ok(default.clone()), |s| s.build(state));
        Ok(RoleBackends { actor: role(&self.actor)?, critic: role(&self.critic)?, world_model: role(&self.world_model)? })
    }
}

/// Retries a transient backend failure once.
fn once_more<T>(mut f: impl FnMut() -> Result<T>) -> Result<T> {
    match f() {
        Err(e) if e.is_retryable() => {
            log::warn!("retrying after transient error: {e}");
            f()
        }
        r => r,
    }
}

/// Runs one episode. Backend and environment failures end the episode as a
/// failure with `failure` set; only configuration problems are errors.
pub fn run_episode(
    env: &mut dyn Environment,
    cfg: &EngineConfig,
    backends: &dyn BackendFactory,
    task: &str,
    seed: u64,
    mut on_decision: Option<&mut dyn FnMut(&DecisionRecord)>,
) -> Result<EpisodeResult> {
    cfg.validate()?;
    let mut result = EpisodeResult {
        label: cfg.label(),
        task: task.to_string(),
        seed,
        history: History::new(Goal::new(task.to_string()).unwrap_or_else(|_| Goal::new("unknown task").expect("non-empty")), ""),
        reward: 0.0,
        success: false,
        steps_used: 0,
        tokens_used: 0,
        records: Vec::new(),
        failure: None,
    };
    let start = match env.reset(seed, task) {
        Ok(s) => s,
        Err(e) => {
            result.failure = Some(format!("reset failed: {e}"));
            return Ok(result);
        }
    };
    result.history = History::new(start.goal, start.observation);
    let built = backends.build(env.grid_state())?;
    let (actor, critic, world_model) = (Metered::new(built.actor), Metered::new(built.critic), Metered::new(built.world_model));
    let roles = Roles { actor: &actor, critic: &critic, world_model: &world_model };
    let prompter = Prompter::new(&cfg.template, cfg.mode.uses_reflections());

    let mut done = false;
    let mut reward = 0.0;
    while !done && result.history.len() < cfg.horizon() {
        let (action, record) = match once_more(|| decide_step(&result.history, cfg, roles)) {
            Ok(d) => d,
            Err(e) => {
                result.failure = Some(format!("decision at step {} failed: {e}", result.history.len()));
                break;
            }
        };
        if let Some(cb) = on_decision.as_deref_mut() {
            cb(&record);
        }
        result.records.push(record);
        let out = match env.step(&action) {
            Ok(o) => o,
            Err(e) => {
                result.failure = Some(format!("environment step failed: {e}"));
                break;
            }
        };
        done = out.done;
        reward = out.reward;
        let step = match Step::new(action, out.observation_text) {
            Ok(s) => s,
            Err(e) => {
                result.failure = Some(format!("environment returned an unusable step: {e}"));
                break;
            }
        };
        result.history.push(step);
        if !done && cfg.mode.uses_reflections() {
            match once_more(|| reflect(&result.history, &cfg.markers, &prompter, roles.critic, cfg.rollout.max_line_tokens)) {
                Ok(r) => {
                    let last = result.history.steps.pop().expect("just pushed");
                    result.history.push(last.with_reflection(r));
                }
                Err(e) => {
                    result.failure = Some(format!("reflection at step {} failed: {e}", result.history.len()));
                    break;
                }
            }
        }
    }
    result.steps_used = result.history.len();
    result.reward = if done { reward } else { 0.0 };
    result.success = done && result.failure.is_none() && reward >= 1.0;
    result.tokens_used = actor.tokens() + critic.tokens() + world_model.tokens();
    Ok(result)
}

/// Where episodes run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvSpec {
    #[default]
    Gridworld,
    /// A child process speaking the line-delimited JSON protocol.
    External { command: Vec<String> },
}

impl EnvSpec {
    pub fn open(&self) -> Result<Box<dyn Environment>> {
        match self {
            EnvSpec::Gridworld => Ok(Box::new(GridWorld::new())),
            EnvSpec::External { command } => {
                let (program, args) = command.split_first().ok_or_else(|| Error::Config("external env command is empty".into()))?;
                Ok(Box::new(ExternalEnv::spawn(program, args)?))
            }
        }
    }
}

/// Seeds as an explicit list or a contiguous range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Seeds {
    List(Vec<u64>),
    Range { start: u64, count: u64 },
}

impl Seeds {
    pub fn to_vec(&self) -> Vec<u64> {
        match self {
            Seeds::List(v) => v.clone(),
            Seeds::Range { start, count } => (*start..start + count).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSet {
    pub kind: String,
    pub seeds: Seeds,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    #[serde(default)]
    pub tasks: Vec<TaskSet>,
    /// A single configuration; merged in front of `configs`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<EngineConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub configs: Vec<EngineConfig>,
    #[serde(default)]
    pub backend: BackendDescriptor,
    #[serde(default)]
    pub env: EnvSpec,
    /// Output directory for `episodes.jsonl`, `summary.csv`, `summary.json`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default = "default_true")]
    pub parallel: bool,
}

impl RunManifest {
    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(format!("manifest: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read manifest {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn all_configs(&self) -> Vec<EngineConfig> {
        self.config.iter().chain(&self.configs).cloned().collect()
    }

    pub fn validate(&self) -> Result<()> {
        for t in &self.tasks {
            let seeds = t.seeds.to_vec();
            if seeds.iter().collect::<HashSet<_>>().len() != seeds.len() {
                return Err(Error::Config(format!("task {} lists a seed twice", t.kind)));
            }
        }
        for c in self.all_configs() {
            c.validate()?;
        }
        self.backend.validate()
    }

    fn jobs(&self) -> Vec<(EngineConfig, String, u64)> {
        let mut jobs = Vec::new();
        for c in self.all_configs() {
            for t in &self.tasks {
                for s in t.seeds.to_vec() {
                    jobs.push((c.clone(), t.kind.clone(), s));
                }
            }
        }
        jobs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub label: String,
    pub mode: Mode,
    pub alpha: Alpha,
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_reward: f64,
    pub mean_steps: f64,
    pub mean_tokens: f64,
    /// Episodes cut short by a backend or environment failure.
    pub aborted: usize,
}

impl SummaryRow {
    fn from_episodes(cfg: &EngineConfig, eps: &[&EpisodeResult]) -> Self {
        let n = eps.len();
        let mean = |f: &dyn Fn(&EpisodeResult) -> f64| if n == 0 { 0.0 } else { eps.iter().map(|e| f(e)).sum::<f64>() / n as f64 };
        let successes = eps.iter().filter(|e| e.success).count();
        SummaryRow {
            label: cfg.label(),
            mode: cfg.mode,
            alpha: cfg.alpha,
            episodes: n,
            successes,
            success_rate: if n == 0 { 0.0 } else { successes as f64 / n as f64 },
            mean_reward: mean(&|e| e.reward),
            mean_steps: mean(&|e| e.steps_used as f64),
            mean_tokens: mean(&|e| e.tokens_used as f64),
            aborted: eps.iter().filter(|e| e.failure.is_some()).count(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
}

impl Summary {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).map_err(|e| Error::Io(std::io::Error::other(e)))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }
}

impl std::fmt::Display for Summary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for r in &self.rows {
            writeln!(
                f,
                "{} episodes={} success_rate={:.3} mean_reward={:.3} mean_steps={:.2} mean_tokens={:.1} aborted={}",
                r.label, r.episodes, r.success_rate, r.mean_reward, r.mean_steps, r.mean_tokens, r.aborted
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct BatchOutput {
    pub summary: Summary,
    pub episodes: Vec<EpisodeResult>,
}

/// Runs every (config, task, seed) job. Episode order in the output and in
/// the trace file is the manifest order regardless of concurrency.
pub fn run_batch(manifest: &RunManifest) -> Result<BatchOutput> {
    manifest.validate()?;
    let jobs = manifest.jobs();
    let run = |(cfg, task, seed): &(EngineConfig, String, u64)| -> Result<EpisodeResult> {
        let mut env = match manifest.env.open() {
            Ok(e) => e,
            Err(Error::Config(m)) => return Err(Error::Config(m)),
            Err(e) => return Ok(aborted(cfg, task, *seed, format!("environment failed to start: {e}"))),
        };
        run_episode(env.as_mut(), cfg, &manifest.backend, task, *seed, None)
    };
    let episodes: Vec<EpisodeResult> =
        if manifest.parallel { jobs.par_iter().map(run).collect::<Result<_>>()? } else { jobs.iter().map(run).collect::<Result<_>>()? };

    let mut summary = Summary::default();
    for cfg in manifest.all_configs() {
        let label = cfg.label();
        let mine: Vec<&EpisodeResult> = episodes.iter().filter(|e| e.label == label).collect();
        if !mine.is_empty() {
            summary.rows.push(SummaryRow::from_episodes(&cfg, &mine));
        }
    }
    if let Some(dir) = &manifest.output {
        write_outputs(dir, &episodes, &summary)?;
    }
    Ok(BatchOutput { summary, episodes })
}

fn aborted(cfg: &EngineConfig, task: &str, seed: u64, why: String) -> EpisodeResult {
    EpisodeResult {
        label: cfg.label(),
        task: task.to_string(),
        seed,
        history: History::new(Goal::new(task.to_string()).unwrap_or_else(|_| Goal::new("unknown task").expect("non-empty")), ""),
        reward: 0.0,
        success: false,
        steps_used: 0,
        tokens_used: 0,
        records: Vec::new(),
        failure: Some(why),
    }
}

/// Writes an episode as its decision lines followed by the episode line
/// (whose own `records` are left empty to avoid duplication).
pub fn write_trace(out: &mut impl Write, episode: &EpisodeResult) -> Result<()> {
    for r in &episode.records {
        out.write_all(TraceLine::Decision(r.clone()).to_json_line()?.as_bytes())?;
    }
    let bare = EpisodeResult { records: Vec::new(), ..episode.clone() };
    out.write_all(TraceLine::Episode(bare).to_json_line()?.as_bytes())?;
    Ok(())
}

pub fn write_outputs(dir: &Path, episodes: &[EpisodeResult], summary: &Summary) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut trace = std::io::BufWriter::new(fs::File::create(dir.join("episodes.jsonl"))?);
    for e in episodes {
        write_trace(&mut trace, e)?;
    }
    trace.flush()?;
    fs::write(dir.join("summary.csv"), summary.to_csv()?)?;
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(summary)? + "\n")?;
    Ok(())
}
