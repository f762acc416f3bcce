//! Command-line front end: `run`, `eval`, `analyze`, `demo`.

use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::analysis::{analyze, emit_plots, read_trace};
use crate::backend::{ENV_BACKEND_URL, ENV_MODEL};
use crate::demo;
use crate::error::{Error, Result};
use crate::gridworld::{serve, OracleConfig, OraclePrior};
use crate::harness::{run_batch, run_episode, BackendDescriptor, BackendSpec, EngineConfig, EnvSpec, Profile, RunManifest, Seeds, TaskSet};
use crate::types::{Alpha, Mode, TraceLine};

const EXIT_CODES: &str = "Exit codes: 0 success (for `run`, the episode succeeded), 1 the episode failed, 2 usage, configuration or I/O error.";

#[derive(Debug, Parser)]
#[command(name = "lac", version, about = "Actor-critic decision engine for language-model agents", after_help = EXIT_CODES)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one episode and stream its decisions as JSONL.
    Run(RunArgs),
    /// Run a batch manifest and print the summary table.
    Eval(EvalArgs),
    /// Correlation, confidence and cost reports over a trace file.
    Analyze(AnalyzeArgs),
    /// Show the critic overriding the prior in a small kitchen scene.
    Demo(DemoArgs),
    /// Serve the built-in gridworld over stdio JSONL.
    #[command(hide = true)]
    EnvServer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EnvKind {
    Gridworld,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    Oracle,
    Scripted,
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Full,
    NoCritic,
    CriticOnly,
    NoRollout,
    NoReflection,
    QVariant,
    DirectEval,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Full => Mode::Full,
            ModeArg::NoCritic => Mode::NoCritic,
            ModeArg::CriticOnly => Mode::CriticOnly,
            ModeArg::NoRollout => Mode::NoRollout,
            ModeArg::NoReflection => Mode::NoReflection,
            ModeArg::QVariant => Mode::QVariant,
            ModeArg::DirectEval => Mode::DirectEval,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProfileArg {
    Babyai,
    Alfworld,
    Webshop,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Profile {
        match p {
            ProfileArg::Babyai => Profile::Babyai,
            ProfileArg::Alfworld => Profile::Alfworld,
            ProfileArg::Webshop => Profile::Webshop,
        }
    }
}

/// Engine settings. Unset flags keep the manifest's value, or the default.
#[derive(Debug, Clone, Default, Args)]
pub struct EngineFlags {
    /// Decision-loop variant [default: full]
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Regularization strength, a number >= 0 or `critic_only` [default: 1.0]
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: Option<String>,
    /// Candidate actions per step [default: 5]
    #[arg(long)]
    pub n: Option<usize>,
    /// Rollout depth [default: 4]
    #[arg(long)]
    pub max_depth: Option<usize>,
    /// Step limit; overrides the profile's horizon
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Horizon profile: babyai 30, alfworld 40, webshop 15 [default: babyai]
    #[arg(long, value_enum)]
    pub profile: Option<ProfileArg>,
}

fn parse_alpha(s: &str) -> Result<Alpha> {
    let a = match s.trim() {
        "critic_only" | "critic-only" | "inf" => Alpha::CriticOnly,
        t => Alpha::Finite(t.parse().map_err(|_| Error::Config(format!("alpha must be a number or critic_only, got {s:?}")))?),
    };
    match a {
        Alpha::Finite(v) if !(v >= 0.0) || !v.is_finite() => Err(Error::Config(format!("alpha must be ≥ 0, got {s}"))),
        a => Ok(a),
    }
}

impl EngineFlags {
    pub fn apply(&self, cfg: &mut EngineConfig) -> Result<()> {
        if let Some(m) = self.mode {
            cfg.mode = m.into();
        }
        if let Some(a) = &self.alpha {
            cfg.alpha = parse_alpha(a)?;
        }
        if let Some(n) = self.n {
            cfg.num_candidates = n;
        }
        if let Some(d) = self.max_depth {
            cfg.rollout.max_depth = d;
        }
        if let Some(p) = self.profile {
            cfg.profile = p.into();
        }
        if self.horizon.is_some() {
            cfg.horizon = self.horizon;
        }
        if self.alpha.is_some() && matches!(cfg.mode, Mode::NoCritic | Mode::CriticOnly) {
            eprintln!("warning: --alpha is ignored in {} mode", cfg.mode);
        }
        cfg.validate()
    }

    fn any(&self) -> bool {
        self.mode.is_some() || self.alpha.is_some() || self.n.is_some() || self.max_depth.is_some() || self.horizon.is_some() || self.profile.is_some()
    }
}

/// Backend and environment selection shared by `run` and `eval`.
#[derive(Debug, Clone, Default, Args)]
pub struct BackendFlags {
    /// Model backend for every role [default: oracle]
    #[arg(long, value_enum)]
    pub backend: Option<BackendKind>,
    /// Oracle: probability per state that the prior's favourite is replaced by a random action
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Oracle: probability that a judgment is flipped
    #[arg(long)]
    pub judgment_noise: Option<f64>,
    /// Oracle: make the prior head away from the goal
    #[arg(long)]
    pub adversarial: bool,
    /// Oracle: step budget the critic weighs against the remaining distance
    #[arg(long)]
    pub budget: Option<u32>,
    /// Scripted: JSON rule file
    #[arg(long)]
    pub script: Option<PathBuf>,
    /// HTTP: completions endpoint base URL
    #[arg(long, env = ENV_BACKEND_URL)]
    pub backend_url: Option<String>,
    /// HTTP: model name
    #[arg(long, env = ENV_MODEL)]
    pub model: Option<String>,
    /// Environment [default: gridworld]
    #[arg(long, value_enum)]
    pub env: Option<EnvKind>,
    /// External environment command line, e.g. "python3 env.py"
    #[arg(long)]
    pub env_cmd: Option<String>,
}

impl BackendFlags {
    fn spec(&self, kind: BackendKind) -> Result<BackendSpec> {
        Ok(match kind {
            BackendKind::Oracle => {
                let cfg = OracleConfig {
                    epsilon: self.epsilon.unwrap_or(0.0),
                    judgment_noise: self.judgment_noise.unwrap_or(0.0),
                    prior: if self.adversarial { OraclePrior::Adversarial } else { OraclePrior::Exact },
                    salt: 0,
                    budget: self.budget,
                };
                cfg.validate()?;
                BackendSpec::Oracle(cfg)
            }
            BackendKind::Scripted => {
                let rules = match &self.script {
                    Some(p) => {
                        let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read script {}: {e}", p.display())))?;
                        serde_json::from_str(&text).map_err(|e| Error::Config(format!("script {}: {e}", p.display())))?
                    }
                    None => Default::default(),
                };
                BackendSpec::Scripted { rules }
            }
            BackendKind::Http => BackendSpec::Http { base_url: self.backend_url.clone(), model: self.model.clone() },
        })
    }

    pub fn apply(&self, backend: &mut BackendDescriptor, env: &mut EnvSpec) -> Result<()> {
        if let Some(kind) = self.backend {
            *backend = BackendDescriptor::new(self.spec(kind)?);
        } else if self.epsilon.is_some() || self.judgment_noise.is_some() || self.adversarial {
            *backend = BackendDescriptor::new(self.spec(BackendKind::Oracle)?);
        }
        match (self.env, &self.env_cmd) {
            (Some(EnvKind::Gridworld), _) => *env = EnvSpec::Gridworld,
            (Some(EnvKind::External), None) => return Err(Error::Config("--env external needs --env-cmd".into())),
            (_, Some(cmd)) => *env = EnvSpec::External { command: cmd.split_whitespace().map(str::to_string).collect() },
            (None, None) => {}
        }
        Ok(())
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Manifest whose first configuration, backend and environment are used as the base
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[command(flatten)]
    pub engine: EngineFlags,
    #[command(flatten)]
    pub backends: BackendFlags,
    /// Task kind (go_to, pick_up, go_to_after_pick_up, pick_up_then_go_to)
    #[arg(long, default_value = "go_to")]
    pub task: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Trace file: one decision per line, then the episode
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// JSON run manifest; without one, --tasks and --seeds describe the batch
    pub manifest: Option<PathBuf>,
    #[command(flatten)]
    pub engine: EngineFlags,
    #[command(flatten)]
    pub backends: BackendFlags,
    /// Comma-separated task kinds
    #[arg(long, value_delimiter = ',')]
    pub tasks: Vec<String>,
    /// Seeds 0..N for each task
    #[arg(long)]
    pub seeds: Option<u64>,
    /// Output directory for episodes.jsonl and summary files
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run episodes one at a time
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Trace JSONL written by `run` or `eval`
    pub input: PathBuf,
    /// Output directory for report.json and charts
    #[arg(long, default_value = "analysis")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    #[arg(long, default_value = "1.0", allow_hyphen_values = true)]
    pub alpha: String,
}

fn manifest_or_default(path: &Option<PathBuf>) -> Result<RunManifest> {
    match path {
        Some(p) => RunManifest::load(p),
        None => Ok(RunManifest::default()),
    }
}

fn cmd_run(a: &RunArgs, out: &mut dyn Write) -> Result<i32> {
    let mut m = manifest_or_default(&a.manifest)?;
    let mut cfg = m.all_configs().into_iter().next().unwrap_or_default();
    a.engine.apply(&mut cfg)?;
    a.backends.apply(&mut m.backend, &mut m.env)?;
    m.backend.validate()?;
    if m.env == EnvSpec::Gridworld {
        a.task.parse::<crate::gridworld::TaskKind>()?;
    }
    let mut env = m.env.open()?;
    let mut trace = match &a.out {
        Some(p) => Some(io::BufWriter::new(fs::File::create(p)?)),
        None => None,
    };
    let mut write_err: Option<io::Error> = None;
    let mut stream = |r: &crate::types::DecisionRecord| {
        if let Some(w) = trace.as_mut() {
            let line = TraceLine::Decision(r.clone()).to_json_line().map_err(io::Error::other);
            if let Err(e) = line.and_then(|l| w.write_all(l.as_bytes()).and_then(|_| w.flush())) {
                write_err.get_or_insert(e);
            }
        }
    };
    let result = run_episode(env.as_mut(), &cfg, &m.backend, &a.task, a.seed, Some(&mut stream))?;
    if let Some(e) = write_err {
        return Err(e.into());
    }
    if let Some(mut w) = trace {
        let bare = crate::types::EpisodeResult { records: Vec::new(), ..result.clone() };
        w.write_all(TraceLine::Episode(bare).to_json_line()?.as_bytes())?;
        w.flush()?;
    }
    writeln!(out, "goal: {}", result.history.goal)?;
    for s in &result.history.steps {
        writeln!(out, "> {}\n  {}", s.action, s.observation)?;
    }
    writeln!(out, "success={} reward={:.3} steps={} tokens={}", result.success, result.reward, result.steps_used, result.tokens_used)?;
    if let Some(f) = &result.failure {
        writeln!(out, "aborted: {f}")?;
    }
    Ok(if result.success { 0 } else { 1 })
}

fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<i32> {
    let mut m = manifest_or_default(&a.manifest)?;
    if a.manifest.is_none() && a.tasks.is_empty() && a.seeds.is_some() {
        return Err(Error::Config("--seeds needs --tasks or a manifest".into()));
    }
    if !a.tasks.is_empty() {
        let seeds = Seeds::Range { start: 0, count: a.seeds.unwrap_or(50) };
        m.tasks = a.tasks.iter().map(|k| TaskSet { kind: k.clone(), seeds: seeds.clone() }).collect();
    }
    if m.config.is_none() && m.configs.is_empty() && !m.tasks.is_empty() {
        m.config = Some(EngineConfig::default());
    }
    if a.engine.any() {
        for c in m.config.iter_mut().chain(m.configs.iter_mut()) {
            a.engine.apply(c)?;
        }
    }
    a.backends.apply(&mut m.backend, &mut m.env)?;
    if a.out.is_some() {
        m.output = a.out.clone();
    }
    if a.sequential {
        m.parallel = false;
    }
    let batch = run_batch(&m)?;
    write!(out, "{}", batch.summary)?;
    Ok(0)
}

fn cmd_analyze(a: &AnalyzeArgs, out: &mut dyn Write) -> Result<i32> {
    if !a.input.is_file() {
        return Err(Error::Config(format!("trace file {} not found", a.input.display())));
    }
    let trace = read_trace(&a.input)?;
    let report = analyze(&trace);
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    let charts = emit_plots(&report, &a.out)?;
    writeln!(out, "episodes={} skipped_lines={}", report.episodes, report.skipped_lines)?;
    for row in &report.correlation.rows {
        let fmt = |g: &crate::analysis::GroupStats| match (g.mean, g.std) {
            (Some(m), Some(s)) => format!("{m:+.3} ± {s:.3} (n={})", g.count),
            _ => "n/a".to_string(),
        };
        writeln!(out, "corr {:<14} success {}  failure {}", row.metric.as_str(), fmt(&row.success), fmt(&row.failure))?;
    }
    for row in &report.confidence.rows {
        let g = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.3}"));
        writeln!(
            out,
            "confidence {:<10} share={:.3} prior_gap={} critic_gap={} improved_gap={}",
            serde_json::to_value(row.case)?.as_str().unwrap_or_default(),
            row.proportion,
            g(row.mean_prior_gap),
            g(row.mean_critic_gap),
            g(row.mean_improved_gap)
        )?;
    }
    for row in &report.cost.rows {
        writeln!(out, "cost {} success_rate={:.3} mean_steps={:.2} mean_tokens={:.1}", row.label, row.success_rate, row.all.mean_steps.unwrap_or(0.0), row.all.mean_tokens.unwrap_or(0.0))?;
    }
    writeln!(out, "wrote {} and {} chart files to {}", "report.json", charts.len(), a.out.display())?;
    Ok(0)
}

fn cmd_demo(a: &DemoArgs, out: &mut dyn Write) -> Result<i32> {
    let alpha = parse_alpha(&a.alpha)?;
    let rec = demo::decide(alpha)?;
    writeln!(out, "goal: {}\nobservation: {}\nalpha: {alpha}\n", demo::GOAL, demo::OBSERVATION)?;
    write!(out, "{}", demo::table(&rec))?;
    let prior_best = crate::policy::argmax(&rec.candidates.iter().map(|c| c.prior_logprob).collect::<Vec<_>>());
    writeln!(out, "\nprior choice: {}\nchosen:       {}", rec.candidates[prior_best].action, rec.chosen().action)?;
    Ok(0)
}

/// Runs a parsed command, returning the process exit code.
pub fn execute(cli: &Cli, out: &mut dyn Write) -> i32 {
    let r = match &cli.command {
        Command::Run(a) => cmd_run(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Analyze(a) => cmd_analyze(a, out),
        Command::Demo(a) => cmd_demo(a, out),
        Command::EnvServer => serve(io::stdin().lock(), io::stdout().lock()).map(|_| 0),
    };
    match r {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_with<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(&cli, out),
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(args: &[&str]) -> (i32, String) {
        let mut out = Vec::new();
        let code = run_with(std::iter::once("lac").chain(args.iter().copied()), &mut out);
        (code, String::from_utf8(out).unwrap())
    }

    #[test]
    fn negative_alpha_is_a_config_error() {
        assert_eq!(run(&["run", "--alpha", "-1"]).0, 2);
        assert!(parse_alpha("-1").unwrap_err().to_string().contains("alpha must be ≥ 0"));
        assert_eq!(parse_alpha("critic_only").unwrap(), Alpha::CriticOnly);
        assert!(parse_alpha("NaN").is_err());
    }

    #[test]
    fn unknown_names_exit_two() {
        assert_eq!(run(&["run", "--backend", "gpt"]).0, 2);
        assert_eq!(run(&["run", "--env", "alfworld"]).0, 2);
        assert_eq!(run(&["run", "--task", "juggle"]).0, 2);
    }

    #[test]
    fn oracle_run_succeeds_and_writes_trace() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.jsonl");
        let (code, out) = run(&["run", "--env", "gridworld", "--backend", "oracle", "--mode", "full", "--seed", "7", "--out", p.to_str().unwrap()]);
        assert_eq!(code, 0, "{out}");
        assert!(out.contains("success=true"));
        let trace = crate::analysis::read_trace(&p).unwrap();
        assert_eq!(trace.skipped, 0);
        assert_eq!(trace.episodes.len(), 1);
        assert_eq!(trace.episodes[0].records.len(), trace.episodes[0].steps_used);
    }

    #[test]
    fn eval_prints_success_rate_and_rows() {
        let (code, out) = run(&["eval", "--tasks", "go_to", "--seeds", "3", "--sequential"]);
        assert_eq!(code, 0);
        assert!(out.contains("success_rate=1.000"), "{out}");
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("m.json");
        fs::write(&m, r#"{"tasks":[{"kind":"go_to","seeds":[1,2]}],"configs":[{"mode":"full"},{"mode":"no-critic"}]}"#).unwrap();
        let (code, out) = run(&["eval", m.to_str().unwrap()]);
        assert_eq!(code, 0);
        assert_eq!(out.lines().count(), 2);
        fs::write(&m, "{oops").unwrap();
        assert_eq!(run(&["eval", m.to_str().unwrap()]).0, 2);
    }

    #[test]
    fn analyze_missing_and_empty_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let out_dir = dir.path().join("out");
        assert_eq!(run(&["analyze", dir.path().join("none.jsonl").to_str().unwrap()]).0, 2);
        let empty = dir.path().join("empty.jsonl");
        fs::write(&empty, "").unwrap();
        let (code, out) = run(&["analyze", empty.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
        assert_eq!(code, 0);
        assert!(out.contains("episodes=0 skipped_lines=0"));
        let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
        assert_eq!(report["confidence"]["rows"].as_array().unwrap().len(), 4);
    }

    #[test]
    fn demo_flips_and_alpha_zero_does_not() {
        let (code, out) = run(&["demo"]);
        assert_eq!(code, 0);
        assert!(out.contains("prior choice: go to drawer 1"));
        assert!(out.contains("chosen:       take saltshaker 1 from cabinet 2"));
        assert_eq!(out, run(&["demo"]).1);
        let (_, zero) = run(&["demo", "--alpha", "0"]);
        assert!(zero.contains("chosen:       go to drawer 1"));
    }

    #[test]
    fn help_documents_exit_codes_and_hides_env_server() {
        use clap::CommandFactory;
        let help = Cli::command().render_long_help().to_string();
        assert!(help.contains("Exit codes"));
        assert!(!help.contains("env-server"));
    }
}
