//! Drives an environment living in another process over the line protocol.
//! The child is this same binary started with `serve`.

use std::io;

use lac_core::gridworld::{serve, ExternalEnv};
use lac_core::harness::{run_episode, EngineConfig, RoleBackends};
use lac_core::backend::{PromptMatch, ScriptedBackend};

fn main() -> lac_core::Result<()> {
    if std::env::args().nth(1).as_deref() == Some("serve") {
        return serve(io::stdin().lock(), io::stdout().lock());
    }
    let me = std::env::current_exe()?.to_string_lossy().into_owned();
    let mut env = ExternalEnv::spawn(&me, &["serve".to_string()])?;

    // the oracle needs the room itself, so use a fixed script instead
    let walker = ScriptedBackend::new()
        .default_text("go forward")
        .on_next_tokens(PromptMatch::suffix("This step is "), &[("GOOD", 0.5), ("BAD", 0.5)]);
    let cfg = EngineConfig { horizon: Some(6), ..EngineConfig::default() };
    let e = run_episode(&mut env, &cfg, &RoleBackends::shared(std::sync::Arc::new(walker)), "go_to", 4, None)?;
    println!("goal: {}", e.history.goal);
    for s in &e.history.steps {
        println!("> {}\n{}", s.action, s.observation);
    }
    println!("success={} steps={}", e.success, e.steps_used);
    Ok(())
}
