//! One gridworld episode with the oracle standing in for the model, printed
//! step by step.
//!
//! `cargo run --example gridworld_episode -- pick_up 3 0.5` picks the task,
//! seed and prior noise.

use lac_core::gridworld::{GridWorld, OracleConfig};
use lac_core::harness::{run_episode, BackendDescriptor, BackendSpec, EngineConfig};
use lac_core::types::DecisionRecord;

fn main() -> lac_core::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let task = args.first().map_or("go_to", String::as_str);
    let seed: u64 = args.get(1).map_or(0, |s| s.parse().expect("seed must be an integer"));
    let epsilon: f64 = args.get(2).map_or(0.3, |s| s.parse().expect("epsilon must be a number"));

    let mut backends = BackendDescriptor::new(BackendSpec::Oracle(OracleConfig::noisy_prior(epsilon)));
    backends.critic = Some(BackendSpec::Oracle(OracleConfig::exact()));
    backends.world_model = backends.critic.clone();

    let mut show = |r: &DecisionRecord| {
        let c = r.chosen();
        let prior = r.candidates.iter().fold(&r.candidates[0], |b, c| if c.prior_logprob > b.prior_logprob { c } else { b });
        let note = if prior.action != c.action { format!("  (prior wanted {:?})", prior.action) } else { String::new() };
        println!("step {:>2}: {:<10} q={:+.2}{note}", r.step_index, c.action, c.q_value);
    };
    let mut env = GridWorld::new();
    let e = run_episode(&mut env, &EngineConfig::default(), &backends, task, seed, Some(&mut show))?;
    println!("\ngoal: {}", e.history.goal);
    println!("success={} steps={} tokens={}", e.success, e.steps_used, e.tokens_used);
    Ok(())
}
