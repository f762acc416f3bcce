//! Ablation sweep over decision modes on the gridworld, with a noisy prior
//! and an exact critic. Writes summary files when given an output directory.
//!
//! `cargo run --release --example ablation_batch -- 40 out/`

use std::path::PathBuf;

use lac_core::gridworld::OracleConfig;
use lac_core::harness::{run_batch, BackendDescriptor, BackendSpec, EngineConfig, RunManifest, Seeds, TaskSet};
use lac_core::types::Mode;

fn main() -> lac_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let count: u64 = args.next().map_or(20, |s| s.parse().expect("seed count must be an integer"));
    let output = args.next().map(PathBuf::from);

    let mut backend = BackendDescriptor::new(BackendSpec::Oracle(OracleConfig::noisy_prior(0.5)));
    backend.critic = Some(BackendSpec::Oracle(OracleConfig::exact()));
    backend.world_model = backend.critic.clone();
    let manifest = RunManifest {
        tasks: ["go_to", "pick_up"].iter().map(|k| TaskSet { kind: k.to_string(), seeds: Seeds::Range { start: 0, count } }).collect(),
        configs: [Mode::Full, Mode::NoCritic, Mode::CriticOnly, Mode::NoRollout, Mode::NoReflection, Mode::QVariant, Mode::DirectEval]
            .into_iter()
            .map(|m| EngineConfig::default().with_mode(m))
            .collect(),
        backend,
        output,
        ..RunManifest::default()
    };
    let out = run_batch(&manifest)?;
    print!("{}", out.summary);
    Ok(())
}
