//! Runs a few episodes, writes their trace, reads it back and prints the
//! analysis tables. Plots land in the directory given as the argument.
//!
//! `cargo run --example trace_analysis -- analysis/`

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use lac_core::analysis::{analyze, emit_plots, read_trace};
use lac_core::gridworld::{GridWorld, OracleConfig, OraclePrior};
use lac_core::harness::{run_episode, write_trace, BackendDescriptor, BackendSpec, EngineConfig};
use lac_core::types::{Alpha, Mode};

fn main() -> anyhow::Result<()> {
    let out_dir = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("lac-trace-analysis"), PathBuf::from);
    std::fs::create_dir_all(&out_dir)?;
    let trace_path = out_dir.join("episodes.jsonl");
    let mut w = BufWriter::new(File::create(&trace_path)?);

    let exact = BackendDescriptor::default();
    let mut failing = BackendDescriptor::new(BackendSpec::Oracle(OracleConfig { budget: Some(30), ..OracleConfig::exact() }));
    failing.actor = Some(BackendSpec::Oracle(OracleConfig { prior: OraclePrior::Adversarial, ..OracleConfig::exact() }));
    let runs = [
        (EngineConfig::default(), &exact),
        (EngineConfig::default().with_mode(Mode::NoCritic), &exact),
        (EngineConfig { label: Some("forced-failure".into()), ..EngineConfig::default().with_alpha(Alpha::Finite(0.0)) }, &failing),
    ];
    for (cfg, backends) in runs {
        for seed in 0..5 {
            let e = run_episode(&mut GridWorld::new(), &cfg, backends, "go_to", seed, None)?;
            write_trace(&mut w, &e)?;
        }
    }
    drop(w);

    let report = analyze(&read_trace(&trace_path)?);
    println!("{} episodes", report.episodes);
    for row in &report.correlation.rows {
        println!("r({}, t): success {:?}  failure {:?}", row.metric.as_str(), row.success.mean, row.failure.mean);
    }
    for row in &report.cost.rows {
        println!("{}: success_rate={:.2} mean tokens {:?}", row.label, row.success_rate, row.all.mean_tokens);
    }
    for p in emit_plots(&report, &out_dir)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}
