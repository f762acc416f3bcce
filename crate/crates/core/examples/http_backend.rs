//! One decision against a completions endpoint that returns token
//! logprobs. Reads `LAC_BACKEND_URL`, `LAC_MODEL` and `LAC_API_KEY`; does
//! nothing when the URL is unset.

use lac_core::backend::HttpBackend;
use lac_core::demo::{table, Scene};
use lac_core::harness::{decide_step, EngineConfig, Roles};
use lac_core::backend::HttpConfig;

fn main() -> lac_core::Result<()> {
    let Some(cfg) = HttpConfig::from_env() else {
        eprintln!("set LAC_BACKEND_URL (and LAC_MODEL) to run this example");
        return Ok(());
    };
    let backend = HttpBackend::new(cfg)?;
    let history = Scene::saltshaker().history();
    let (action, rec) = decide_step(&history, &EngineConfig::default(), Roles::shared(&backend))?;
    print!("{}", table(&rec));
    println!("action: {action}");
    Ok(())
}
