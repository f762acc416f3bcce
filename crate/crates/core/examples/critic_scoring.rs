//! How the critic turns marker-token masses into a value, and why only the
//! ratio of the two masses matters.

use lac_core::critic::{belief_from_raw, logit, outcome_belief, q_value, q_variant_logpw, sigmoid, MarkerPair};
use lac_core::backend::{PromptMatch, ScriptedBackend};

fn main() -> lac_core::Result<()> {
    println!("{:>8} {:>8} {:>9} {:>9} {:>10}", "GOOD", "BAD", "p(good)", "Q", "ln GOOD");
    for (good, bad) in [(0.5, 0.1), (0.6, 0.4), (0.05, 0.01), (0.3, 0.3), (0.01, 0.9)] {
        let b = belief_from_raw(good, bad);
        println!("{good:>8.3} {bad:>8.3} {:>9.4} {:>+9.4} {:>+10.4}", b.p_success, q_value(&b), q_variant_logpw(&b));
    }

    let q = 1.25;
    println!("\nsigmoid({q}) = {:.6}, logit of that = {:.6}", sigmoid(q), logit(sigmoid(q)));

    // the same read, through a backend answering at the judgment position
    let backend = ScriptedBackend::new().on_next_tokens(PromptMatch::suffix("This step is "), &[("GOOD", 0.42), ("BAD", 0.14), ("UNKNOWN", 0.44)]);
    let b = outcome_belief("Critic:I opened the door. This step is ", &MarkerPair::default(), &backend)?;
    println!("backend read: p(good)={:.4} Q={:+.4}", b.p_success, q_value(&b));
    Ok(())
}
