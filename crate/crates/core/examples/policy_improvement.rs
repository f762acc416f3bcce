//! Closed-form policy improvement on a hand-made candidate set, swept over
//! alpha.

use lac_core::policy::{improve, objective_value, ImprovementInput};
use lac_core::types::Alpha;

fn main() -> lac_core::Result<()> {
    let actions = ["go forward", "turn left", "pick up"];
    let prior = [0.6f64, 0.3, 0.1];
    let q = [-1.0, 0.5, 2.0];

    println!("{:>11}  {:>10}  {:>10}  {:>10}  {:>9}  chosen", "alpha", actions[0], actions[1], actions[2], "objective");
    for alpha in [Alpha::Finite(0.0), Alpha::Finite(0.5), Alpha::Finite(1.0), Alpha::Finite(3.0), Alpha::CriticOnly] {
        let inp = ImprovementInput::new(prior.iter().map(|p| p.ln()).collect(), q.to_vec(), alpha)?;
        let dist = improve(&inp)?;
        let obj = objective_value(&dist.candidate_probs, &inp)?;
        let p = &dist.candidate_probs;
        println!("{:>11}  {:>10.4}  {:>10.4}  {:>10.4}  {:>9.4}  {}", alpha.to_string(), p[0], p[1], p[2], obj, actions[dist.chosen_index]);
    }
    Ok(())
}
