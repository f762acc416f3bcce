//! One decision in a kitchen: the prior wants to check the drawer, the
//! critic looks one step ahead and prefers grabbing the saltshaker.
//!
//! `cargo run --example saltshaker_demo -- 0.5` sets alpha.

use lac_core::demo::{self, table};
use lac_core::types::Alpha;

fn main() -> lac_core::Result<()> {
    let alpha = std::env::args().nth(1).map_or(1.0, |a| a.parse().expect("alpha must be a number"));
    println!("goal: {}\n", demo::GOAL);
    for a in [0.0, alpha] {
        let rec = demo::decide(Alpha::Finite(a))?;
        println!("alpha = {a}");
        print!("{}", table(&rec));
        println!();
    }
    Ok(())
}
