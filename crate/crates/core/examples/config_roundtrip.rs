// Parse a problem file, render it back and parse the rendering again.

use ergodic_jump::config::{render, render_config};
use ergodic_jump::parse_config;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = parse_config(include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/uniform_stability.toml")))?;
    let text = render_config(&cfg)?;
    println!("{text}");
    let again = parse_config(&text)?;
    println!("round trip preserves the problem: {}", render(&again.problem)? == render(&cfg.problem)?);
    match parse_config("[problem]\ndim = 1\nradius = 2.0\ncontrols = [[0.0]]\nsped = 3\n") {
        Err(e) => println!("misspelled key: {e}"),
        Ok(_) => println!("misspelled key accepted"),
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
