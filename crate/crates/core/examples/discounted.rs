// Discounted HJB on the steering problem for a few discount rates.

use ergodic_jump::hjb::solve_discounted;
use ergodic_jump::{parse_config, ControlledChain};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = parse_config(include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/steering.toml")))?;
    let grid = cfg.grid()?;
    let chain = ControlledChain::from_problem(&cfg.problem, &grid, cfg.boundary)?;
    for alpha in [0.5, 0.1, 0.01] {
        let sol = solve_discounted(&chain, alpha, &cfg.solver.options)?;
        let switches = sol.policy.as_slice().windows(2).filter(|w| w[0] != w[1]).count();
        println!(
            "alpha = {alpha:<5} alpha V(0) = {:.6}  policy iterations = {}  control switches = {switches}",
            sol.rho, sol.iterations
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
