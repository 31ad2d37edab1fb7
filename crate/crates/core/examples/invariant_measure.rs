// Invariant measure of the optimal steering policy, checked by its
// stationarity residual and printed as a coarse histogram.

use ergodic_jump::hjb::solve_ergodic;
use ergodic_jump::measures::{invariant_measure, stationarity_residual};
use ergodic_jump::{parse_config, ControlledChain};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = parse_config(include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/steering.toml")))?;
    let grid = cfg.grid()?;
    let chain = ControlledChain::from_problem(&cfg.problem, &grid, cfg.boundary)?;
    let policy = solve_ergodic(&chain, &cfg.solver.options)?.policy;
    let generator = chain.policy_generator(&policy)?;
    let mu = invariant_measure(&generator)?;
    println!("stationarity residual = {:.2e}", stationarity_residual(&mu, &generator));
    println!("strictly positive = {}", mu.is_strictly_positive());
    for i in (0..grid.len()).step_by(2) {
        let bar = "#".repeat((mu.weights[i] * 400.0).round() as usize);
        println!("{:>6.2} z={} {bar}", grid.coordinates(i)[0], policy.control_at(i));
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
