// Estimate the ergodic value at a few states from costs accumulated until
// the process enters a small ball around the origin.

use ergodic_jump::hjb::solve_ergodic;
use ergodic_jump::sim::{estimate_value_via_hitting, GridPolicy, SimConfig};
use ergodic_jump::{parse_config, ControlledChain};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = parse_config(include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/jumporigin.toml")))?;
    let grid = cfg.grid()?;
    let chain = ControlledChain::from_problem(&cfg.problem, &grid, cfg.boundary)?;
    let sol = solve_ergodic(&chain, &cfg.solver.options)?;
    let controller = GridPolicy::new(grid.clone(), sol.policy.clone())?;
    let config = SimConfig {
        replications: 200,
        horizon: 100.0,
        ..cfg.sim.clone()
    };
    let radius = 2.0 * grid.max_spacing();
    for x in [1.0, 2.0, 3.0] {
        let est = estimate_value_via_hitting(&cfg.problem, &controller, &[x], radius, sol.rho, &config)?;
        let (lo, hi) = est.confidence_interval();
        println!(
            "x = {x}: V = {:.4}  estimate = {:.4}  95% CI = [{lo:.4}, {hi:.4}]",
            sol.values[grid.nearest_node(&[x])],
            est.mean
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
