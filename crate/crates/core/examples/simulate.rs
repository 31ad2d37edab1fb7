// Simulate the jump-to-origin process and compare its long-run average
// cost with the grid solution.

use ergodic_jump::hjb::solve_ergodic;
use ergodic_jump::sim::{ergodic_cost_estimate, ks_exponential, trace_path, GridPolicy, SimConfig};
use ergodic_jump::{parse_config, ControlledChain};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = parse_config(include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/jumporigin.toml")))?;
    let grid = cfg.grid()?;
    let chain = ControlledChain::from_problem(&cfg.problem, &grid, cfg.boundary)?;
    let sol = solve_ergodic(&chain, &cfg.solver.options)?;
    let controller = GridPolicy::new(grid.clone(), sol.policy)?;
    let config = SimConfig {
        horizon: 200.0,
        ..cfg.sim.clone()
    };
    let est = ergodic_cost_estimate(&cfg.problem, &controller, &config)?;
    println!("grid rho = {:.5}", sol.rho);
    println!("simulated = {:.5} +/- {:.5} (1 SE, {} replications)", est.mean, est.std_error, config.replications);
    let path = trace_path(&cfg.problem, &controller, &[0.0], &config)?;
    let gaps = path.inter_jump_times();
    let (d, p) = ks_exponential(&gaps, 1.0);
    println!("{} jumps on one path; KS vs Exp(1): D = {d:.4}, p = {p:.3}", gaps.len());
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
