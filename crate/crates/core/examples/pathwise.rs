// Time-average cost of the optimal steering policy against an always-push-
// right policy and an off-grid feedback law.

use ergodic_jump::hjb::solve_ergodic;
use ergodic_jump::sim::{pathwise_comparison, GridPolicy, SimConfig};
use ergodic_jump::{parse_config, ControlledChain, MarkovPolicy};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = parse_config(include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/steering.toml")))?;
    let grid = cfg.grid()?;
    let chain = ControlledChain::from_problem(&cfg.problem, &grid, cfg.boundary)?;
    let sol = solve_ergodic(&chain, &cfg.solver.options)?;
    let optimal = GridPolicy::new(grid.clone(), sol.policy)?;
    let config = SimConfig {
        horizon: 500.0,
        ..cfg.sim.clone()
    };
    let push_right = GridPolicy::new(grid.clone(), MarkovPolicy::constant(grid.len(), 1))?;
    let report = pathwise_comparison(&cfg.problem, &grid, &optimal, &push_right, Some(sol.rho), &config)?;
    print!("{}", report.to_key_values());
    let bang_bang = |_t: f64, x: &[f64]| usize::from(x[0] < 0.5);
    let report = pathwise_comparison(&cfg.problem, &grid, &optimal, &bang_bang, Some(sol.rho), &config)?;
    println!(
        "switch at 0.5: mean = {:.4} +/- {:.4}, ordering holds = {}",
        report.other.mean, report.other.std_error, report.ordering_holds
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
