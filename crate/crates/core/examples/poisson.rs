// Poisson equation for every constant policy of the steering problem,
// against the average cost of its invariant measure.

use ergodic_jump::hjb::{solve_ergodic, solve_poisson};
use ergodic_jump::measures::evaluate_policy;
use ergodic_jump::{parse_config, ControlledChain, MarkovPolicy};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = parse_config(include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/steering.toml")))?;
    let grid = cfg.grid()?;
    let chain = ControlledChain::from_problem(&cfg.problem, &grid, cfg.boundary)?;
    let optimal = solve_ergodic(&chain, &cfg.solver.options)?.policy;
    let mut policies: Vec<(String, MarkovPolicy)> = (0..chain.controls())
        .map(|z| (format!("constant {z}"), MarkovPolicy::constant(chain.nodes(), z)))
        .collect();
    policies.push(("optimal".into(), optimal));
    for (name, policy) in &policies {
        let beta = solve_poisson(&chain, policy)?.rho;
        let (_, _, cost) = evaluate_policy(&chain, policy)?;
        println!("{name:<11} beta = {beta:.10}  mu(c) = {cost:.10}  gap = {:.1e}", (beta - cost).abs());
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
