// Foster-Lyapunov checks: `|x|²` for the jump-to-origin problem, the
// quadratic family candidate, and the uniform check over all controls.

use ergodic_jump::lyapunov::{quadratic_candidate, verify_drift, verify_uniform_drift};
use ergodic_jump::{parse_config, ControlledChain, MarkovPolicy};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let texts = [
        include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/jumporigin.toml")),
        include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/lyapunov_family.toml")),
        include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/uniform_stability.toml")),
    ];
    for text in texts {
        let cfg = parse_config(text)?;
        let grid = cfg.grid()?;
        let l = cfg.lyapunov.clone().ok_or("missing [lyapunov]")?;
        let candidate: Vec<f64> = quadratic_candidate(&grid, &l.matrix, l.theta)?
            .into_iter()
            .map(|v| l.scale * v)
            .collect();
        let report = if l.uniform {
            verify_uniform_drift(&cfg.problem, &grid, &candidate, &vec![1.0; grid.len()])?
        } else {
            let chain = ControlledChain::from_problem(&cfg.problem, &grid, cfg.boundary)?;
            let policy = MarkovPolicy::constant(grid.len(), 0);
            verify_drift(&cfg.problem, &grid, &policy, &candidate, &chain.policy_cost(&policy))?
        };
        println!(
            "dim {} theta {}: satisfied = {}  kappa0 = {:.4}  ball radius = {:.4}  far-field margin = {:.4}",
            grid.dim(),
            l.theta,
            report.satisfied,
            report.kappa0,
            report.ball_radius,
            report.worst_margin
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
