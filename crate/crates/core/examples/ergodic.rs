// Ergodic HJB on all four bundled problems.

use ergodic_jump::hjb::{hjb_residual, solve_ergodic};
use ergodic_jump::{parse_config, ControlledChain};

const CONFIGS: [(&str, &str); 4] = [
    ("jumporigin", include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/jumporigin.toml"))),
    ("lyapunov_family", include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/lyapunov_family.toml"))),
    ("steering", include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/steering.toml"))),
    ("uniform_stability", include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/uniform_stability.toml"))),
];

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    for (name, text) in CONFIGS {
        let cfg = parse_config(text)?;
        let grid = cfg.grid()?;
        let chain = ControlledChain::from_problem(&cfg.problem, &grid, cfg.boundary)?;
        let sol = solve_ergodic(&chain, &cfg.solver.options)?;
        let residual = hjb_residual(&chain, &sol.values, sol.rho)?;
        println!(
            "{name:<18} nodes = {:<4} rho = {:.10}  iterations = {}  residual = {residual:.1e}",
            grid.len(),
            sol.rho,
            sol.iterations
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
