// Vanishing-discount sweep: `α V_α(0)` approaches the average cost and the
// normalized values form a Cauchy sequence.

use ergodic_jump::hjb::{solve_ergodic, vanishing_discount};
use ergodic_jump::{parse_config, ControlledChain};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = parse_config(include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/jumporigin.toml")))?;
    let grid = cfg.grid()?;
    let chain = ControlledChain::from_problem(&cfg.problem, &grid, cfg.boundary)?;
    let rho = solve_ergodic(&chain, &cfg.solver.options)?.rho;
    let (_, table) = vanishing_discount(&chain, &cfg.solver.alphas(), &cfg.solver.options)?;
    println!("{:>12} {:>14} {:>12} {:>12}", "alpha", "alpha V(0)", "error", "cauchy");
    for s in &table.steps {
        println!(
            "{:>12.3e} {:>14.8} {:>12.3e} {:>12}",
            s.alpha,
            s.scaled_value,
            (s.scaled_value - rho).abs(),
            s.cauchy_diff.map_or("-".into(), |d| format!("{d:.3e}"))
        );
    }
    println!("ergodic rho = {rho:.10}");
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
