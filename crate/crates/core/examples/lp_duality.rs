// Occupation-measure LP on the uniform-stability problem: its value, its
// dual value field and the gap to the HJB solution.

use ergodic_jump::hjb::solve_ergodic;
use ergodic_jump::lp::{assemble_lp, extract_duals, solve_lp};
use ergodic_jump::{parse_config, ControlledChain};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = parse_config(include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/uniform_stability.toml")))?;
    let grid = cfg.grid()?;
    let chain = ControlledChain::from_problem(&cfg.problem, &grid, cfg.boundary)?;
    let hjb = solve_ergodic(&chain, &cfg.solver.options)?;
    let instance = assemble_lp(&chain)?;
    let lp = solve_lp(&instance)?;
    let duals = extract_duals(&instance, &lp, &chain)?;
    let field_gap = duals
        .value_field
        .iter()
        .zip(&hjb.values)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!("LP: {} rows, {} variables", instance.num_rows(), instance.num_variables());
    println!("rho (HJB)  = {:.12}", hjb.rho);
    println!("rho (LP)   = {:.12}", lp.rho_star);
    println!("rho (dual) = {:.12}", duals.rho_dual);
    println!("|rho_HJB - rho_LP| = {:.2e}", (hjb.rho - lp.rho_star).abs());
    println!("certificate margin = {:.2e}", duals.certificate_margin);
    println!("max |h - V| = {field_gap:.2e} (degenerate basis: {})", duals.degenerate_basis);
    println!("support of the optimal occupation measure: {} pairs", lp.occupation.support_size(1e-12));
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
