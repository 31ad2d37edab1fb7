// Discretize the generator of the jump-to-origin problem and apply it to
// `f(x) = x²`, comparing with `A f(x) = 2 − 3x²`.

use ergodic_jump::generator::{discretize_generator, Truncation};
use ergodic_jump::parse_config;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = parse_config(include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/jumporigin.toml")))?;
    let grid = cfg.grid()?;
    let q = discretize_generator(&cfg.problem, &grid, 0, Truncation::Reflecting)?;
    let f: Vec<f64> = (0..grid.len()).map(|i| grid.coordinates(i)[0].powi(2)).collect();
    let af = q.apply(&f)?;
    println!("{:>8} {:>12} {:>12}", "x", "Q f", "A f");
    for i in grid.interior_nodes().step_by(4) {
        let x = grid.coordinates(i)[0];
        println!("{x:>8.3} {:>12.6} {:>12.6}", af[i], 2.0 - 3.0 * x * x);
    }
    let worst = (0..q.len()).map(|i| q.row_sum(i).abs()).fold(0.0, f64::max);
    println!("largest |row sum| = {worst:.2e}");
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
