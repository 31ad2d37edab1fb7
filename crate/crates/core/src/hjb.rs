//! Discounted and ergodic HJB equations on a controlled chain.
//!
//! * discounted: `min_z [Q_z V + c_z] = α V` on active nodes, with the
//!   boundary and exterior held at a prescribed value;
//! * ergodic: `min_z [Q_z V + c_z] = ρ` on a conservative chain, with
//!   `V(reference) = 0`;
//! * Poisson: `Q_v V + c_v = β` for a fixed policy.
//!
//! Both HJB equations are solved by policy iteration. The improvement step
//! breaks near-ties toward the lowest control index, and the ergodic solver
//! stops exactly when [`improve_policy`] reproduces the current policy.

use std::collections::HashSet;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::chain::{ControlledChain, MarkovPolicy};
use crate::dense::lu_solve;
use crate::error::{Error, Result};
use crate::measures::recurrent_classes;

#[derive(Clone, Debug, PartialEq)]
pub struct SolverOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Starting value field; the first policy is its greedy policy.
    pub initial_values: Option<Vec<f64>>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tolerance: 1e-9,
            max_iterations: 500,
            initial_values: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValueSolution {
    pub values: Vec<f64>,
    /// Average cost; for discounted solutions `α V(reference)`.
    pub rho: f64,
    pub policy: MarkovPolicy,
    pub residual: f64,
    /// Discount rate, 0 for ergodic solutions.
    pub alpha: f64,
    pub reference: usize,
    pub min_value: f64,
    pub iterations: usize,
}

/// One row of the vanishing-discount table.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscountStep {
    pub alpha: f64,
    /// `α V_α(reference)`.
    pub scaled_value: f64,
    /// `max |W_α − W_{α'}|` for `W = V − V(reference)` against the previous
    /// row; `None` on the first row.
    pub cauchy_diff: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscountTable {
    pub steps: Vec<DiscountStep>,
}

impl DiscountTable {
    pub fn to_csv(&self) -> String {
        use crate::io::fmt_f64;
        let mut out = String::from("alpha,alpha_v_ref,cauchy_diff\n");
        for s in &self.steps {
            out.push_str(&format!(
                "{},{},{}\n",
                fmt_f64(s.alpha),
                fmt_f64(s.scaled_value),
                s.cauchy_diff.map(fmt_f64).unwrap_or_default()
            ));
        }
        out
    }
}

/// Geometric sequence `2^{-1}, …, 2^{-k}`.
pub fn default_alphas(count: usize) -> Vec<f64> {
    (1..=count).map(|k| 0.5_f64.powi(k as i32)).collect()
}

/// Tie tolerance for comparing Hamiltonian terms at a node.
fn tie_tolerance(chain: &ControlledChain, node: usize, values: &[f64]) -> f64 {
    let mut scale = 0.0_f64;
    for z in 0..chain.controls() {
        let g = chain.generator(z);
        let s: f64 = g.row(node).iter().map(|&(j, q)| (q * values[j]).abs()).sum();
        scale = scale.max(s + chain.cost(node, z).abs() + (g.exterior_mass()[node] * chain.exterior_value()).abs());
    }
    1e-12 * scale.max(1e-300)
}

fn greedy_control(chain: &ControlledChain, node: usize, values: &[f64]) -> (usize, f64) {
    let terms: Vec<f64> = (0..chain.controls())
        .map(|z| chain.hamiltonian_term(node, z, values))
        .collect();
    let best = terms.iter().copied().fold(f64::INFINITY, f64::min);
    let tol = tie_tolerance(chain, node, values);
    let z = terms.iter().position(|&t| t <= best + tol).unwrap_or(0);
    (z, best)
}

/// Greedy policy `argmin_z [Q_z V + c_z]`, lowest index among near-ties.
/// Inactive nodes take the cheapest control.
pub fn improve_policy(chain: &ControlledChain, values: &[f64]) -> Result<MarkovPolicy> {
    if values.len() != chain.nodes() {
        return Err(Error::DimensionMismatch {
            expected: chain.nodes(),
            got: values.len(),
        });
    }
    let policy = (0..chain.nodes())
        .map(|x| {
            if chain.is_active(x) {
                greedy_control(chain, x, values).0
            } else {
                (0..chain.controls())
                    .min_by(|&a, &b| chain.cost(x, a).total_cmp(&chain.cost(x, b)))
                    .unwrap_or(0)
            }
        })
        .collect();
    Ok(MarkovPolicy(policy))
}

/// `sup_x |min_z [Q_z V + c_z](x) − ρ|` over active nodes.
pub fn hjb_residual(chain: &ControlledChain, values: &[f64], rho: f64) -> Result<f64> {
    if values.len() != chain.nodes() {
        return Err(Error::DimensionMismatch {
            expected: chain.nodes(),
            got: values.len(),
        });
    }
    Ok(chain
        .active_nodes()
        .into_iter()
        .map(|x| (greedy_control(chain, x, values).1 - rho).abs())
        .fold(0.0, f64::max))
}

fn discounted_residual(chain: &ControlledChain, values: &[f64], alpha: f64) -> f64 {
    chain
        .active_nodes()
        .into_iter()
        .map(|x| (greedy_control(chain, x, values).1 - alpha * values[x]).abs())
        .fold(0.0, f64::max)
}

/// Scale against which residuals are judged: rates times values plus costs.
fn residual_scale(chain: &ControlledChain, values: &[f64]) -> f64 {
    let vmax = values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let qmax = (0..chain.controls())
        .flat_map(|z| (0..chain.nodes()).map(move |x| (z, x)))
        .map(|(z, x)| chain.generator(z).diagonal(x).abs())
        .fold(0.0_f64, f64::max);
    let cmax = (0..chain.nodes())
        .flat_map(|x| (0..chain.controls()).map(move |z| (x, z)))
        .map(|(x, z)| chain.cost(x, z))
        .fold(0.0_f64, f64::max);
    1.0 + qmax * vmax + cmax
}

/// Value of a fixed policy in the discounted problem.
fn evaluate_discounted(chain: &ControlledChain, policy: &MarkovPolicy, alpha: f64) -> Result<Vec<f64>> {
    let n = chain.nodes();
    let ext = chain.exterior_value();
    let active = chain.active_nodes();
    let mut slot = vec![usize::MAX; n];
    for (k, &x) in active.iter().enumerate() {
        slot[x] = k;
    }
    let m = active.len();
    let mut a = DMatrix::zeros(m, m);
    let mut b = vec![0.0; m];
    for (k, &x) in active.iter().enumerate() {
        let z = policy.control_at(x);
        let g = chain.generator(z);
        a[(k, k)] += alpha;
        b[k] = chain.cost(x, z) + g.exterior_mass()[x] * ext;
        for &(y, q) in g.row(x) {
            if chain.is_active(y) {
                a[(k, slot[y])] -= q;
            } else {
                b[k] += q * ext;
            }
        }
    }
    let sol = lu_solve(a, b, "discounted policy evaluation")?;
    let mut values = vec![ext; n];
    for (k, &x) in active.iter().enumerate() {
        values[x] = sol[k];
    }
    Ok(values)
}

/// Policy iteration for `min_z [Q_z V + c_z] = α V`.
pub fn solve_discounted(chain: &ControlledChain, alpha: f64, options: &SolverOptions) -> Result<ValueSolution> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidInput(format!("discount {alpha} outside (0, 1]")));
    }
    let init = initial_field(chain, options)?;
    let mut policy = improve_policy(chain, &init)?;
    let mut seen = HashSet::new();
    for iteration in 1..=options.max_iterations {
        let values = evaluate_discounted(chain, &policy, alpha)?;
        let next = improve_policy(chain, &values)?;
        seen.insert(policy.clone());
        if next == policy || seen.contains(&next) {
            let residual = discounted_residual(chain, &values, alpha);
            if residual > options.tolerance * residual_scale(chain, &values) {
                return Err(Error::NonConvergence {
                    iterations: iteration,
                    residual,
                });
            }
            let reference = chain.reference();
            return Ok(ValueSolution {
                rho: alpha * values[reference],
                min_value: values.iter().copied().fold(f64::INFINITY, f64::min),
                values,
                policy,
                residual,
                alpha,
                reference,
                iterations: iteration,
            });
        }
        policy = next;
    }
    Err(Error::NonConvergence {
        iterations: options.max_iterations,
        residual: f64::NAN,
    })
}

fn initial_field(chain: &ControlledChain, options: &SolverOptions) -> Result<Vec<f64>> {
    match &options.initial_values {
        Some(v) if v.len() != chain.nodes() => Err(Error::DimensionMismatch {
            expected: chain.nodes(),
            got: v.len(),
        }),
        Some(v) => Ok(v.clone()),
        None => Ok((0..chain.nodes())
            .map(|x| if chain.is_active(x) { 0.0 } else { chain.exterior_value() })
            .collect()),
    }
}

/// Discounted solves along a strictly decreasing `α` sequence; the last one
/// gives the ergodic estimate `(V_α − V_α(ref), α V_α(ref))`.
pub fn vanishing_discount(
    chain: &ControlledChain,
    alphas: &[f64],
    options: &SolverOptions,
) -> Result<(ValueSolution, DiscountTable)> {
    if alphas.is_empty() {
        return Err(Error::InvalidInput("empty discount sequence".into()));
    }
    if alphas.iter().any(|&a| !(a > 0.0 && a < 1.0)) || alphas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidInput(
            "discounts must be strictly decreasing in (0, 1)".into(),
        ));
    }
    let solutions = alphas
        .par_iter()
        .map(|&alpha| solve_discounted(chain, alpha, options))
        .collect::<Result<Vec<_>>>()?;
    let reference = chain.reference();
    let normalized: Vec<Vec<f64>> = solutions
        .iter()
        .map(|s| s.values.iter().map(|v| v - s.values[reference]).collect())
        .collect();
    let mut steps = Vec::with_capacity(alphas.len());
    for (k, s) in solutions.iter().enumerate() {
        let cauchy_diff = (k > 0).then(|| {
            normalized[k]
                .iter()
                .zip(&normalized[k - 1])
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        });
        steps.push(DiscountStep {
            alpha: s.alpha,
            scaled_value: s.rho,
            cauchy_diff,
        });
    }
    if steps.len() >= 3 {
        let last = steps[steps.len() - 1].cauchy_diff.unwrap_or(0.0);
        let previous = steps[steps.len() - 2].cauchy_diff.unwrap_or(0.0);
        let w = normalized.last().map(|v| v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))).unwrap_or(0.0);
        if last > previous * (1.0 + 1e-6) && last > 1e-8 * (1.0 + w) {
            return Err(Error::NonCauchy { previous, last });
        }
    }
    let last = solutions.last().expect("nonempty");
    let values = normalized.last().expect("nonempty").clone();
    let rho = last.rho;
    let residual = hjb_residual(chain, &values, rho)?;
    Ok((
        ValueSolution {
            min_value: values.iter().copied().fold(f64::INFINITY, f64::min),
            values,
            rho,
            policy: last.policy.clone(),
            residual,
            alpha: 0.0,
            reference,
            iterations: solutions.iter().map(|s| s.iterations).sum(),
        },
        DiscountTable { steps },
    ))
}

fn require_conservative(chain: &ControlledChain) -> Result<()> {
    for z in 0..chain.controls() {
        let g = chain.generator(z);
        for row in 0..chain.nodes() {
            let row_sum = g.row_sum(row);
            if !g.is_active(row) || g.exterior_mass()[row] > 0.0 || row_sum < -1e-12 * (1.0 + g.diagonal(row).abs()) {
                return Err(Error::NotConservative { row, row_sum });
            }
        }
    }
    Ok(())
}

fn require_unichain(chain: &ControlledChain, policy: &MarkovPolicy) -> Result<()> {
    let rates = chain.policy_rates(policy);
    let classes = recurrent_classes(&rates, &vec![true; chain.nodes()]);
    if classes.len() != 1 {
        return Err(Error::MultichainDetected {
            classes: classes.len(),
        });
    }
    Ok(())
}

/// `(V, β)` with `Q_v V + c_v = β` and `V(reference) = 0`: the column of
/// the reference node is replaced by the unknown `β`.
fn poisson_system(chain: &ControlledChain, policy: &MarkovPolicy) -> Result<(Vec<f64>, f64)> {
    let n = chain.nodes();
    let reference = chain.reference();
    let mut a = DMatrix::zeros(n, n);
    let mut b = vec![0.0; n];
    for x in 0..n {
        let z = policy.control_at(x);
        for &(y, q) in chain.generator(z).row(x) {
            if y != reference {
                a[(x, y)] = q;
            }
        }
        a[(x, reference)] = -1.0;
        b[x] = -chain.cost(x, z);
    }
    let mut sol = lu_solve(a, b, "Poisson equation")?;
    let beta = sol[reference];
    sol[reference] = 0.0;
    Ok((sol, beta))
}

/// Solve the Poisson equation `Q_v V + c_v = β` for a fixed policy.
pub fn solve_poisson(chain: &ControlledChain, policy: &MarkovPolicy) -> Result<ValueSolution> {
    policy.validate(chain.nodes(), chain.controls())?;
    require_conservative(chain)?;
    require_unichain(chain, policy)?;
    let (values, beta) = poisson_system(chain, policy)?;
    let rates = chain.policy_rates(policy);
    let cost = chain.policy_cost(policy);
    let residual = (0..chain.nodes())
        .map(|x| (rates.row_dot(x, &values) + cost[x] - beta).abs())
        .fold(0.0, f64::max);
    Ok(ValueSolution {
        min_value: values.iter().copied().fold(f64::INFINITY, f64::min),
        values,
        rho: beta,
        policy: policy.clone(),
        residual,
        alpha: 0.0,
        reference: chain.reference(),
        iterations: 1,
    })
}

/// Average-cost policy iteration for `min_z [Q_z V + c_z] = ρ`.
pub fn solve_ergodic(chain: &ControlledChain, options: &SolverOptions) -> Result<ValueSolution> {
    require_conservative(chain)?;
    let init = initial_field(chain, options)?;
    let mut policy = improve_policy(chain, &init)?;
    let mut seen = HashSet::new();
    for iteration in 1..=options.max_iterations {
        require_unichain(chain, &policy)?;
        let (values, rho) = poisson_system(chain, &policy)?;
        let next = improve_policy(chain, &values)?;
        seen.insert(policy.clone());
        if next == policy || seen.contains(&next) {
            let residual = hjb_residual(chain, &values, rho)?;
            if residual > options.tolerance * residual_scale(chain, &values) {
                return Err(Error::NonConvergence {
                    iterations: iteration,
                    residual,
                });
            }
            return Ok(ValueSolution {
                min_value: values.iter().copied().fold(f64::INFINITY, f64::min),
                values,
                rho,
                policy,
                residual,
                alpha: 0.0,
                reference: chain.reference(),
                iterations: iteration,
            });
        }
        policy = next;
    }
    Err(Error::NonConvergence {
        iterations: options.max_iterations,
        residual: f64::NAN,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::BoundaryMode;
    use crate::generator::DiscreteGenerator;
    use crate::grid::Grid;
    use crate::problem::{ControlledProblem, Cost, Diffusion, Drift};
    use approx::assert_relative_eq;

    fn heat_1d(nodes: usize, cost: Cost) -> (ControlledProblem, Grid) {
        let p = ControlledProblem {
            dim: 1,
            controls: vec![vec![0.0]],
            diffusion: Diffusion::scaled_identity(1, 1.0),
            drift: Drift::Linear {
                matrix: vec![vec![0.0]],
                control_gain: vec![vec![0.0]],
                offset: vec![0.0],
            },
            levy: vec![],
            cost,
            domain_radius: (nodes - 1) as f64 / 2.0,
        };
        let g = Grid::uniform(1, p.domain_radius, nodes).unwrap();
        (p, g)
    }

    #[test]
    fn single_interior_node_dirichlet() {
        // −2ψ + 1 = ψ
        let (p, g) = heat_1d(3, Cost::Constant { value: 1.0 });
        let chain = ControlledChain::from_problem(&p, &g, BoundaryMode::DirichletZero).unwrap();
        let s = solve_discounted(&chain, 1.0, &SolverOptions::default()).unwrap();
        assert_relative_eq!(s.values[1], 1.0 / 3.0, epsilon = 1e-15);
        assert_eq!(s.values[0], 0.0);
    }

    #[test]
    fn dirichlet_constant_exterior_enters_equation() {
        // −2ψ + 2κ + 1 = ψ
        let (p, g) = heat_1d(3, Cost::Constant { value: 1.0 });
        let chain = ControlledChain::from_problem(&p, &g, BoundaryMode::DirichletConstant(4.0)).unwrap();
        let s = solve_discounted(&chain, 1.0, &SolverOptions::default()).unwrap();
        assert_relative_eq!(s.values[1], 3.0, epsilon = 1e-14);
    }

    #[test]
    fn zero_cost_gives_zero_value() {
        let (p, g) = heat_1d(9, Cost::Constant { value: 0.0 });
        for mode in [BoundaryMode::DirichletZero, BoundaryMode::Reflecting] {
            let chain = ControlledChain::from_problem(&p, &g, mode).unwrap();
            let s = solve_discounted(&chain, 0.3, &SolverOptions::default()).unwrap();
            assert!(s.values.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn dominated_control_is_never_chosen() {
        let g = DiscreteGenerator::from_rates(&[vec![(1, 1.0)], vec![(0, 2.0)], vec![(1, 1.0)]], None).unwrap();
        let chain = ControlledChain::new(
            vec![g.clone(), g],
            vec![vec![2.0, 1.0], vec![3.0, 0.5], vec![1.0, 0.9]],
            1,
        )
        .unwrap();
        let s = solve_discounted(&chain, 0.5, &SolverOptions::default()).unwrap();
        assert_eq!(s.policy.0, vec![1, 1, 1]);
        // oracle: both fixed policies evaluated directly
        let cheap = evaluate_discounted(&chain, &MarkovPolicy(vec![1; 3]), 0.5).unwrap();
        let dear = evaluate_discounted(&chain, &MarkovPolicy(vec![0; 3]), 0.5).unwrap();
        for x in 0..3 {
            assert_relative_eq!(s.values[x], cheap[x], epsilon = 1e-12);
            assert!(cheap[x] < dear[x]);
        }
    }

    #[test]
    fn constant_cost_ergodic_and_poisson() {
        let (p, g) = heat_1d(7, Cost::Constant { value: 2.5 });
        let chain = ControlledChain::from_problem(&p, &g, BoundaryMode::Reflecting).unwrap();
        let s = solve_ergodic(&chain, &SolverOptions::default()).unwrap();
        assert_relative_eq!(s.rho, 2.5, epsilon = 1e-12);
        assert!(s.values.iter().all(|v| v.abs() < 1e-12));
        let q = solve_poisson(&chain, &s.policy).unwrap();
        assert_relative_eq!(q.rho, 2.5, epsilon = 1e-12);
        assert_eq!(hjb_residual(&chain, &[0.0; 7], 2.5).unwrap(), 0.0);
    }

    #[test]
    fn two_node_poisson_hand_solve() {
        // row 0: (V1 − V0) + 0 = β, row 1: (V0 − V1) + 2 = β ⇒ β = 1, V1 = 1
        let g = DiscreteGenerator::from_rates(&[vec![(1, 1.0)], vec![(0, 1.0)]], None).unwrap();
        let chain = ControlledChain::new(vec![g], vec![vec![0.0], vec![2.0]], 0).unwrap();
        let s = solve_poisson(&chain, &MarkovPolicy(vec![0, 0])).unwrap();
        assert_relative_eq!(s.rho, 1.0, epsilon = 1e-14);
        assert_relative_eq!(s.values[1], 1.0, epsilon = 1e-14);
        assert_eq!(s.values[0], 0.0);
    }

    #[test]
    fn poisson_rejects_multichain() {
        let g = DiscreteGenerator::from_rates(&[vec![(1, 1.0)], vec![(0, 1.0)], vec![(3, 1.0)], vec![(2, 1.0)]], None).unwrap();
        let chain = ControlledChain::new(vec![g], vec![vec![1.0]; 4], 0).unwrap();
        assert_eq!(
            solve_poisson(&chain, &MarkovPolicy(vec![0; 4])).unwrap_err(),
            Error::MultichainDetected { classes: 2 }
        );
        assert!(matches!(
            solve_ergodic(&chain, &SolverOptions::default()),
            Err(Error::MultichainDetected { .. })
        ));
    }

    #[test]
    fn ergodic_rejects_absorbing_chain() {
        let (p, g) = heat_1d(5, Cost::Constant { value: 1.0 });
        let chain = ControlledChain::from_problem(&p, &g, BoundaryMode::DirichletZero).unwrap();
        assert!(matches!(
            solve_ergodic(&chain, &SolverOptions::default()),
            Err(Error::NotConservative { .. })
        ));
    }

    #[test]
    fn improve_policy_on_constant_field_is_cost_argmin() {
        let g = DiscreteGenerator::from_rates(&[vec![(1, 1.0)], vec![(0, 1.0)]], None).unwrap();
        let chain = ControlledChain::new(vec![g.clone(), g.clone(), g], vec![vec![1.0, 0.5, 0.5], vec![0.1, 0.2, 0.0]], 0).unwrap();
        let p = improve_policy(&chain, &[3.0, 3.0]).unwrap();
        assert_eq!(p.0, vec![1, 2]);
    }

    #[test]
    fn residual_detects_single_node_perturbation() {
        let (p, g) = heat_1d(9, Cost::Quadratic {
            state_weights: vec![1.0],
            control_weights: vec![0.0],
            offset: 0.0,
        });
        let chain = ControlledChain::from_problem(&p, &g, BoundaryMode::Reflecting).unwrap();
        let s = solve_ergodic(&chain, &SolverOptions::default()).unwrap();
        assert!(s.residual <= 1e-9);
        let eps = 1e-3;
        let mut v = s.values.clone();
        v[4] += eps;
        let r = hjb_residual(&chain, &v, s.rho).unwrap();
        assert!(r >= eps * chain.generator(0).diagonal(4).abs() / 2.0);
    }

    #[test]
    fn vanishing_discount_rejects_bad_sequences() {
        let (p, g) = heat_1d(5, Cost::Constant { value: 1.0 });
        let chain = ControlledChain::from_problem(&p, &g, BoundaryMode::Reflecting).unwrap();
        let opts = SolverOptions::default();
        assert!(vanishing_discount(&chain, &[0.25, 0.5], &opts).is_err());
        assert!(vanishing_discount(&chain, &[1.0, 0.5], &opts).is_err());
        let (s, table) = vanishing_discount(&chain, &default_alphas(6), &opts).unwrap();
        assert_relative_eq!(s.rho, 1.0, epsilon = 1e-12);
        for step in &table.steps {
            assert_relative_eq!(step.scaled_value, 1.0, epsilon = 1e-12);
            assert!(step.cauchy_diff.unwrap_or(0.0) < 1e-12);
        }
        assert!(table.to_csv().starts_with("alpha,alpha_v_ref,cauchy_diff\n5.0000000000000000e-1,"));
    }
}
