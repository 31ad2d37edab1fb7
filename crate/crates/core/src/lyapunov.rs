//! Foster–Lyapunov drift checks on the grid.
//!
//! For a policy `v`, a nonnegative candidate `V` and a cost `c`, the drift
//! condition asks for a constant `κ₀` and a centered ball `B̂` with
//!
//! ```text
//! A_v V(x) ≤ κ₀ 1_{B̂}(x) − c_v(x)   for all x.
//! ```
//!
//! On a truncated grid the operator is only trusted at interior nodes, and
//! "for all x" is read as "out to the last interior shell": the check passes
//! when every positive margin `A_v V + c` sits strictly inside that shell.

use std::fmt::Write as _;

use crate::chain::{BoundaryMode, ControlledChain, MarkovPolicy};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::io::{fmt_f64, node_table};
use crate::problem::{cholesky, is_symmetric, norm, ControlledProblem, QuadraticForm, TestFunction};

#[derive(Clone, Debug, PartialEq)]
pub struct DriftReport {
    pub satisfied: bool,
    /// `max(0, max_{x ∈ B̂} margin(x))`.
    pub kappa0: f64,
    /// Largest `|x|` at which the margin is positive (0 if none is).
    pub ball_radius: f64,
    /// Largest margin on the far field `|x| ≥ shell_radius`.
    pub worst_node: usize,
    pub worst_margin: f64,
    /// Inner radius of the last interior shell of the grid.
    pub shell_radius: f64,
    /// `A_v V + c` at every node; `NaN` where the operator is not evaluated.
    pub margins: Vec<f64>,
}

impl DriftReport {
    /// Flat `key = value` block.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "satisfied = {}", self.satisfied);
        let _ = writeln!(out, "kappa0 = {}", fmt_f64(self.kappa0));
        let _ = writeln!(out, "ball_radius = {}", fmt_f64(self.ball_radius));
        let _ = writeln!(out, "shell_radius = {}", fmt_f64(self.shell_radius));
        let _ = writeln!(out, "worst_node = {}", self.worst_node);
        let _ = writeln!(out, "worst_margin = {}", fmt_f64(self.worst_margin));
        out
    }

    pub fn margins_csv(&self, grid: &Grid) -> String {
        node_table(grid, &[("margin", &self.margins)])
    }

    /// Re-check `margin ≤ κ₀ 1_{B̂}` at every evaluated node.
    pub fn holds_nodewise(&self, grid: &Grid, tolerance: f64) -> bool {
        self.margins.iter().enumerate().all(|(node, &m)| {
            if m.is_nan() {
                return true;
            }
            let inside = norm(&grid.coordinates(node)) <= self.ball_radius;
            m <= if inside { self.kappa0 } else { 0.0 } + tolerance
        })
    }
}

fn check_candidate(candidate: &[f64], n: usize) -> Result<()> {
    if candidate.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: candidate.len(),
        });
    }
    match candidate.iter().position(|&v| !(v >= 0.0)) {
        Some(node) => Err(Error::NegativeCandidate {
            node,
            value: candidate[node],
        }),
        None => Ok(()),
    }
}

/// Inner radius of the shell of interior nodes that touch the boundary.
fn shell_radius(grid: &Grid) -> f64 {
    grid.interior_nodes()
        .filter(|&i| {
            let m = grid.multi_index(i);
            m.iter().zip(grid.counts()).any(|(&k, &c)| k == 1 || k + 2 == c)
        })
        .map(|i| norm(&grid.coordinates(i)))
        .fold(f64::INFINITY, f64::min)
}

/// Condense nodewise margins (already `NaN` on non-interior nodes) into a
/// report.
pub fn report_from_margins(grid: &Grid, margins: Vec<f64>) -> DriftReport {
    let shell = shell_radius(grid);
    let eps = 1e-12 * grid.radius();
    let mut ball_radius = 0.0_f64;
    let (mut worst_node, mut worst_margin) = (0, f64::NEG_INFINITY);
    for (node, &m) in margins.iter().enumerate() {
        if m.is_nan() {
            continue;
        }
        let r = norm(&grid.coordinates(node));
        if m > 0.0 {
            ball_radius = ball_radius.max(r);
        }
        if r >= shell - eps && m > worst_margin {
            worst_node = node;
            worst_margin = m;
        }
    }
    let kappa0 = margins
        .iter()
        .enumerate()
        .filter(|(node, m)| !m.is_nan() && norm(&grid.coordinates(*node)) <= ball_radius)
        .map(|(_, &m)| m)
        .fold(0.0, f64::max);
    DriftReport {
        satisfied: worst_margin <= 0.0,
        kappa0,
        ball_radius,
        worst_node,
        worst_margin,
        shell_radius: shell,
        margins,
    }
}

/// Discrete drift check for one policy, with `A_v` the conservative
/// (reflecting) discretization of `problem` on `grid`.
pub fn verify_drift(
    problem: &ControlledProblem,
    grid: &Grid,
    policy: &MarkovPolicy,
    candidate: &[f64],
    cost: &[f64],
) -> Result<DriftReport> {
    let chain = ControlledChain::from_problem(problem, grid, BoundaryMode::Reflecting)?;
    verify_drift_on_chain(&chain, grid, policy, candidate, cost)
}

pub fn verify_drift_on_chain(
    chain: &ControlledChain,
    grid: &Grid,
    policy: &MarkovPolicy,
    candidate: &[f64],
    cost: &[f64],
) -> Result<DriftReport> {
    let n = grid.len();
    check_candidate(candidate, n)?;
    policy.validate(n, chain.controls())?;
    if cost.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: cost.len(),
        });
    }
    let av = chain.policy_rates(policy).apply(candidate);
    let margins = (0..n)
        .map(|i| if grid.is_boundary(i) { f64::NAN } else { av[i] + cost[i] })
        .collect();
    Ok(report_from_margins(grid, margins))
}

/// The same check with the continuum operator `A_v f` evaluated exactly at
/// the nodes, for a smooth candidate `f`.
pub fn verify_drift_exact<F: TestFunction + ?Sized>(
    problem: &ControlledProblem,
    grid: &Grid,
    policy: &MarkovPolicy,
    candidate: &F,
    cost: &[f64],
) -> Result<DriftReport> {
    let n = grid.len();
    policy.validate(n, problem.num_controls())?;
    let margins = (0..n)
        .map(|i| {
            if grid.is_boundary(i) {
                return f64::NAN;
            }
            let x = grid.coordinates(i);
            problem.generator_on(candidate, &x, policy.control_at(i)) + cost[i]
        })
        .collect();
    Ok(report_from_margins(grid, margins))
}

/// Drift condition required of every control at once:
/// `A_z Ψ(x) ≤ κ 1_B(x) − h(x, z)` with `h ≥ 1`.
///
/// `minorant` has one entry per node (same `h` for every control) or one per
/// `(node, control)` pair, indexed `node * controls + control`.
pub fn verify_uniform_drift(
    problem: &ControlledProblem,
    grid: &Grid,
    candidate: &[f64],
    minorant: &[f64],
) -> Result<DriftReport> {
    let chain = ControlledChain::from_problem(problem, grid, BoundaryMode::Reflecting)?;
    verify_uniform_drift_on_chain(&chain, grid, candidate, minorant)
}

pub fn verify_uniform_drift_on_chain(
    chain: &ControlledChain,
    grid: &Grid,
    candidate: &[f64],
    minorant: &[f64],
) -> Result<DriftReport> {
    let n = grid.len();
    let m = chain.controls();
    check_candidate(candidate, n)?;
    let per_control = match minorant.len() {
        l if l == n => false,
        l if l == n * m => true,
        l => {
            return Err(Error::DimensionMismatch {
                expected: n * m,
                got: l,
            })
        }
    };
    let h = |x: usize, z: usize| if per_control { minorant[x * m + z] } else { minorant[x] };
    for x in 0..n {
        for z in 0..m {
            if !(h(x, z) >= 1.0) {
                return Err(Error::MinorantBelowOne {
                    node: x,
                    control: z,
                    value: h(x, z),
                });
            }
        }
    }
    let applied: Vec<Vec<f64>> = chain.generators().iter().map(|g| g.rates().apply(candidate)).collect();
    let margins = (0..n)
        .map(|x| {
            if grid.is_boundary(x) {
                return f64::NAN;
            }
            (0..m).map(|z| applied[z][x] + h(x, z)).fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    Ok(report_from_margins(grid, margins))
}

/// `⟨x, S x⟩^{θ/2}` at every node.
pub fn quadratic_candidate(grid: &Grid, s: &[Vec<f64>], theta: f64) -> Result<Vec<f64>> {
    quadratic_form(grid.dim(), s, theta).map(|q| (0..grid.len()).map(|i| q.value(&grid.coordinates(i))).collect())
}

/// Validated `QuadraticForm` for use as a smooth candidate.
pub fn quadratic_form(dim: usize, s: &[Vec<f64>], theta: f64) -> Result<QuadraticForm> {
    if !(1.0..=2.0).contains(&theta) {
        return Err(Error::ThetaOutOfRange(theta));
    }
    if s.len() != dim || s.iter().any(|row| row.len() != dim) {
        return Err(Error::NonSpdMatrix);
    }
    let flat: Vec<f64> = s.iter().flatten().copied().collect();
    if !is_symmetric(&flat, dim) || cholesky(&flat, dim).is_none() {
        return Err(Error::NonSpdMatrix);
    }
    Ok(QuadraticForm {
        matrix: s.to_vec(),
        theta,
    })
}
