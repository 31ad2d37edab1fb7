//! Average-cost control as a linear program over occupation measures.
//!
//! Variables are weights `π(x, z) ≥ 0`. Every node `y` contributes a balance
//! row `Σ_{x,z} Q_z(x, y) π(x, z) = 0` and one extra row normalizes
//! `Σ π = 1`. The objective is `π(c)`. The multipliers of the balance rows
//! give (up to sign) a value field `h`, and the multiplier of the
//! normalization row is the optimal average cost.

pub mod simplex;

use std::fmt::Write as _;

use crate::chain::ControlledChain;
use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::measures::OccupationMeasure;

pub use simplex::{SimplexSolution, StandardForm};

#[derive(Clone, Debug, PartialEq)]
pub struct LpInstance {
    nodes: usize,
    controls: usize,
    form: StandardForm,
}

impl LpInstance {
    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn controls(&self) -> usize {
        self.controls
    }

    pub fn num_rows(&self) -> usize {
        self.form.rows
    }

    pub fn num_variables(&self) -> usize {
        self.form.columns.len()
    }

    pub fn variable(node: usize, control: usize, controls: usize) -> usize {
        node * controls + control
    }

    pub fn standard_form(&self) -> &StandardForm {
        &self.form
    }

    /// `max_row |A π − b|` for a candidate weight vector.
    pub fn constraint_residual(&self, weights: &[f64]) -> f64 {
        let mut lhs = vec![0.0; self.form.rows];
        for (col, &w) in self.form.columns.iter().zip(weights) {
            for &(i, a) in col {
                lhs[i] += a * w;
            }
        }
        lhs.iter()
            .zip(&self.form.rhs)
            .map(|(l, b)| (l - b).abs())
            .fold(0.0, f64::max)
    }

    /// CPLEX LP text format.
    pub fn to_lp_format(&self) -> String {
        let name = |k: usize| format!("p_{}_{}", k / self.controls, k % self.controls);
        let term = |a: f64, k: usize| {
            let sign = if a < 0.0 { "-" } else { "+" };
            format!(" {sign} {} {}", fmt_f64(a.abs()), name(k))
        };
        let mut out = format!(
            "\\ ergodic occupation-measure LP: {} nodes, {} controls\nMinimize\n obj:",
            self.nodes, self.controls
        );
        for (k, &c) in self.form.objective.iter().enumerate() {
            out.push_str(&term(c, k));
            if k % 4 == 3 {
                out.push_str("\n     ");
            }
        }
        out.push_str("\nSubject To\n");
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.form.rows];
        for (k, col) in self.form.columns.iter().enumerate() {
            for &(i, a) in col {
                rows[i].push((k, a));
            }
        }
        for (i, row) in rows.iter().enumerate() {
            let label = if i < self.nodes {
                format!("balance_{i}")
            } else {
                "normalize".to_string()
            };
            let _ = write!(out, " {label}:");
            for (t, &(k, a)) in row.iter().enumerate() {
                out.push_str(&term(a, k));
                if t % 4 == 3 {
                    out.push_str("\n     ");
                }
            }
            let _ = writeln!(out, " = {}", fmt_f64(self.form.rhs[i]));
        }
        out.push_str("Bounds\n");
        for k in 0..self.num_variables() {
            let _ = writeln!(out, " {} >= 0", name(k));
        }
        out.push_str("End\n");
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpSolution {
    pub occupation: OccupationMeasure,
    pub rho_star: f64,
    /// `max_j |π_j d_j|` over variables with reduced cost `d_j`.
    pub complementary_slackness: f64,
    /// Most negative reduced cost (0 at exact dual feasibility).
    pub dual_infeasibility: f64,
    pub simplex: SimplexSolution,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DualCertificate {
    /// `h` with `min_z [Q_z h + c_z] ≥ ρ` nodewise, pinned to `h(reference) = 0`.
    pub value_field: Vec<f64>,
    pub rho_dual: f64,
    /// `min_x (min_z [Q_z h + c_z](x)) − ρ`; nonnegative up to roundoff.
    pub certificate_margin: f64,
    /// The optimal basis is primal degenerate, so these multipliers are one
    /// of several valid choices.
    pub degenerate_basis: bool,
}

/// Build the LP on a conservative chain.
pub fn assemble_lp(chain: &ControlledChain) -> Result<LpInstance> {
    let n = chain.nodes();
    let m = chain.controls();
    for z in 0..m {
        let g = chain.generator(z);
        for row in 0..n {
            let row_sum = g.row_sum(row);
            if !g.is_active(row)
                || g.exterior_mass()[row] > 0.0
                || row_sum.abs() > 1e-12 * (1.0 + g.diagonal(row).abs())
            {
                return Err(Error::NotConservative { row, row_sum });
            }
        }
    }
    let mut columns = Vec::with_capacity(n * m);
    let mut objective = Vec::with_capacity(n * m);
    for x in 0..n {
        for z in 0..m {
            let mut col: Vec<(usize, f64)> = chain
                .generator(z)
                .row(x)
                .iter()
                .copied()
                .filter(|&(_, q)| q != 0.0)
                .collect();
            col.push((n, 1.0));
            columns.push(col);
            objective.push(chain.cost(x, z));
        }
    }
    let mut rhs = vec![0.0; n + 1];
    rhs[n] = 1.0;
    Ok(LpInstance {
        nodes: n,
        controls: m,
        form: StandardForm {
            rows: n + 1,
            columns,
            rhs,
            objective,
        },
    })
}

/// Bases of stationary policies: the cheapest control at each node, then
/// each constant policy. On a unichain policy the basis holds its
/// stationary distribution, so it is primal feasible.
fn policy_bases(instance: &LpInstance) -> Vec<Vec<usize>> {
    let (n, m) = (instance.nodes, instance.controls);
    let cheapest: Vec<usize> = (0..n)
        .map(|x| {
            (0..m)
                .min_by(|&a, &b| {
                    let c = &instance.form.objective;
                    c[x * m + a].total_cmp(&c[x * m + b])
                })
                .unwrap_or(0)
        })
        .collect();
    let mut policies = vec![cheapest];
    policies.extend((0..m).map(|z| vec![z; n]));
    policies.dedup();
    policies
        .into_iter()
        .map(|policy| {
            let mut basis: Vec<usize> = policy.iter().enumerate().map(|(x, &z)| x * m + z).collect();
            // the artificial of balance row 0 absorbs the redundant equation
            basis.push(n * m);
            basis
        })
        .collect()
}

pub fn solve_lp(instance: &LpInstance) -> Result<LpSolution> {
    let simplex = policy_bases(instance)
        .iter()
        .find_map(|b| simplex::solve_from(&instance.form, Some(b)).ok())
        .map_or_else(|| simplex::solve(&instance.form), Ok)?;
    let complementary_slackness = simplex
        .x
        .iter()
        .zip(&simplex.reduced_costs)
        .map(|(x, d)| (x * d).abs())
        .fold(0.0, f64::max);
    let dual_infeasibility = simplex.reduced_costs.iter().copied().fold(0.0, f64::min);
    let occupation = OccupationMeasure::from_weights(instance.controls, simplex.x.clone())?;
    Ok(LpSolution {
        occupation,
        rho_star: simplex.objective,
        complementary_slackness,
        dual_infeasibility,
        simplex,
    })
}

/// Turn the optimal multipliers into a value field and a weak-duality
/// certificate.
pub fn extract_duals(instance: &LpInstance, solution: &LpSolution, chain: &ControlledChain) -> Result<DualCertificate> {
    let n = instance.nodes;
    if chain.nodes() != n || chain.controls() != instance.controls {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: chain.nodes(),
        });
    }
    let y = &solution.simplex.duals;
    let reference = chain.reference();
    let h: Vec<f64> = (0..n).map(|x| -(y[x] - y[reference])).collect();
    let rho_dual = y[n];
    let certificate_margin = (0..n)
        .map(|x| {
            (0..chain.controls())
                .map(|z| chain.hamiltonian_term(x, z, &h))
                .fold(f64::INFINITY, f64::min)
                - rho_dual
        })
        .fold(f64::INFINITY, f64::min);
    Ok(DualCertificate {
        value_field: h,
        rho_dual,
        certificate_margin,
        degenerate_basis: solution.simplex.degenerate,
    })
}
