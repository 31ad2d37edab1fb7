//! Invariant and ergodic occupation measures of policy chains.
//!
//! A probability vector `μ` is infinitesimally invariant for a conservative
//! rate matrix `Q_v` when `μᵀ Q_v = 0`. The occupation measure of a
//! stationary Markov policy `v` is `π(x, z) = μ(x) 1{v(x) = z}`, and its
//! integral against the running cost is the long-run average cost of `v`.

use nalgebra::DMatrix;
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;

use crate::chain::{ControlledChain, MarkovPolicy};
use crate::dense::lu_solve;
use crate::error::{Error, Result};
use crate::generator::{DiscreteGenerator, SparseMatrix};

/// Above this many nodes the dense solve gives way to power iteration.
pub const DENSE_LIMIT: usize = 2000;

pub const STATIONARITY_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct InvariantMeasure {
    pub weights: Vec<f64>,
}

impl InvariantMeasure {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.weights.iter().all(|&w| w > 0.0)
    }

    /// `∫ f dμ`.
    pub fn integrate(&self, field: &[f64]) -> f64 {
        self.weights.iter().zip(field).map(|(w, f)| w * f).sum()
    }
}

/// Joint state-control weights, indexed `node * controls + control`.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupationMeasure {
    controls: usize,
    weights: Vec<f64>,
}

impl OccupationMeasure {
    pub fn from_weights(controls: usize, weights: Vec<f64>) -> Result<Self> {
        if controls == 0 || !weights.len().is_multiple_of(controls) {
            return Err(Error::InvalidInput(format!(
                "{} weights do not split into {controls} controls",
                weights.len()
            )));
        }
        Ok(OccupationMeasure { controls, weights })
    }

    pub fn nodes(&self) -> usize {
        self.weights.len() / self.controls
    }

    pub fn controls(&self) -> usize {
        self.controls
    }

    pub fn weight(&self, node: usize, control: usize) -> f64 {
        self.weights[node * self.controls + control]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// State marginal `μ(x) = Σ_z π(x, z)`.
    pub fn marginal(&self) -> InvariantMeasure {
        InvariantMeasure {
            weights: self.weights.chunks(self.controls).map(|c| c.iter().sum()).collect(),
        }
    }

    /// Number of `(node, control)` pairs with positive weight.
    pub fn support_size(&self, threshold: f64) -> usize {
        self.weights.iter().filter(|&&w| w > threshold).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StationaryMethod {
    /// Dense deflated solve up to [`DENSE_LIMIT`] nodes, power iteration above.
    Auto,
    Dense,
    /// Uniformized power iteration with Aitken extrapolation.
    Power,
}

/// Closed communicating classes of the positive-rate graph over active nodes.
pub fn recurrent_classes(rates: &SparseMatrix, active: &[bool]) -> Vec<Vec<usize>> {
    let n = rates.len();
    let mut graph = DiGraph::<usize, ()>::with_capacity(n, n * 4);
    let ids: Vec<_> = (0..n).map(|i| graph.add_node(i)).collect();
    for i in (0..n).filter(|&i| active[i]) {
        for &(j, q) in rates.row(i) {
            if j != i && q > 0.0 && active[j] {
                graph.add_edge(ids[i], ids[j], ());
            }
        }
    }
    let mut class_of = vec![usize::MAX; n];
    let sccs: Vec<Vec<usize>> = tarjan_scc(&graph)
        .into_iter()
        .map(|c| c.into_iter().map(|id| graph[id]).filter(|&i| active[i]).collect::<Vec<_>>())
        .filter(|c| !c.is_empty())
        .collect();
    for (k, c) in sccs.iter().enumerate() {
        for &i in c {
            class_of[i] = k;
        }
    }
    sccs.into_iter()
        .enumerate()
        .filter(|(k, c)| {
            c.iter().all(|&i| {
                rates
                    .row(i)
                    .iter()
                    .all(|&(j, q)| j == i || q <= 0.0 || !active[j] || class_of[j] == *k)
            })
        })
        .map(|(_, mut c)| {
            c.sort_unstable();
            c
        })
        .collect()
}

/// `max_y |(μᵀ Q)_y|`.
pub fn stationarity_residual(measure: &InvariantMeasure, generator: &DiscreteGenerator) -> f64 {
    generator
        .rates()
        .apply_transpose(&measure.weights)
        .into_iter()
        .fold(0.0, |m, v| m.max(v.abs()))
}

fn check_conservative(generator: &DiscreteGenerator) -> Result<()> {
    for row in 0..generator.len() {
        let row_sum = generator.row_sum(row);
        let scale = 1.0 + generator.diagonal(row).abs();
        if !generator.is_active(row) || row_sum < -1e-12 * scale || generator.exterior_mass()[row] > 0.0 {
            return Err(Error::NotConservative { row, row_sum });
        }
    }
    Ok(())
}

pub fn invariant_measure(generator: &DiscreteGenerator) -> Result<InvariantMeasure> {
    invariant_measure_with(generator, StationaryMethod::Auto)
}

pub fn invariant_measure_with(generator: &DiscreteGenerator, method: StationaryMethod) -> Result<InvariantMeasure> {
    check_conservative(generator)?;
    let classes = recurrent_classes(generator.rates(), generator.active());
    if classes.len() != 1 {
        return Err(Error::MultichainDetected {
            classes: classes.len(),
        });
    }
    let n = generator.len();
    let dense = match method {
        StationaryMethod::Auto => n <= DENSE_LIMIT,
        StationaryMethod::Dense => true,
        StationaryMethod::Power => false,
    };
    let mut weights = if dense {
        dense_stationary(generator)?
    } else {
        power_stationary(generator)?
    };
    let mut recurrent = vec![false; n];
    classes[0].iter().for_each(|&i| recurrent[i] = true);
    for (w, &r) in weights.iter_mut().zip(&recurrent) {
        if *w < 0.0 || !r {
            *w = 0.0;
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Ok(InvariantMeasure { weights })
}

/// `Qᵀ μ = 0` with one (redundant) balance equation replaced by `Σ μ = 1`.
fn dense_stationary(generator: &DiscreteGenerator) -> Result<Vec<f64>> {
    let n = generator.len();
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        for &(j, q) in generator.row(i) {
            a[(j, i)] = q;
        }
    }
    for i in 0..n {
        a[(0, i)] = 1.0;
    }
    let mut b = vec![0.0; n];
    b[0] = 1.0;
    lu_solve(a, b, "stationary distribution")
}

fn power_stationary(generator: &DiscreteGenerator) -> Result<Vec<f64>> {
    const MAX_ITERATIONS: usize = 2_000_000;
    let n = generator.len();
    let rates = generator.rates();
    let lambda = 1.05 * (0..n).map(|i| generator.diagonal(i).abs()).fold(0.0, f64::max).max(1e-300);
    let step = |mu: &[f64]| -> Vec<f64> {
        let flow = rates.apply_transpose(mu);
        mu.iter().zip(flow).map(|(m, f)| m + f / lambda).collect()
    };
    let residual = |mu: &[f64]| -> f64 {
        rates
            .apply_transpose(mu)
            .into_iter()
            .fold(0.0, |m, v| m.max(v.abs()))
    };
    let target = 0.1 * STATIONARITY_TOLERANCE;
    let mut mu = vec![1.0 / n as f64; n];
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        let mu1 = step(&mu);
        let mu2 = step(&mu1);
        iterations += 2;
        let mut extrapolated: Vec<f64> = (0..n)
            .map(|i| {
                let denom = mu2[i] - 2.0 * mu1[i] + mu[i];
                if denom.abs() > 1e-300 {
                    (mu2[i] - (mu2[i] - mu1[i]).powi(2) / denom).max(0.0)
                } else {
                    mu2[i]
                }
            })
            .collect();
        let total: f64 = extrapolated.iter().sum();
        extrapolated.iter_mut().for_each(|v| *v /= total);
        let (r_plain, r_aitken) = (residual(&mu2), residual(&extrapolated));
        mu = if r_aitken < r_plain { extrapolated } else { mu2 };
        if r_plain.min(r_aitken) <= target {
            return Ok(mu);
        }
    }
    Err(Error::NonConvergence {
        iterations,
        residual: residual(&mu),
    })
}

/// `π(x, z) = μ(x) 1{v(x) = z}`.
pub fn ergodic_occupation(measure: &InvariantMeasure, policy: &MarkovPolicy, controls: usize) -> Result<OccupationMeasure> {
    policy.validate(measure.len(), controls)?;
    let mut weights = vec![0.0; measure.len() * controls];
    for (x, &w) in measure.weights.iter().enumerate() {
        weights[x * controls + policy.control_at(x)] = w;
    }
    OccupationMeasure::from_weights(controls, weights)
}

/// `π(c) = Σ π(x, z) c(x, z)`.
pub fn average_cost(occupation: &OccupationMeasure, chain: &ControlledChain) -> f64 {
    let m = occupation.controls();
    occupation
        .weights()
        .iter()
        .enumerate()
        .map(|(k, w)| w * chain.cost(k / m, k % m))
        .sum()
}

/// Stationary measure, occupation measure and average cost of a policy.
pub fn evaluate_policy(chain: &ControlledChain, policy: &MarkovPolicy) -> Result<(InvariantMeasure, OccupationMeasure, f64)> {
    let generator = chain.policy_generator(policy)?;
    let mu = invariant_measure(&generator)?;
    let pi = ergodic_occupation(&mu, policy, chain.controls())?;
    let cost = average_cost(&pi, chain);
    Ok((mu, pi, cost))
}

/// `max_f |Σ_x μ(x) (Q_v f)(x)|` over the given test fields.
pub fn verify_infinitesimal_invariance(
    measure: &InvariantMeasure,
    chain: &ControlledChain,
    policy: &MarkovPolicy,
    test_fields: &[Vec<f64>],
) -> Result<f64> {
    let generator = chain.policy_generator(policy)?;
    let mut worst = 0.0_f64;
    for f in test_fields {
        let af = generator.apply(f)?;
        worst = worst.max(measure.integrate(&af).abs());
    }
    Ok(worst)
}

/// Node indicator fields `1_{y}` for every node `y`.
pub fn indicator_basis(nodes: usize) -> Vec<Vec<f64>> {
    (0..nodes)
        .map(|y| (0..nodes).map(|x| if x == y { 1.0 } else { 0.0 }).collect())
        .collect()
}
