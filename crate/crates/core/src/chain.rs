//! A controlled continuous-time Markov chain: one generator per control
//! plus a cost table. All solvers work on this representation; problems on
//! a grid are lowered to it by [`ControlledChain::from_problem`].

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::generator::{discretize_generator, DiscreteGenerator, SparseMatrix, Truncation};
use crate::grid::Grid;
use crate::problem::ControlledProblem;

/// Boundary treatment for a solve on the truncation box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BoundaryMode {
    /// Absorbing boundary and exterior with value 0.
    DirichletZero,
    /// Absorbing boundary and exterior with the given constant value.
    DirichletConstant(f64),
    /// Conservative reflecting truncation.
    Reflecting,
}

impl BoundaryMode {
    pub fn truncation(self) -> Truncation {
        match self {
            BoundaryMode::Reflecting => Truncation::Reflecting,
            _ => Truncation::Absorbing,
        }
    }

    /// Value held at inactive boundary nodes and outside the box.
    pub fn exterior_value(self) -> f64 {
        match self {
            BoundaryMode::DirichletConstant(k) => k,
            _ => 0.0,
        }
    }
}

/// Stationary Markov control: one control index per node.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MarkovPolicy(pub Vec<usize>);

impl MarkovPolicy {
    pub fn constant(nodes: usize, control: usize) -> Self {
        MarkovPolicy(vec![control; nodes])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn control_at(&self, node: usize) -> usize {
        self.0[node]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn validate(&self, nodes: usize, controls: usize) -> Result<()> {
        if self.0.len() != nodes {
            return Err(Error::DimensionMismatch {
                expected: nodes,
                got: self.0.len(),
            });
        }
        if let Some(&z) = self.0.iter().find(|&&z| z >= controls) {
            return Err(Error::InvalidInput(format!("policy uses control {z} of {controls}")));
        }
        Ok(())
    }

    /// Every deterministic policy over `nodes × controls`, in lexicographic
    /// order. Only meant for tiny instances.
    pub fn enumerate(nodes: usize, controls: usize) -> impl Iterator<Item = MarkovPolicy> {
        let total = (controls as u64).checked_pow(nodes as u32).unwrap_or(u64::MAX);
        (0..total).map(move |mut k| {
            let mut p = vec![0; nodes];
            for slot in p.iter_mut() {
                *slot = (k % controls as u64) as usize;
                k /= controls as u64;
            }
            MarkovPolicy(p)
        })
    }
}

#[derive(Clone, Debug)]
pub struct ControlledChain {
    generators: Vec<DiscreteGenerator>,
    cost: Vec<f64>,
    controls: usize,
    reference: usize,
    exterior_value: f64,
}

impl ControlledChain {
    /// `cost[node][control]`. Generators must share node count and activity.
    pub fn new(generators: Vec<DiscreteGenerator>, cost: Vec<Vec<f64>>, reference: usize) -> Result<Self> {
        let controls = generators.len();
        if controls == 0 {
            return Err(Error::InvalidInput("no controls".into()));
        }
        let n = generators[0].len();
        for g in &generators {
            if g.len() != n || g.active() != generators[0].active() {
                return Err(Error::InvalidInput("generators disagree on the node set".into()));
            }
        }
        if cost.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: cost.len(),
            });
        }
        let mut flat = Vec::with_capacity(n * controls);
        for (node, row) in cost.iter().enumerate() {
            if row.len() != controls {
                return Err(Error::DimensionMismatch {
                    expected: controls,
                    got: row.len(),
                });
            }
            for (control, &c) in row.iter().enumerate() {
                if !(c >= 0.0) {
                    return Err(Error::NegativeCost {
                        node,
                        control,
                        value: c,
                    });
                }
            }
            flat.extend_from_slice(row);
        }
        if reference >= n {
            return Err(Error::InvalidInput(format!("reference node {reference} out of range")));
        }
        Ok(ControlledChain {
            generators,
            cost: flat,
            controls,
            reference,
            exterior_value: 0.0,
        })
    }

    pub fn from_problem(problem: &ControlledProblem, grid: &Grid, mode: BoundaryMode) -> Result<Self> {
        let truncation = mode.truncation();
        let generators = (0..problem.num_controls())
            .into_par_iter()
            .map(|z| discretize_generator(problem, grid, z, truncation))
            .collect::<Result<Vec<_>>>()?;
        let cost = (0..grid.len())
            .map(|node| {
                let x = grid.coordinates(node);
                (0..problem.num_controls()).map(|z| problem.cost_at(&x, z)).collect()
            })
            .collect();
        let mut chain = Self::new(generators, cost, grid.reference_node())?;
        chain.exterior_value = mode.exterior_value();
        Ok(chain)
    }

    pub fn with_exterior_value(mut self, value: f64) -> Self {
        self.exterior_value = value;
        self
    }

    pub fn nodes(&self) -> usize {
        self.generators[0].len()
    }

    pub fn controls(&self) -> usize {
        self.controls
    }

    pub fn reference(&self) -> usize {
        self.reference
    }

    pub fn exterior_value(&self) -> f64 {
        self.exterior_value
    }

    pub fn generator(&self, control: usize) -> &DiscreteGenerator {
        &self.generators[control]
    }

    pub fn generators(&self) -> &[DiscreteGenerator] {
        &self.generators
    }

    pub fn is_active(&self, node: usize) -> bool {
        self.generators[0].is_active(node)
    }

    pub fn active_nodes(&self) -> Vec<usize> {
        (0..self.nodes()).filter(|&i| self.is_active(i)).collect()
    }

    pub fn cost(&self, node: usize, control: usize) -> f64 {
        self.cost[node * self.controls + control]
    }

    pub fn policy_cost(&self, policy: &MarkovPolicy) -> Vec<f64> {
        (0..self.nodes()).map(|x| self.cost(x, policy.control_at(x))).collect()
    }

    pub fn is_conservative(&self) -> bool {
        self.generators.iter().all(|g| g.is_conservative(1e-12))
    }

    /// `Σ_y Q_z(x,y) V(y) + e_z(x)·V_ext + c(x,z)`: the quantity minimized
    /// over controls in every HJB equation here.
    pub fn hamiltonian_term(&self, node: usize, control: usize, values: &[f64]) -> f64 {
        let g = &self.generators[control];
        g.rates().row_dot(node, values) + g.exterior_mass()[node] * self.exterior_value + self.cost(node, control)
    }

    /// Rows of `Q_{v(x)}` stitched together for a policy.
    pub fn policy_rates(&self, policy: &MarkovPolicy) -> SparseMatrix {
        let rows: Vec<Vec<(usize, f64)>> = (0..self.nodes())
            .map(|x| self.generators[policy.control_at(x)].row(x).to_vec())
            .collect();
        SparseMatrix::from_rows(rows)
    }

    pub fn policy_exterior(&self, policy: &MarkovPolicy) -> Vec<f64> {
        (0..self.nodes())
            .map(|x| self.generators[policy.control_at(x)].exterior_mass()[x])
            .collect()
    }

    /// Per-node generator for a fixed policy, as a standalone chain.
    pub fn policy_generator(&self, policy: &MarkovPolicy) -> Result<DiscreteGenerator> {
        policy.validate(self.nodes(), self.controls)?;
        let rates = self.policy_rates(policy);
        let off: Vec<Vec<(usize, f64)>> = (0..self.nodes())
            .map(|x| rates.row(x).iter().copied().filter(|&(j, _)| j != x).collect())
            .collect();
        let mut g = DiscreteGenerator::from_rates(&off, Some(&self.policy_exterior(policy)))?;
        g.set_active(self.generators[0].active().to_vec());
        Ok(g)
    }
}
