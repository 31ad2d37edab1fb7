//! Monotone finite-difference discretization of the controlled generator.
//!
//! For each control the generator becomes a sparse rate table (a Q-matrix)
//! over grid nodes: second differences for the diffusion, one-sided upwind
//! differences for the drift, and nearest-node snapping or cell-midpoint
//! quadrature for the jump kernel. The table is stored as two parts whose
//! sum is the full operator:
//!
//! * the local part holds diffusion and drift rates plus `−ν̄(x)` on the
//!   diagonal;
//! * the nonlocal part holds the nonnegative jump rates `∫ u(x+y) ν_x(dy)`,
//!   including jumps that snap back onto the starting node.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::io::fmt_f64;
use crate::problem::{cholesky, is_symmetric, ControlledProblem, JumpDensity, JumpKind};

/// How the truncation box treats mass that would leave it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Truncation {
    /// Boundary nodes are absorbing (their values are prescribed) and jumps
    /// that land outside the box are killed.
    Absorbing,
    /// Boundary nodes are active; stencil legs pointing outside the box are
    /// dropped and outside jump destinations are clamped onto the boundary.
    /// The resulting chain is conservative.
    Reflecting,
}

/// Row-compressed sparse matrix with sorted, duplicate-free columns.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseMatrix {
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseMatrix {
    pub fn zeros(n: usize) -> Self {
        SparseMatrix {
            rows: vec![Vec::new(); n],
        }
    }

    /// Rows given as `(column, value)` lists; duplicates are summed.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let maps = rows
            .into_iter()
            .map(|r| {
                let mut m = BTreeMap::new();
                for (j, q) in r {
                    *m.entry(j).or_insert(0.0) += q;
                }
                m
            })
            .collect();
        Self::from_maps(maps)
    }

    fn from_maps(maps: Vec<BTreeMap<usize, f64>>) -> Self {
        SparseMatrix {
            rows: maps.into_iter().map(|m| m.into_iter().collect()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i]
            .binary_search_by_key(&j, |&(c, _)| c)
            .map(|k| self.rows[i][k].1)
            .unwrap_or(0.0)
    }

    pub fn row_dot(&self, i: usize, field: &[f64]) -> f64 {
        self.rows[i].iter().map(|&(j, q)| q * field[j]).sum()
    }

    pub fn apply(&self, field: &[f64]) -> Vec<f64> {
        (0..self.rows.len()).map(|i| self.row_dot(i, field)).collect()
    }

    /// `fieldᵀ M`.
    pub fn apply_transpose(&self, field: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows.len()];
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, q) in row {
                out[j] += field[i] * q;
            }
        }
        out
    }

    pub fn sum(&self, other: &SparseMatrix) -> SparseMatrix {
        let maps = self
            .rows
            .iter()
            .zip(&other.rows)
            .map(|(a, b)| {
                let mut m = BTreeMap::new();
                for &(j, q) in a.iter().chain(b) {
                    *m.entry(j).or_insert(0.0) += q;
                }
                m
            })
            .collect();
        SparseMatrix::from_maps(maps)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.rows.len();
        let mut m = DMatrix::zeros(n, n);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, q) in row {
                m[(i, j)] = q;
            }
        }
        m
    }

    pub fn max_abs_diff(&self, other: &SparseMatrix) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..self.rows.len() {
            for &(j, q) in self.rows[i].iter() {
                worst = worst.max((q - other.get(i, j)).abs());
            }
            for &(j, q) in other.rows[i].iter() {
                worst = worst.max((q - self.get(i, j)).abs());
            }
        }
        worst
    }
}

/// Discrete generator `Q_z` for one control.
#[derive(Clone, Debug)]
pub struct DiscreteGenerator {
    control: usize,
    truncation: Truncation,
    active: Vec<bool>,
    local: SparseMatrix,
    nonlocal: SparseMatrix,
    combined: SparseMatrix,
    exterior_mass: Vec<f64>,
    jump_rate: Vec<f64>,
}

impl DiscreteGenerator {
    /// Chain given directly by off-diagonal rates and an optional killing
    /// rate per row. Every node is active and all rates count as local.
    pub fn from_rates(off_diagonal: &[Vec<(usize, f64)>], exterior: Option<&[f64]>) -> Result<Self> {
        let n = off_diagonal.len();
        let exterior_mass = exterior.map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
        if exterior_mass.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: exterior_mass.len(),
            });
        }
        let mut maps = vec![BTreeMap::new(); n];
        for (i, row) in off_diagonal.iter().enumerate() {
            let mut total = exterior_mass[i];
            for &(j, q) in row {
                if j >= n {
                    return Err(Error::InvalidInput(format!("rate to node {j} out of range")));
                }
                if j == i {
                    continue;
                }
                if !(q >= 0.0) || !(exterior_mass[i] >= 0.0) {
                    return Err(Error::InvalidInput(format!(
                        "negative rate out of node {i}"
                    )));
                }
                *maps[i].entry(j).or_insert(0.0) += q;
                total += q;
            }
            maps[i].insert(i, -total);
        }
        let local = SparseMatrix::from_maps(maps);
        Ok(DiscreteGenerator {
            control: 0,
            truncation: Truncation::Reflecting,
            active: vec![true; n],
            nonlocal: SparseMatrix::zeros(n),
            combined: local.clone(),
            local,
            exterior_mass,
            jump_rate: vec![0.0; n],
        })
    }

    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub(crate) fn set_active(&mut self, active: Vec<bool>) {
        self.active = active;
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    pub fn control(&self) -> usize {
        self.control
    }

    pub fn truncation(&self) -> Truncation {
        self.truncation
    }

    /// Nodes whose rows carry dynamics (boundary nodes are inactive under
    /// absorbing truncation).
    pub fn is_active(&self, node: usize) -> bool {
        self.active[node]
    }

    pub fn active(&self) -> &[bool] {
        &self.active
    }

    pub fn rates(&self) -> &SparseMatrix {
        &self.combined
    }

    pub fn row(&self, node: usize) -> &[(usize, f64)] {
        self.combined.row(node)
    }

    pub fn diagonal(&self, node: usize) -> f64 {
        self.combined.get(node, node)
    }

    /// Rate at which mass leaves the box from each node.
    pub fn exterior_mass(&self) -> &[f64] {
        &self.exterior_mass
    }

    /// Total jump intensity `ν̄(x)` at each active node.
    pub fn jump_rate(&self) -> &[f64] {
        &self.jump_rate
    }

    pub fn row_sum(&self, node: usize) -> f64 {
        self.combined.row(node).iter().map(|&(_, q)| q).sum()
    }

    pub fn is_conservative(&self, tol: f64) -> bool {
        (0..self.len()).all(|i| !self.active[i] || self.row_sum(i).abs() <= tol * (1.0 + self.diagonal(i).abs()))
    }

    /// `(Q_z f)(x)` at every node; inactive rows are zero.
    pub fn apply(&self, field: &[f64]) -> Result<Vec<f64>> {
        if field.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: field.len(),
            });
        }
        Ok(self.combined.apply(field))
    }

    /// `(local, nonlocal)` with `local + nonlocal = Q_z` entrywise.
    pub fn split(&self) -> (&SparseMatrix, &SparseMatrix) {
        (&self.local, &self.nonlocal)
    }

    /// Coordinate-list dump, one `row col rate` triple per line.
    pub fn coordinate_list(&self) -> String {
        let mut out = format!(
            "# control {} truncation {:?} nodes {}\nrow,col,rate\n",
            self.control,
            self.truncation,
            self.len()
        );
        for i in 0..self.len() {
            for &(j, q) in self.combined.row(i) {
                let _ = writeln!(out, "{i},{j},{}", fmt_f64(q));
            }
        }
        out
    }
}

/// Assemble `Q_z` for one control on `grid`.
pub fn discretize_generator(
    problem: &ControlledProblem,
    grid: &Grid,
    control: usize,
    truncation: Truncation,
) -> Result<DiscreteGenerator> {
    problem.validate()?;
    if grid.dim() != problem.dim {
        return Err(Error::DimensionMismatch {
            expected: problem.dim,
            got: grid.dim(),
        });
    }
    if control >= problem.num_controls() {
        return Err(Error::InvalidInput(format!("control index {control} out of range")));
    }
    let n = grid.len();
    let d = grid.dim();
    let h = grid.spacing();
    let active: Vec<bool> = (0..n)
        .map(|i| truncation == Truncation::Reflecting || !grid.is_boundary(i))
        .collect();
    let mut local = vec![BTreeMap::new(); n];
    let mut nonlocal = vec![BTreeMap::new(); n];
    let mut exterior_mass = vec![0.0; n];
    let mut jump_rate = vec![0.0; n];

    for node in 0..n {
        let x = grid.coordinates(node);
        let c = problem.cost_at(&x, control);
        if !(c >= 0.0) {
            return Err(Error::NegativeCost {
                node,
                control,
                value: c,
            });
        }
        if !active[node] {
            continue;
        }
        let row = &mut local[node];
        let add = |offset: &[isize], rate: f64, row: &mut BTreeMap<usize, f64>| {
            if rate != 0.0 {
                if let Some(j) = grid.offset(node, offset) {
                    *row.entry(j).or_insert(0.0) += rate;
                }
            }
        };

        let a = problem.diffusion_at(&x);
        if a.len() != d * d || !is_symmetric(&a, d) || cholesky(&a, d).is_none() {
            return Err(Error::NotPositiveDefinite { node });
        }
        let mut offset = vec![0isize; d];
        for i in 0..d {
            let cross: f64 = (0..d)
                .filter(|&j| j != i)
                .map(|j| a[i * d + j].abs() / (h[i] * h[j]))
                .sum();
            let axis = a[i * d + i] / (h[i] * h[i]) - cross;
            if axis < -1e-12 * a[i * d + i] / (h[i] * h[i]) {
                return Err(Error::DiagonalDominance { node, axis: i });
            }
            let axis = axis.max(0.0);
            for s in [-1, 1] {
                offset[i] = s;
                add(&offset, axis, row);
            }
            offset[i] = 0;
            for j in (i + 1)..d {
                let aij = a[i * d + j];
                if aij == 0.0 {
                    continue;
                }
                let w = aij.abs() / (h[i] * h[j]);
                let sj = if aij > 0.0 { 1 } else { -1 };
                for s in [-1, 1] {
                    offset[i] = s;
                    offset[j] = s * sj;
                    add(&offset, w, row);
                }
                offset[i] = 0;
                offset[j] = 0;
            }
        }

        let b = problem.drift_at(&x, control);
        for i in 0..d {
            if b[i] != 0.0 {
                offset[i] = if b[i] > 0.0 { 1 } else { -1 };
                add(&offset, b[i].abs() / h[i], row);
                offset[i] = 0;
            }
        }

        let mut total_jump = 0.0;
        for (k, comp) in problem.levy.iter().enumerate() {
            let rate = comp.rate.eval(&x);
            if !(rate >= 0.0) || !rate.is_finite() {
                return Err(Error::NegativeRate {
                    component: k,
                    node,
                    value: rate,
                });
            }
            if rate == 0.0 {
                continue;
            }
            total_jump += rate;
            match &comp.kind {
                JumpKind::DiracAtom(g) => {
                    let dest: Vec<f64> = x.iter().zip(g.eval(&x)).map(|(x, g)| x + g).collect();
                    if truncation == Truncation::Absorbing && !grid.contains(&dest) {
                        exterior_mass[node] += rate;
                    } else {
                        *nonlocal[node].entry(grid.nearest_node(&dest)).or_insert(0.0) += rate;
                    }
                }
                JumpKind::GridDensity(psi) => {
                    for (lattice, w) in density_weights(grid, &x, psi) {
                        match lattice_to_node(grid, &lattice, truncation) {
                            Some(j) => *nonlocal[node].entry(j).or_insert(0.0) += rate * w,
                            None => exterior_mass[node] += rate * w,
                        }
                    }
                }
            }
        }
        jump_rate[node] = total_jump;
        let off: f64 = local[node].values().sum();
        local[node].insert(node, -off - total_jump);
    }

    let local = SparseMatrix::from_maps(local);
    let nonlocal = SparseMatrix::from_maps(nonlocal);
    let combined = local.sum(&nonlocal);
    Ok(DiscreteGenerator {
        control,
        truncation,
        active,
        local,
        nonlocal,
        combined,
        exterior_mass,
        jump_rate,
    })
}

/// Cell-midpoint quadrature of a jump density from `x`: lattice points of
/// the (unbounded) grid lattice with normalized weights summing to 1.
fn density_weights(grid: &Grid, x: &[f64], psi: &JumpDensity) -> Vec<(Vec<isize>, f64)> {
    let d = grid.dim();
    let w = psi.support_half_width();
    let center = psi.center();
    let lo: Vec<isize> = (0..d)
        .map(|k| grid.lattice_index(k, x[k] + center[k] - w))
        .collect();
    let hi: Vec<isize> = (0..d)
        .map(|k| grid.lattice_index(k, x[k] + center[k] + w))
        .collect();
    let mut points = Vec::new();
    let mut idx = lo.clone();
    let mut y = vec![0.0; d];
    let mut total = 0.0;
    'outer: loop {
        for k in 0..d {
            let coord = -grid.radius() + idx[k] as f64 * grid.spacing()[k];
            y[k] = coord - x[k];
        }
        let p = psi.pdf(&y);
        if p > 0.0 {
            total += p;
            points.push((idx.clone(), p));
        }
        for k in 0..d {
            idx[k] += 1;
            if idx[k] <= hi[k] {
                continue 'outer;
            }
            idx[k] = lo[k];
        }
        break;
    }
    if total > 0.0 {
        for p in &mut points {
            p.1 /= total;
        }
        points
    } else {
        // support narrower than a cell: all mass at the nearest lattice point
        let nearest = (0..d)
            .map(|k| grid.lattice_index(k, x[k] + center[k]))
            .collect();
        vec![(nearest, 1.0)]
    }
}

fn lattice_to_node(grid: &Grid, lattice: &[isize], truncation: Truncation) -> Option<usize> {
    let counts = grid.counts();
    let inside = lattice
        .iter()
        .zip(counts)
        .all(|(&i, &n)| i >= 0 && i < n as isize);
    if !inside && truncation == Truncation::Absorbing {
        return None;
    }
    let multi: Vec<usize> = lattice
        .iter()
        .zip(counts)
        .map(|(&i, &n)| i.clamp(0, n as isize - 1) as usize)
        .collect();
    Some(grid.flat_index(&multi))
}

/// `(A_z f)(x)` at every node.
pub fn apply_generator(generator: &DiscreteGenerator, field: &[f64]) -> Result<Vec<f64>> {
    generator.apply(field)
}

pub fn split_generator(generator: &DiscreteGenerator) -> (SparseMatrix, SparseMatrix) {
    let (l, nl) = generator.split();
    (l.clone(), nl.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{Cost, Diffusion, Displacement, Drift, LevyComponent};
    use approx::assert_relative_eq;

    fn problem_1d(a: f64, b: f64, levy: Vec<LevyComponent>, radius: f64) -> ControlledProblem {
        ControlledProblem {
            dim: 1,
            controls: vec![vec![0.0]],
            diffusion: Diffusion::scaled_identity(1, a),
            drift: Drift::Linear {
                matrix: vec![vec![0.0]],
                control_gain: vec![vec![0.0]],
                offset: vec![b],
            },
            levy,
            cost: Cost::Constant { value: 1.0 },
            domain_radius: radius,
        }
    }

    #[test]
    fn central_second_difference_stencil() {
        let p = problem_1d(1.0, 0.0, vec![], 2.0);
        let g = Grid::uniform(1, 2.0, 5).unwrap();
        let q = discretize_generator(&p, &g, 0, Truncation::Absorbing).unwrap();
        assert_eq!(q.row(2), &[(1, 1.0), (2, -2.0), (3, 1.0)]);
        assert!(q.row(0).is_empty());
    }

    #[test]
    fn upwind_drift_uses_right_neighbor_for_positive_drift() {
        let p = problem_1d(1.0, 2.0, vec![], 2.0);
        let g = Grid::uniform(1, 2.0, 5).unwrap();
        let q = discretize_generator(&p, &g, 0, Truncation::Absorbing).unwrap();
        // a/h² on both sides, plus b/h = 2 on the right only
        assert_eq!(q.row(2), &[(1, 1.0), (2, -4.0), (3, 3.0)]);
        assert!(q.row_sum(2) <= 0.0);
    }

    #[test]
    fn jump_to_origin_adds_unit_rate_to_center() {
        let levy = vec![LevyComponent::dirac(1.0, Displacement::ToPoint(vec![0.0]))];
        let p = problem_1d(1.0, 0.0, levy, 2.0);
        let g = Grid::uniform(1, 2.0, 5).unwrap();
        let q = discretize_generator(&p, &g, 0, Truncation::Reflecting).unwrap();
        let (local, nonlocal) = q.split();
        for node in 0..5 {
            assert_eq!(nonlocal.row(node), &[(2, 1.0)]);
            let off: f64 = local.row(node).iter().filter(|e| e.0 != node).map(|e| e.1).sum();
            assert_relative_eq!(local.get(node, node), -off - 1.0);
        }
        // at the origin itself the jump is a self-loop
        assert_relative_eq!(q.diagonal(2), -2.0);
        assert!(q.is_conservative(1e-14));
    }

    #[test]
    fn absorbing_mode_kills_exterior_jumps() {
        let levy = vec![LevyComponent::dirac(0.5, Displacement::Shift(vec![1.5]))];
        let p = problem_1d(1.0, 0.0, levy, 2.0);
        let g = Grid::uniform(1, 2.0, 5).unwrap();
        let q = discretize_generator(&p, &g, 0, Truncation::Absorbing).unwrap();
        assert_eq!(q.exterior_mass(), &[0.0, 0.0, 0.0, 0.5, 0.0]);
        assert_relative_eq!(q.row_sum(3), -0.5);
        assert_relative_eq!(q.row_sum(2), 0.0);
        let r = discretize_generator(&p, &g, 0, Truncation::Reflecting).unwrap();
        assert!(r.exterior_mass().iter().all(|&e| e == 0.0));
        assert_relative_eq!(r.rates().get(3, 4), 0.5 + 1.0);
    }

    #[test]
    fn density_quadrature_preserves_total_rate() {
        let psi = JumpDensity::Gaussian {
            mean: vec![0.2, -0.1],
            std: 0.7,
        };
        let g = Grid::uniform(2, 2.0, 9).unwrap();
        let w = density_weights(&g, &[0.5, -1.0], &psi);
        let total: f64 = w.iter().map(|p| p.1).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(w.iter().all(|p| p.1 >= 0.0));
    }

    #[test]
    fn rejects_indefinite_and_non_dominant_diffusion() {
        let mut p = problem_1d(1.0, 0.0, vec![], 1.0);
        p.diffusion = Diffusion::scaled_identity(1, -1.0);
        let g = Grid::uniform(1, 1.0, 5).unwrap();
        assert!(matches!(
            discretize_generator(&p, &g, 0, Truncation::Absorbing),
            Err(Error::NotPositiveDefinite { .. })
        ));

        let p2 = ControlledProblem {
            dim: 2,
            controls: vec![vec![0.0]],
            diffusion: Diffusion::Constant {
                matrix: vec![vec![1.0, 0.9], vec![0.9, 1.0]],
            },
            drift: Drift::Linear {
                matrix: vec![vec![0.0; 2]; 2],
                control_gain: vec![vec![0.0]; 2],
                offset: vec![0.0; 2],
            },
            levy: vec![],
            cost: Cost::Constant { value: 0.0 },
            domain_radius: 1.0,
        };
        let g2 = Grid::new(2, 1.0, &[5, 9]).unwrap();
        assert!(matches!(
            discretize_generator(&p2, &g2, 0, Truncation::Absorbing),
            Err(Error::DiagonalDominance { .. })
        ));
    }

    #[test]
    fn rejects_negative_cost_and_rate() {
        let mut p = problem_1d(1.0, 0.0, vec![], 1.0);
        p.cost = Cost::Constant { value: -1.0 };
        let g = Grid::uniform(1, 1.0, 5).unwrap();
        assert!(matches!(
            discretize_generator(&p, &g, 0, Truncation::Absorbing),
            Err(Error::NegativeCost { .. })
        ));
        let p = problem_1d(1.0, 0.0, vec![LevyComponent::dirac(-1.0, Displacement::Shift(vec![0.5]))], 1.0);
        assert!(matches!(
            discretize_generator(&p, &g, 0, Truncation::Absorbing),
            Err(Error::NegativeRate { .. })
        ));
    }

    #[test]
    fn cross_diffusion_is_exact_on_bilinear_field() {
        let p = ControlledProblem {
            dim: 2,
            controls: vec![vec![0.0]],
            diffusion: Diffusion::Constant {
                matrix: vec![vec![1.0, -0.3], vec![-0.3, 0.8]],
            },
            drift: Drift::Linear {
                matrix: vec![vec![0.0; 2]; 2],
                control_gain: vec![vec![0.0]; 2],
                offset: vec![0.0; 2],
            },
            levy: vec![],
            cost: Cost::Constant { value: 0.0 },
            domain_radius: 1.0,
        };
        let g = Grid::uniform(2, 1.0, 7).unwrap();
        let q = discretize_generator(&p, &g, 0, Truncation::Absorbing).unwrap();
        // f = x y + x² + 2 y²; Σ a^{ij} ∂_ij f = 2·(−0.3) + 2·1.0 + 4·0.8
        let f: Vec<f64> = (0..g.len())
            .map(|i| {
                let x = g.coordinates(i);
                x[0] * x[1] + x[0] * x[0] + 2.0 * x[1] * x[1]
            })
            .collect();
        let af = q.apply(&f).unwrap();
        for i in g.interior_nodes() {
            assert_relative_eq!(af[i], -0.6 + 2.0 + 3.2, epsilon = 1e-9);
        }
        for i in 0..g.len() {
            for &(j, r) in q.row(i) {
                assert!(j == i || r >= 0.0);
            }
        }
    }

    #[test]
    fn coordinate_list_has_one_line_per_entry() {
        let p = problem_1d(1.0, 0.0, vec![], 1.0);
        let g = Grid::uniform(1, 1.0, 3).unwrap();
        let q = discretize_generator(&p, &g, 0, Truncation::Absorbing).unwrap();
        let dump = q.coordinate_list();
        let lines: Vec<&str> = dump.lines().skip(2).collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("1,1,-2.0"));
    }
}
