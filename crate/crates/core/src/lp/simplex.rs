//! Dense revised simplex for `min cᵀx  s.t.  A x = b, x ≥ 0`.
//!
//! The basis inverse is kept explicitly and refreshed from scratch every
//! [`REINVERT_EVERY`] pivots. Rows are equilibrated to unit max-abs before
//! solving. Pricing is Dantzig's rule; after a run of degenerate pivots the
//! solver switches to Bland's rule until the objective moves again. Phase one
//! starts from an all-artificial basis; artificials left basic at zero after
//! phase one mark redundant rows.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const REINVERT_EVERY: usize = 64;
const DEGENERATE_RUN: usize = 30;
/// Pivots below this (relative to the column) are avoided when possible.
const PIVOT_TOL: f64 = 1e-7;
const TINY_PIVOT: f64 = 1e-11;
const HARRIS_SLACK: f64 = 1e-10;

/// Sparse column-major standard-form problem.
#[derive(Clone, Debug, PartialEq)]
pub struct StandardForm {
    pub rows: usize,
    pub columns: Vec<Vec<(usize, f64)>>,
    pub rhs: Vec<f64>,
    pub objective: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimplexSolution {
    pub x: Vec<f64>,
    /// Row multipliers `y` of the original (unscaled) rows.
    pub duals: Vec<f64>,
    pub objective: f64,
    pub reduced_costs: Vec<f64>,
    /// Structural variable per row, or `None` for a redundant row.
    pub basis: Vec<Option<usize>>,
    pub iterations: usize,
    /// Some basic structural variable sits at zero, so the multipliers need
    /// not be unique.
    pub degenerate: bool,
}

struct Tableau {
    m: usize,
    n: usize,
    cols: Vec<Vec<(usize, f64)>>,
    rhs: Vec<f64>,
    scale: Vec<f64>,
    basis: Vec<usize>,
    position: Vec<Option<usize>>,
    binv: Vec<f64>,
    xb: Vec<f64>,
    iterations: usize,
    since_reinvert: usize,
}

impl Tableau {
    fn new(form: &StandardForm) -> Self {
        let m = form.rows;
        let n = form.columns.len();
        let mut scale = vec![0.0_f64; m];
        for col in &form.columns {
            for &(i, a) in col {
                scale[i] = scale[i].max(a.abs());
            }
        }
        for (i, s) in scale.iter_mut().enumerate() {
            *s = if *s > 0.0 { 1.0 / *s } else { 1.0 };
            if form.rhs[i] < 0.0 {
                *s = -*s;
            }
        }
        let cols = form
            .columns
            .iter()
            .map(|c| c.iter().map(|&(i, a)| (i, a * scale[i])).collect())
            .collect();
        let rhs: Vec<f64> = form.rhs.iter().zip(&scale).map(|(b, s)| b * s).collect();
        let mut binv = vec![0.0; m * m];
        for i in 0..m {
            binv[i * m + i] = 1.0;
        }
        let mut position = vec![None; n + m];
        for i in 0..m {
            position[n + i] = Some(i);
        }
        Tableau {
            m,
            n,
            cols,
            xb: rhs.clone(),
            rhs,
            scale,
            basis: (n..n + m).collect(),
            position,
            binv,
            iterations: 0,
            since_reinvert: 0,
        }
    }

    /// Tableau on a given starting basis, if it is usable.
    fn warm(form: &StandardForm, start: &[usize]) -> Option<Self> {
        let m = form.rows;
        let n = form.columns.len();
        let mut seen = vec![false; n + m];
        if start.len() != m || start.iter().any(|&j| j >= n + m || std::mem::replace(&mut seen[j], true)) {
            return None;
        }
        let mut t = Tableau::new(form);
        t.position = vec![None; n + m];
        for (i, &j) in start.iter().enumerate() {
            t.position[j] = Some(i);
        }
        t.basis = start.to_vec();
        let mut b = DMatrix::zeros(m, m);
        for (k, &j) in t.basis.iter().enumerate() {
            match t.column(j) {
                ColumnRef::Sparse(col) => col.iter().for_each(|&(r, a)| b[(r, k)] = a),
                ColumnRef::Unit(r) => b[(r, k)] = 1.0,
            }
        }
        let xb = b.clone().lu().solve(&DVector::from_column_slice(&t.rhs))?;
        let residual = (&b * &xb - DVector::from_column_slice(&t.rhs)).amax();
        let artificial_level: f64 = (0..m).filter(|&i| t.basis[i] >= n).map(|i| xb[i].abs()).sum();
        if residual > 1e-9 || xb.iter().any(|&v| v < -1e-9) || artificial_level > 1e-9 {
            return None;
        }
        t.reinvert().ok()?;
        Some(t)
    }

    fn column(&self, j: usize) -> ColumnRef<'_> {
        if j < self.n {
            ColumnRef::Sparse(&self.cols[j])
        } else {
            ColumnRef::Unit(j - self.n)
        }
    }

    /// `B⁻¹ a_j`.
    fn ftran(&self, j: usize) -> Vec<f64> {
        let m = self.m;
        match self.column(j) {
            ColumnRef::Sparse(col) => (0..m)
                .map(|i| col.iter().map(|&(r, a)| self.binv[i * m + r] * a).sum())
                .collect(),
            ColumnRef::Unit(r) => (0..m).map(|i| self.binv[i * m + r]).collect(),
        }
    }

    fn dot_column(&self, y: &[f64], j: usize) -> f64 {
        match self.column(j) {
            ColumnRef::Sparse(col) => col.iter().map(|&(r, a)| y[r] * a).sum(),
            ColumnRef::Unit(r) => y[r],
        }
    }

    /// `c_Bᵀ B⁻¹`.
    fn btran(&self, cost: &dyn Fn(usize) -> f64) -> Vec<f64> {
        let m = self.m;
        let mut y = vec![0.0; m];
        for i in 0..m {
            let cb = cost(self.basis[i]);
            if cb != 0.0 {
                let row = &self.binv[i * m..(i + 1) * m];
                for (yk, b) in y.iter_mut().zip(row) {
                    *yk += cb * b;
                }
            }
        }
        y
    }

    fn reinvert(&mut self) -> Result<()> {
        let m = self.m;
        let mut b = DMatrix::zeros(m, m);
        for (k, &j) in self.basis.iter().enumerate() {
            match self.column(j) {
                ColumnRef::Sparse(col) => {
                    for &(r, a) in col {
                        b[(r, k)] = a;
                    }
                }
                ColumnRef::Unit(r) => b[(r, k)] = 1.0,
            }
        }
        let inv = b
            .try_inverse()
            .ok_or_else(|| Error::SingularSystem("simplex basis".into()))?;
        for i in 0..m {
            for k in 0..m {
                self.binv[i * m + k] = inv[(i, k)];
            }
        }
        for i in 0..m {
            let row = &self.binv[i * m..(i + 1) * m];
            self.xb[i] = row.iter().zip(&self.rhs).map(|(a, b)| a * b).sum::<f64>().max(0.0);
        }
        self.since_reinvert = 0;
        Ok(())
    }

    fn pivot(&mut self, r: usize, q: usize, w: &[f64], step: f64) {
        let m = self.m;
        for i in 0..m {
            if i != r {
                self.xb[i] -= step * w[i];
                if self.xb[i] < 0.0 && self.xb[i] > -1e-9 {
                    self.xb[i] = 0.0;
                }
            }
        }
        self.xb[r] = step;
        let pivot = w[r];
        let pivot_row: Vec<f64> = self.binv[r * m..(r + 1) * m].iter().map(|v| v / pivot).collect();
        for i in 0..m {
            if i == r || w[i] == 0.0 {
                continue;
            }
            let f = w[i];
            let row = &mut self.binv[i * m..(i + 1) * m];
            for (a, p) in row.iter_mut().zip(&pivot_row) {
                *a -= f * p;
            }
        }
        self.binv[r * m..(r + 1) * m].copy_from_slice(&pivot_row);
        self.position[self.basis[r]] = None;
        self.position[q] = Some(r);
        self.basis[r] = q;
        self.iterations += 1;
        self.since_reinvert += 1;
    }

    /// Run simplex iterations for the given cost; only structural columns
    /// may enter.
    fn optimize(&mut self, cost: &dyn Fn(usize) -> f64, phase_two: bool, max_iterations: usize) -> Result<()> {
        let cmax = (0..self.n).map(|j| cost(j).abs()).fold(1.0_f64, f64::max);
        let dual_tol = 1e-11 * cmax;
        let mut degenerate_run = 0;
        loop {
            if self.iterations >= max_iterations {
                return Err(Error::NonConvergence {
                    iterations: self.iterations,
                    residual: f64::NAN,
                });
            }
            if self.since_reinvert >= REINVERT_EVERY {
                self.reinvert()?;
            }
            let bland = degenerate_run >= DEGENERATE_RUN;
            let y = self.btran(cost);
            let mut entering = None;
            let mut best = -dual_tol;
            for j in 0..self.n {
                if self.position[j].is_some() {
                    continue;
                }
                let d = cost(j) - self.dot_column(&y, j);
                if d < best {
                    entering = Some(j);
                    if bland {
                        break;
                    }
                    best = d;
                }
            }
            let Some(q) = entering else {
                return Ok(());
            };
            let w = self.ftran(q);
            let leave = self.ratio_test(&w, phase_two, bland);
            let Some((r, step)) = leave else {
                return Err(Error::Unbounded);
            };
            if step <= 1e-12 {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
            self.pivot(r, q, &w, step);
        }
    }

    /// Leaving row and step length. Harris two-pass rule: among rows whose
    /// ratio is within a small feasibility slack of the minimum, take the
    /// largest pivot. Under Bland's rule, the strict minimum ratio with the
    /// lowest basic index.
    fn ratio_test(&self, w: &[f64], phase_two: bool, bland: bool) -> Option<(usize, f64)> {
        let wmax = w.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        self.ratio_test_with(w, phase_two, bland, PIVOT_TOL * wmax.max(1.0))
            .or_else(|| self.ratio_test_with(w, phase_two, bland, TINY_PIVOT * wmax.max(1.0)))
    }

    fn ratio_test_with(&self, w: &[f64], phase_two: bool, bland: bool, tol: f64) -> Option<(usize, f64)> {
        let ratio = |i: usize| -> Option<f64> {
            let artificial = self.basis[i] >= self.n;
            if phase_two && artificial && w[i].abs() > tol {
                Some(0.0)
            } else if w[i] > tol {
                Some(self.xb[i].max(0.0) / w[i])
            } else {
                None
            }
        };
        if bland {
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.m {
                let Some(t) = ratio(i) else { continue };
                let better = match leave {
                    None => true,
                    Some((k, best)) => t < best - 1e-12 || (t <= best + 1e-12 && self.basis[i] < self.basis[k]),
                };
                if better {
                    leave = Some((i, t));
                }
            }
            return leave;
        }
        let mut bound = f64::INFINITY;
        for i in 0..self.m {
            if let Some(t) = ratio(i) {
                let relaxed = if t == 0.0 && self.basis[i] >= self.n && phase_two {
                    0.0
                } else {
                    (self.xb[i].max(0.0) + HARRIS_SLACK) / w[i]
                };
                bound = bound.min(relaxed);
            }
        }
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..self.m {
            let Some(t) = ratio(i) else { continue };
            if t <= bound && leave.is_none_or(|(k, _)| w[i].abs() > w[k].abs()) {
                leave = Some((i, t));
            }
        }
        leave
    }

    /// Pivot zero-level artificials out of the basis where a structural
    /// column can replace them.
    fn drive_out_artificials(&mut self) {
        let m = self.m;
        for r in 0..m {
            if self.basis[r] < self.n {
                continue;
            }
            let row: Vec<f64> = self.binv[r * m..(r + 1) * m].to_vec();
            let mut best: Option<(usize, f64)> = None;
            for j in 0..self.n {
                if self.position[j].is_some() {
                    continue;
                }
                let v = self.dot_column(&row, j).abs();
                if v > 1e-7 && best.is_none_or(|(_, b)| v > b) {
                    best = Some((j, v));
                }
            }
            if let Some((q, _)) = best {
                let w = self.ftran(q);
                self.pivot(r, q, &w, self.xb[r]);
            }
        }
    }
}

enum ColumnRef<'a> {
    Sparse(&'a [(usize, f64)]),
    Unit(usize),
}

pub fn solve(form: &StandardForm) -> Result<SimplexSolution> {
    solve_from(form, None)
}

/// Like [`solve`], but with `Some(start)` phase two begins at that basis
/// (one column per row; index `n + i` is the artificial of row `i`). The
/// start must be nonsingular and primal feasible with artificials at zero.
pub fn solve_from(form: &StandardForm, start: Option<&[usize]>) -> Result<SimplexSolution> {
    let m = form.rows;
    let n = form.columns.len();
    if form.rhs.len() != m || form.objective.len() != n {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: form.rhs.len(),
        });
    }
    let max_iterations = 50 * (m + n) + 1000;
    let mut t = match start {
        Some(b) => Tableau::warm(form, b)
            .ok_or_else(|| Error::SingularSystem("starting basis is singular or infeasible".into()))?,
        None => {
            let mut t = Tableau::new(form);
            let phase_one = |j: usize| if j >= n { 1.0 } else { 0.0 };
            t.optimize(&phase_one, false, max_iterations)?;
            t.reinvert()?;
            let infeasibility: f64 = (0..m).filter(|&i| t.basis[i] >= n).map(|i| t.xb[i]).sum();
            let rhs_scale = 1.0 + t.rhs.iter().map(|b| b.abs()).sum::<f64>();
            if infeasibility > 1e-9 * rhs_scale {
                return Err(Error::Infeasible(infeasibility));
            }
            t.drive_out_artificials();
            t.reinvert()?;
            t
        }
    };

    let phase_two = |j: usize| if j < n { form.objective[j] } else { 0.0 };
    t.optimize(&phase_two, true, max_iterations)?;
    t.reinvert()?;

    let mut x = vec![0.0; n];
    let mut basis = vec![None; m];
    let mut degenerate = false;
    for i in 0..m {
        let j = t.basis[i];
        if j < n {
            x[j] = t.xb[i];
            basis[i] = Some(j);
            if t.xb[i] <= 1e-12 {
                degenerate = true;
            }
        }
    }
    let y_scaled = t.btran(&phase_two);
    let duals: Vec<f64> = y_scaled.iter().zip(&t.scale).map(|(y, s)| y * s).collect();
    let reduced_costs = (0..n)
        .map(|j| {
            form.objective[j]
                - form.columns[j].iter().map(|&(r, a)| duals[r] * a).sum::<f64>()
        })
        .collect();
    let objective = x.iter().zip(&form.objective).map(|(x, c)| x * c).sum();
    Ok(SimplexSolution {
        x,
        duals,
        objective,
        reduced_costs,
        basis,
        iterations: t.iterations,
        degenerate,
    })
}
