//! Continuous-space problem data.
//!
//! A [`ControlledProblem`] carries the coefficients of the controlled
//! integro-differential generator
//!
//! ```text
//! A_z u(x) = Σ a^{ij}(x) ∂_ij u(x) + Σ b^i(x,z) ∂_i u(x) + ∫ (u(x+y) − u(x)) ν_x(dy)
//! ```
//!
//! together with a running cost `c(x,z)` and a finite control set. The
//! diffusion matrix is `a = ½σσᵀ`, so there is no ½ in front of the second
//! order term. The jump measure is finite, so any small-jump compensator is
//! assumed to be folded into the drift `b`.
//!
//! Coefficients are given by built-in parametric families (which can be
//! written to and read from config files) or by user closures.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub type StateFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
pub type ControlledVectorFn = Arc<dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync>;
pub type ControlledScalarFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

/// Diffusion matrix `a(x)`, row-major `d × d`.
#[derive(Clone)]
pub enum Diffusion {
    Constant { matrix: Vec<Vec<f64>> },
    Custom(VectorFn),
}

impl Diffusion {
    pub fn scaled_identity(dim: usize, scale: f64) -> Self {
        let matrix = (0..dim)
            .map(|i| (0..dim).map(|j| if i == j { scale } else { 0.0 }).collect())
            .collect();
        Diffusion::Constant { matrix }
    }

    /// Row-major flattened `a(x)`.
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Diffusion::Constant { matrix } => matrix.iter().flatten().copied().collect(),
            Diffusion::Custom(f) => f(x),
        }
    }
}

/// Drift `b(x, z)`.
#[derive(Clone)]
pub enum Drift {
    /// `b = A x + B z + offset`.
    Linear {
        matrix: Vec<Vec<f64>>,
        control_gain: Vec<Vec<f64>>,
        offset: Vec<f64>,
    },
    /// `b = −gain · x / max(1, |x|)^{2−θ} + B z`, so that
    /// `⟨b, x⟩ ≈ −gain |x|^θ` far from the origin.
    Saturating {
        gain: f64,
        theta: f64,
        control_gain: Vec<Vec<f64>>,
    },
    Custom(ControlledVectorFn),
}

fn mat_vec(m: &[Vec<f64>], v: &[f64], out: &mut [f64]) {
    for (o, row) in out.iter_mut().zip(m) {
        *o += row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    }
}

impl Drift {
    pub fn eval(&self, x: &[f64], z: &[f64]) -> Vec<f64> {
        match self {
            Drift::Linear {
                matrix,
                control_gain,
                offset,
            } => {
                let mut out = offset.clone();
                mat_vec(matrix, x, &mut out);
                mat_vec(control_gain, z, &mut out);
                out
            }
            Drift::Saturating {
                gain,
                theta,
                control_gain,
            } => {
                let norm = norm(x);
                let scale = gain / norm.max(1.0).powf(2.0 - theta);
                let mut out: Vec<f64> = x.iter().map(|xi| -scale * xi).collect();
                mat_vec(control_gain, z, &mut out);
                out
            }
            Drift::Custom(f) => f(x, z),
        }
    }
}

/// Running cost `c(x, z) ≥ 0`.
#[derive(Clone)]
pub enum Cost {
    Constant {
        value: f64,
    },
    /// `Σ p_i x_i² + Σ r_j z_j² + offset`.
    Quadratic {
        state_weights: Vec<f64>,
        control_weights: Vec<f64>,
        offset: f64,
    },
    /// `scale · |x|² / (1 + |x|²) + Σ r_j z_j² + offset`.
    Bounded {
        scale: f64,
        control_weights: Vec<f64>,
        offset: f64,
    },
    Custom(ControlledScalarFn),
}

fn weighted_squares(w: &[f64], v: &[f64]) -> f64 {
    w.iter().zip(v).map(|(w, v)| w * v * v).sum()
}

impl Cost {
    pub fn eval(&self, x: &[f64], z: &[f64]) -> f64 {
        match self {
            Cost::Constant { value } => *value,
            Cost::Quadratic {
                state_weights,
                control_weights,
                offset,
            } => weighted_squares(state_weights, x) + weighted_squares(control_weights, z) + offset,
            Cost::Bounded {
                scale,
                control_weights,
                offset,
            } => {
                let r2 = norm_sq(x);
                scale * r2 / (1.0 + r2) + weighted_squares(control_weights, z) + offset
            }
            Cost::Custom(f) => f(x, z),
        }
    }
}

/// Intensity `λ(x)` of a jump component.
#[derive(Clone)]
pub enum JumpRate {
    Constant(f64),
    Custom(StateFn),
}

impl JumpRate {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            JumpRate::Constant(r) => *r,
            JumpRate::Custom(f) => f(x),
        }
    }
}

/// Deterministic displacement `g(x)` of a point-mass jump.
#[derive(Clone)]
pub enum Displacement {
    /// Jump to a fixed point: `g(x) = target − x`.
    ToPoint(Vec<f64>),
    /// Translation-invariant shift: `g(x) = shift`.
    Shift(Vec<f64>),
    Custom(VectorFn),
}

impl Displacement {
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Displacement::ToPoint(t) => t.iter().zip(x).map(|(t, x)| t - x).collect(),
            Displacement::Shift(s) => s.clone(),
            Displacement::Custom(f) => f(x),
        }
    }
}

/// Translation-invariant jump-size density `ψ(y)`.
#[derive(Clone, Debug, PartialEq)]
pub enum JumpDensity {
    /// Independent normal coordinates with common standard deviation.
    Gaussian { mean: Vec<f64>, std: f64 },
    /// Uniform on the cube `center + [−half_width, half_width]^d`.
    Uniform { center: Vec<f64>, half_width: f64 },
}

impl JumpDensity {
    pub fn pdf(&self, y: &[f64]) -> f64 {
        match self {
            JumpDensity::Gaussian { mean, std } => {
                let norm = (2.0 * std::f64::consts::PI).sqrt() * std;
                y.iter()
                    .zip(mean)
                    .map(|(y, m)| (-0.5 * ((y - m) / std).powi(2)).exp() / norm)
                    .product()
            }
            JumpDensity::Uniform { center, half_width } => {
                let inside = y
                    .iter()
                    .zip(center)
                    .all(|(y, c)| (y - c).abs() <= *half_width);
                if inside {
                    (2.0 * half_width).powi(-(y.len() as i32))
                } else {
                    0.0
                }
            }
        }
    }

    pub fn center(&self) -> &[f64] {
        match self {
            JumpDensity::Gaussian { mean, .. } => mean,
            JumpDensity::Uniform { center, .. } => center,
        }
    }

    /// Half-width of the box outside of which the density is treated as zero.
    pub fn support_half_width(&self) -> f64 {
        match self {
            JumpDensity::Gaussian { std, .. } => 6.0 * std,
            JumpDensity::Uniform { half_width, .. } => *half_width,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            JumpDensity::Gaussian { mean, std } => mean
                .iter()
                .map(|m| {
                    let n: f64 = StandardNormal.sample(rng);
                    m + std * n
                })
                .collect(),
            JumpDensity::Uniform { center, half_width } => center
                .iter()
                .map(|c| c + half_width * (2.0 * rng.random::<f64>() - 1.0))
                .collect(),
        }
    }

    /// `E[Y]` and `E|Y|²`.
    pub fn moments(&self) -> (Vec<f64>, f64) {
        let d = self.center().len() as f64;
        match self {
            JumpDensity::Gaussian { mean, std } => (mean.clone(), norm_sq(mean) + d * std * std),
            JumpDensity::Uniform { center, half_width } => {
                (center.clone(), norm_sq(center) + d * half_width * half_width / 3.0)
            }
        }
    }
}

#[derive(Clone)]
pub enum JumpKind {
    DiracAtom(Displacement),
    GridDensity(JumpDensity),
}

/// One compound-Poisson component of the Lévy kernel: jumps arrive at rate
/// `λ(x)` and move the state by either a deterministic `g(x)` or a draw from
/// a density.
#[derive(Clone)]
pub struct LevyComponent {
    pub rate: JumpRate,
    pub kind: JumpKind,
}

impl LevyComponent {
    pub fn dirac(rate: f64, displacement: Displacement) -> Self {
        LevyComponent {
            rate: JumpRate::Constant(rate),
            kind: JumpKind::DiracAtom(displacement),
        }
    }

    pub fn density(rate: f64, density: JumpDensity) -> Self {
        LevyComponent {
            rate: JumpRate::Constant(rate),
            kind: JumpKind::GridDensity(density),
        }
    }

    pub fn sample_displacement<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Vec<f64> {
        match &self.kind {
            JumpKind::DiracAtom(g) => g.eval(x),
            JumpKind::GridDensity(psi) => psi.sample(rng),
        }
    }
}

#[derive(Clone)]
pub struct ControlledProblem {
    pub dim: usize,
    pub controls: Vec<Vec<f64>>,
    pub diffusion: Diffusion,
    pub drift: Drift,
    pub levy: Vec<LevyComponent>,
    pub cost: Cost,
    pub domain_radius: f64,
}

impl fmt::Debug for ControlledProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlledProblem")
            .field("dim", &self.dim)
            .field("controls", &self.controls)
            .field("levy_components", &self.levy.len())
            .field("domain_radius", &self.domain_radius)
            .finish_non_exhaustive()
    }
}

impl ControlledProblem {
    pub fn num_controls(&self) -> usize {
        self.controls.len()
    }

    pub fn diffusion_at(&self, x: &[f64]) -> Vec<f64> {
        self.diffusion.eval(x)
    }

    pub fn drift_at(&self, x: &[f64], control: usize) -> Vec<f64> {
        self.drift.eval(x, &self.controls[control])
    }

    pub fn cost_at(&self, x: &[f64], control: usize) -> f64 {
        self.cost.eval(x, &self.controls[control])
    }

    /// Total jump intensity `ν̄(x)`.
    pub fn total_jump_rate(&self, x: &[f64]) -> f64 {
        self.levy.iter().map(|c| c.rate.eval(x)).sum()
    }

    /// Structural checks that do not depend on a grid.
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidInput("dimension must be positive".into()));
        }
        if !(self.domain_radius > 0.0) {
            return Err(Error::InvalidRadius(self.domain_radius));
        }
        if self.controls.is_empty() {
            return Err(Error::InvalidInput("control set is empty".into()));
        }
        let control_dim = self.controls[0].len();
        if let Some(bad) = self.controls.iter().find(|z| z.len() != control_dim) {
            return Err(Error::DimensionMismatch {
                expected: control_dim,
                got: bad.len(),
            });
        }
        let origin = vec![0.0; self.dim];
        let a = self.diffusion.eval(&origin);
        if a.len() != self.dim * self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim * self.dim,
                got: a.len(),
            });
        }
        let b = self.drift.eval(&origin, &self.controls[0]);
        if b.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: b.len(),
            });
        }
        for comp in &self.levy {
            let len = match &comp.kind {
                JumpKind::DiracAtom(g) => g.eval(&origin).len(),
                JumpKind::GridDensity(psi) => psi.center().len(),
            };
            if len != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    got: len,
                });
            }
            if let JumpKind::GridDensity(psi) = &comp.kind {
                let width = match psi {
                    JumpDensity::Gaussian { std, .. } => *std,
                    JumpDensity::Uniform { half_width, .. } => *half_width,
                };
                if !(width > 0.0) {
                    return Err(Error::InvalidInput(format!(
                        "jump density width must be positive, got {width}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Continuum generator `A_z f(x)` for a smooth test function. Density
    /// jumps are integrated with a fine tensor midpoint rule.
    pub fn generator_on<F: TestFunction + ?Sized>(&self, f: &F, x: &[f64], control: usize) -> f64 {
        let d = self.dim;
        let a = self.diffusion_at(x);
        let b = self.drift_at(x, control);
        let grad = f.gradient(x);
        let hess = f.hessian(x);
        let mut out = 0.0;
        for i in 0..d {
            out += b[i] * grad[i];
            for j in 0..d {
                out += a[i * d + j] * hess[i * d + j];
            }
        }
        let fx = f.value(x);
        for comp in &self.levy {
            let rate = comp.rate.eval(x);
            if rate == 0.0 {
                continue;
            }
            let expected = match &comp.kind {
                JumpKind::DiracAtom(g) => {
                    let y: Vec<f64> = x.iter().zip(g.eval(x)).map(|(x, g)| x + g).collect();
                    f.value(&y)
                }
                JumpKind::GridDensity(psi) => density_expectation(psi, x, |y| f.value(y)),
            };
            out += rate * (expected - fx);
        }
        out
    }
}

/// `E[f(x + Y)]` for `Y ~ ψ` by a tensor midpoint rule on 60 cells per axis.
fn density_expectation(psi: &JumpDensity, x: &[f64], f: impl Fn(&[f64]) -> f64) -> f64 {
    const CELLS: usize = 60;
    let d = x.len();
    let w = psi.support_half_width();
    let h = 2.0 * w / CELLS as f64;
    let center = psi.center();
    let mut idx = vec![0usize; d];
    let mut y = vec![0.0; d];
    let mut point = vec![0.0; d];
    let (mut total, mut mass) = (0.0, 0.0);
    loop {
        for k in 0..d {
            y[k] = center[k] - w + (idx[k] as f64 + 0.5) * h;
            point[k] = x[k] + y[k];
        }
        let p = psi.pdf(&y);
        total += p * f(&point);
        mass += p;
        let mut k = 0;
        loop {
            if k == d {
                return if mass > 0.0 { total / mass } else { f(x) };
            }
            idx[k] += 1;
            if idx[k] < CELLS {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// A twice-differentiable test function on `R^d`.
pub trait TestFunction {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
    /// Row-major `d × d` Hessian.
    fn hessian(&self, x: &[f64]) -> Vec<f64>;
}

/// `f(x) = ⟨x, S x⟩^{θ/2}` with `S` symmetric positive definite.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticForm {
    pub matrix: Vec<Vec<f64>>,
    pub theta: f64,
}

impl QuadraticForm {
    pub fn squared_norm(dim: usize) -> Self {
        let matrix = (0..dim)
            .map(|i| (0..dim).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        QuadraticForm { matrix, theta: 2.0 }
    }

    fn form(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let mut sx = vec![0.0; x.len()];
        mat_vec(&self.matrix, x, &mut sx);
        (x.iter().zip(&sx).map(|(a, b)| a * b).sum(), sx)
    }
}

impl TestFunction for QuadraticForm {
    fn value(&self, x: &[f64]) -> f64 {
        self.form(x).0.max(0.0).powf(self.theta / 2.0)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let (q, sx) = self.form(x);
        if q <= 0.0 {
            return vec![0.0; x.len()];
        }
        let k = self.theta * q.powf(self.theta / 2.0 - 1.0);
        sx.iter().map(|s| k * s).collect()
    }

    fn hessian(&self, x: &[f64]) -> Vec<f64> {
        let d = x.len();
        let (q, sx) = self.form(x);
        let p = self.theta / 2.0;
        let mut out = vec![0.0; d * d];
        if q <= 0.0 {
            if (p - 1.0).abs() < f64::EPSILON {
                for i in 0..d {
                    for j in 0..d {
                        out[i * d + j] = 2.0 * self.matrix[i][j];
                    }
                }
            }
            return out;
        }
        // ∇² q^p = 2p q^{p−1} S + 4p(p−1) q^{p−2} (Sx)(Sx)ᵀ
        let c1 = 2.0 * p * q.powf(p - 1.0);
        let c2 = 4.0 * p * (p - 1.0) * q.powf(p - 2.0);
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] = c1 * self.matrix[i][j] + c2 * sx[i] * sx[j];
            }
        }
        out
    }
}

pub fn norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

pub fn norm(x: &[f64]) -> f64 {
    norm_sq(x).sqrt()
}

/// Lower Cholesky factor of a row-major SPD matrix, or `None`.
pub fn cholesky(a: &[f64], d: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if !(s > 0.0) {
                    return None;
                }
                l[i * d + i] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    Some(l)
}

pub fn is_symmetric(a: &[f64], d: usize) -> bool {
    (0..d).all(|i| {
        (0..i).all(|j| {
            let (x, y) = (a[i * d + j], a[j * d + i]);
            (x - y).abs() <= 1e-12 * (1.0 + x.abs().max(y.abs()))
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn quadratic_form_values() {
        let f = QuadraticForm::squared_norm(2);
        assert_relative_eq!(f.value(&[1.0, 2.0]), 5.0);
        let g = QuadraticForm {
            matrix: vec![vec![1.0, 0.0], vec![0.0, 4.0]],
            theta: 2.0,
        };
        assert_relative_eq!(g.value(&[1.0, 1.0]), 5.0);
        let h = QuadraticForm {
            theta: 1.0,
            ..QuadraticForm::squared_norm(1)
        };
        assert_relative_eq!(h.value(&[-3.0]), 3.0);
    }

    #[test]
    fn quadratic_form_derivatives_match_finite_differences() {
        let f = QuadraticForm {
            matrix: vec![vec![2.0, 0.5], vec![0.5, 1.0]],
            theta: 1.4,
        };
        let x = [0.7, -1.3];
        let eps = 1e-5;
        let grad = f.gradient(&x);
        let hess = f.hessian(&x);
        for i in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[i] += eps;
            xm[i] -= eps;
            let fd = (f.value(&xp) - f.value(&xm)) / (2.0 * eps);
            assert_relative_eq!(grad[i], fd, epsilon = 1e-7);
            let gp = f.gradient(&xp);
            let gm = f.gradient(&xm);
            for j in 0..2 {
                let fd = (gp[j] - gm[j]) / (2.0 * eps);
                assert_relative_eq!(hess[j * 2 + i], fd, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn continuum_generator_on_jump_to_origin() {
        // A|x|² = 2d − 2|x|² − |x|² for a = I, b = −x, jump to 0 at rate 1.
        let problem = ControlledProblem {
            dim: 2,
            controls: vec![vec![0.0]],
            diffusion: Diffusion::scaled_identity(2, 1.0),
            drift: Drift::Linear {
                matrix: vec![vec![-1.0, 0.0], vec![0.0, -1.0]],
                control_gain: vec![vec![0.0], vec![0.0]],
                offset: vec![0.0, 0.0],
            },
            levy: vec![LevyComponent::dirac(1.0, Displacement::ToPoint(vec![0.0, 0.0]))],
            cost: Cost::Constant { value: 0.0 },
            domain_radius: 3.0,
        };
        let f = QuadraticForm::squared_norm(2);
        let x = [0.5, -1.5];
        assert_relative_eq!(problem.generator_on(&f, &x, 0), 4.0 - 3.0 * 2.5, epsilon = 1e-12);
    }

    #[test]
    fn gaussian_jump_expectation_matches_moments() {
        let psi = JumpDensity::Gaussian {
            mean: vec![0.3],
            std: 0.5,
        };
        let e = density_expectation(&psi, &[1.0], |y| y[0] * y[0]);
        // E(1 + Y)² = 1.3² + 0.25
        assert_relative_eq!(e, 1.69 + 0.25, epsilon = 1e-3);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        assert!(cholesky(&[1.0, 2.0, 2.0, 1.0], 2).is_none());
        let l = cholesky(&[4.0, 2.0, 2.0, 3.0], 2).unwrap();
        assert_relative_eq!(l[0], 2.0);
        assert_relative_eq!(l[2], 1.0);
        assert_relative_eq!(l[3], 2.0_f64.sqrt());
    }
}
