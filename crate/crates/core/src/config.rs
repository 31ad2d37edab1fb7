//! TOML problem files.
//!
//! ```toml
//! [problem]
//! dim = 1
//! radius = 4.0
//! controls = [[0.0]]
//!
//! [problem.diffusion]
//! kind = "constant"
//! matrix = [[1.0]]
//!
//! [problem.drift]
//! kind = "linear"
//! matrix = [[-1.0]]
//!
//! [problem.cost]
//! kind = "quadratic"
//! state_weights = [1.0]
//!
//! [[problem.levy]]
//! kind = "dirac_atom"
//! rate = 1.0
//! to_point = [0.0]
//!
//! [grid]
//! nodes = 41
//! ```
//!
//! Optional `[grid]`, `[solver]`, `[sim]` and `[lyapunov]` tables hold run
//! settings. Unknown keys are rejected.

use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::chain::BoundaryMode;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::hjb::SolverOptions;
use crate::problem::{
    cholesky, is_symmetric, ControlledProblem, Cost, Diffusion, Displacement, Drift, JumpDensity, JumpKind, JumpRate,
    LevyComponent,
};
use crate::sim::SimConfig;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileSpec {
    problem: ProblemSpec,
    #[serde(default)]
    grid: GridSpec,
    #[serde(default)]
    solver: SolverSpec,
    #[serde(default)]
    sim: SimSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lyapunov: Option<LyapunovSpec>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemSpec {
    dim: usize,
    radius: f64,
    controls: Vec<Vec<f64>>,
    diffusion: Spanned<DiffusionSpec>,
    drift: Spanned<DriftSpec>,
    cost: Spanned<CostSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    levy: Vec<Spanned<LevySpec>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum DiffusionSpec {
    Constant { matrix: Vec<Vec<f64>> },
    ScaledIdentity { scale: f64 },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum DriftSpec {
    Linear {
        matrix: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        control_gain: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        offset: Vec<f64>,
    },
    Saturating {
        gain: f64,
        theta: f64,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        control_gain: Vec<Vec<f64>>,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum CostSpec {
    Constant {
        value: f64,
    },
    Quadratic {
        state_weights: Vec<f64>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        control_weights: Vec<f64>,
        #[serde(default)]
        offset: f64,
    },
    Bounded {
        scale: f64,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        control_weights: Vec<f64>,
        #[serde(default)]
        offset: f64,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum LevySpec {
    DiracAtom {
        rate: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        to_point: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        shift: Option<Vec<f64>>,
    },
    GridDensity {
        rate: f64,
        /// `"gaussian"` (width = standard deviation) or `"uniform"`
        /// (width = half-width of the cube).
        density: String,
        center: Vec<f64>,
        width: f64,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridSpec {
    #[serde(default = "default_nodes")]
    nodes: usize,
    #[serde(default = "default_boundary")]
    boundary: String,
}

fn default_nodes() -> usize {
    41
}

fn default_boundary() -> String {
    "reflecting".into()
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            nodes: default_nodes(),
            boundary: default_boundary(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct SolverSpec {
    tolerance: f64,
    max_iterations: usize,
    alpha_max: f64,
    alpha_min: f64,
}

impl Default for SolverSpec {
    fn default() -> Self {
        SolverSpec {
            tolerance: 1e-9,
            max_iterations: 500,
            alpha_max: 0.5,
            alpha_min: 0.5f64.powi(14),
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    time_step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    burn_in: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    replications: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rate_bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    safety_factor: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LyapunovSpec {
    matrix: Vec<Vec<f64>>,
    theta: f64,
    #[serde(default = "one")]
    scale: f64,
    #[serde(default)]
    uniform: bool,
}

fn one() -> f64 {
    1.0
}

/// Candidate `scale · ⟨x, S x⟩^{θ/2}`; with `uniform` the check runs over
/// all controls with minorant `h ≡ 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct LyapunovSettings {
    pub matrix: Vec<Vec<f64>>,
    pub theta: f64,
    pub scale: f64,
    pub uniform: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverSettings {
    pub options: SolverOptions,
    pub alpha_max: f64,
    pub alpha_min: f64,
}

impl SolverSettings {
    /// `α_max, α_max/2, …` down to the last value not below `α_min`.
    pub fn alphas(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut a = self.alpha_max;
        while a >= self.alpha_min * (1.0 - 1e-12) {
            out.push(a);
            a *= 0.5;
        }
        out
    }
}

/// A parsed problem file.
#[derive(Clone, Debug)]
pub struct Config {
    pub problem: ControlledProblem,
    /// Nodes per axis.
    pub nodes: usize,
    pub boundary: BoundaryMode,
    pub solver: SolverSettings,
    pub sim: SimConfig,
    pub lyapunov: Option<LyapunovSettings>,
}

impl Config {
    pub fn grid(&self) -> Result<Grid> {
        Grid::uniform(self.problem.dim, self.problem.domain_radius, self.nodes)
    }

    /// Override nodes per axis and the box radius.
    pub fn with_grid(mut self, nodes: Option<usize>, radius: Option<f64>) -> Result<Self> {
        if let Some(n) = nodes {
            self.nodes = n;
        }
        if let Some(r) = radius {
            self.problem.domain_radius = r;
        }
        self.problem.validate()?;
        Ok(self)
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn at<T>(text: &str, spanned: &Spanned<T>, message: String) -> Error {
    Error::config(Some(line_of(text, spanned.span().start)), message)
}

fn square(m: &[Vec<f64>], d: usize) -> bool {
    m.len() == d && m.iter().all(|r| r.len() == d)
}

pub fn parse_config(text: &str) -> Result<Config> {
    let spec: FileSpec = toml::from_str(text).map_err(|e| {
        let line = e.span().map(|s| line_of(text, s.start));
        Error::config(line, e.message().to_string())
    })?;
    let p = &spec.problem;
    let d = p.dim;
    if d == 0 {
        return Err(Error::config(None, "problem.dim must be positive"));
    }
    if !(p.radius > 0.0) {
        return Err(Error::config(None, format!("problem.radius must be positive, got {}", p.radius)));
    }
    let diffusion = match p.diffusion.get_ref() {
        DiffusionSpec::Constant { matrix } => {
            let flat: Vec<f64> = matrix.iter().flatten().copied().collect();
            if !square(matrix, d) || !is_symmetric(&flat, d) || cholesky(&flat, d).is_none() {
                return Err(at(
                    text,
                    &p.diffusion,
                    "problem.diffusion.matrix must be a symmetric positive definite dim × dim matrix".into(),
                ));
            }
            Diffusion::Constant { matrix: matrix.clone() }
        }
        DiffusionSpec::ScaledIdentity { scale } => {
            if !(*scale > 0.0) {
                return Err(at(text, &p.diffusion, format!("problem.diffusion.scale must be positive, got {scale}")));
            }
            Diffusion::scaled_identity(d, *scale)
        }
    };
    let control_dim = p.controls.first().map_or(0, Vec::len);
    let zeros = |rows: usize, cols: usize| vec![vec![0.0; cols]; rows];
    let drift = match p.drift.get_ref() {
        DriftSpec::Linear {
            matrix,
            control_gain,
            offset,
        } => {
            if !square(matrix, d) {
                return Err(at(text, &p.drift, "problem.drift.matrix must be dim × dim".into()));
            }
            Drift::Linear {
                matrix: matrix.clone(),
                control_gain: if control_gain.is_empty() { zeros(d, control_dim) } else { control_gain.clone() },
                offset: if offset.is_empty() { vec![0.0; d] } else { offset.clone() },
            }
        }
        DriftSpec::Saturating {
            gain,
            theta,
            control_gain,
        } => {
            if !(1.0..=2.0).contains(theta) {
                return Err(at(text, &p.drift, format!("problem.drift.theta must lie in [1, 2], got {theta}")));
            }
            Drift::Saturating {
                gain: *gain,
                theta: *theta,
                control_gain: if control_gain.is_empty() { zeros(d, control_dim) } else { control_gain.clone() },
            }
        }
    };
    let cost = match p.cost.get_ref() {
        CostSpec::Constant { value } => Cost::Constant { value: *value },
        CostSpec::Quadratic {
            state_weights,
            control_weights,
            offset,
        } => Cost::Quadratic {
            state_weights: state_weights.clone(),
            control_weights: if control_weights.is_empty() { vec![0.0; control_dim] } else { control_weights.clone() },
            offset: *offset,
        },
        CostSpec::Bounded {
            scale,
            control_weights,
            offset,
        } => Cost::Bounded {
            scale: *scale,
            control_weights: if control_weights.is_empty() { vec![0.0; control_dim] } else { control_weights.clone() },
            offset: *offset,
        },
    };
    let mut levy = Vec::new();
    for (k, entry) in p.levy.iter().enumerate() {
        let component = match entry.get_ref() {
            LevySpec::DiracAtom { rate, to_point, shift } => {
                let displacement = match (to_point, shift) {
                    (Some(y), None) => Displacement::ToPoint(y.clone()),
                    (None, Some(g)) => Displacement::Shift(g.clone()),
                    _ => {
                        return Err(at(
                            text,
                            entry,
                            format!("problem.levy[{k}] needs exactly one of to_point or shift"),
                        ))
                    }
                };
                LevyComponent {
                    rate: JumpRate::Constant(*rate),
                    kind: JumpKind::DiracAtom(displacement),
                }
            }
            LevySpec::GridDensity {
                rate,
                density,
                center,
                width,
            } => {
                let psi = match density.as_str() {
                    "gaussian" => JumpDensity::Gaussian {
                        mean: center.clone(),
                        std: *width,
                    },
                    "uniform" => JumpDensity::Uniform {
                        center: center.clone(),
                        half_width: *width,
                    },
                    other => {
                        return Err(at(
                            text,
                            entry,
                            format!("problem.levy[{k}].density must be \"gaussian\" or \"uniform\", got \"{other}\""),
                        ))
                    }
                };
                LevyComponent {
                    rate: JumpRate::Constant(*rate),
                    kind: JumpKind::GridDensity(psi),
                }
            }
        };
        let rate = match entry.get_ref() {
            LevySpec::DiracAtom { rate, .. } | LevySpec::GridDensity { rate, .. } => *rate,
        };
        if !(rate >= 0.0) || !rate.is_finite() {
            return Err(at(text, entry, format!("problem.levy[{k}].rate must be nonnegative, got {rate}")));
        }
        levy.push(component);
    }
    let problem = ControlledProblem {
        dim: d,
        controls: p.controls.clone(),
        diffusion,
        drift,
        levy,
        cost,
        domain_radius: p.radius,
    };
    problem.validate().map_err(|e| Error::config(None, e.to_string()))?;

    let boundary = match spec.grid.boundary.as_str() {
        "reflecting" => BoundaryMode::Reflecting,
        "dirichlet" => BoundaryMode::DirichletZero,
        other => {
            return Err(Error::config(
                None,
                format!("grid.boundary must be \"reflecting\" or \"dirichlet\", got \"{other}\""),
            ))
        }
    };
    if spec.grid.nodes < 3 {
        return Err(Error::config(None, format!("grid.nodes must be at least 3, got {}", spec.grid.nodes)));
    }
    let s = &spec.solver;
    if !(s.alpha_max < 1.0 && s.alpha_min > 0.0 && s.alpha_min <= s.alpha_max) {
        return Err(Error::config(None, "solver needs 0 < alpha_min <= alpha_max < 1"));
    }
    let solver = SolverSettings {
        options: SolverOptions {
            tolerance: s.tolerance,
            max_iterations: s.max_iterations,
            initial_values: None,
        },
        alpha_max: s.alpha_max,
        alpha_min: s.alpha_min,
    };
    let grid = Grid::uniform(d, p.radius, spec.grid.nodes)?;
    let base = SimConfig::for_problem(&problem, &grid);
    let q = &spec.sim;
    let sim = SimConfig {
        time_step: q.time_step.unwrap_or(base.time_step),
        horizon: q.horizon.unwrap_or(base.horizon),
        seed: q.seed.unwrap_or(base.seed),
        burn_in: q.burn_in.unwrap_or(base.burn_in),
        replications: q.replications.unwrap_or(base.replications),
        rate_bound: q.rate_bound.unwrap_or(base.rate_bound),
        safety_factor: q.safety_factor.unwrap_or(base.safety_factor),
        record_stride: base.record_stride,
    };
    sim.validate().map_err(|e| Error::config(None, format!("[sim]: {e}")))?;
    let lyapunov = spec.lyapunov.as_ref().map(|l| LyapunovSettings {
        matrix: l.matrix.clone(),
        theta: l.theta,
        scale: l.scale,
        uniform: l.uniform,
    });
    Ok(Config {
        problem,
        nodes: spec.grid.nodes,
        boundary,
        solver,
        sim,
        lyapunov,
    })
}

fn problem_spec(problem: &ControlledProblem) -> Result<ProblemSpec> {
    let custom = |what: &str| Error::InvalidInput(format!("{what} is a closure and cannot be written to a config"));
    let span = |v| Spanned::new(0..0, v);
    let diffusion = match &problem.diffusion {
        Diffusion::Constant { matrix } => DiffusionSpec::Constant { matrix: matrix.clone() },
        Diffusion::Custom(_) => return Err(custom("diffusion")),
    };
    let drift = match &problem.drift {
        Drift::Linear {
            matrix,
            control_gain,
            offset,
        } => DriftSpec::Linear {
            matrix: matrix.clone(),
            control_gain: control_gain.clone(),
            offset: offset.clone(),
        },
        Drift::Saturating {
            gain,
            theta,
            control_gain,
        } => DriftSpec::Saturating {
            gain: *gain,
            theta: *theta,
            control_gain: control_gain.clone(),
        },
        Drift::Custom(_) => return Err(custom("drift")),
    };
    let cost = match &problem.cost {
        Cost::Constant { value } => CostSpec::Constant { value: *value },
        Cost::Quadratic {
            state_weights,
            control_weights,
            offset,
        } => CostSpec::Quadratic {
            state_weights: state_weights.clone(),
            control_weights: control_weights.clone(),
            offset: *offset,
        },
        Cost::Bounded {
            scale,
            control_weights,
            offset,
        } => CostSpec::Bounded {
            scale: *scale,
            control_weights: control_weights.clone(),
            offset: *offset,
        },
        Cost::Custom(_) => return Err(custom("cost")),
    };
    let mut levy = Vec::new();
    for comp in &problem.levy {
        let rate = match &comp.rate {
            JumpRate::Constant(r) => *r,
            JumpRate::Custom(_) => return Err(custom("jump rate")),
        };
        let entry = match &comp.kind {
            JumpKind::DiracAtom(Displacement::ToPoint(y)) => LevySpec::DiracAtom {
                rate,
                to_point: Some(y.clone()),
                shift: None,
            },
            JumpKind::DiracAtom(Displacement::Shift(g)) => LevySpec::DiracAtom {
                rate,
                to_point: None,
                shift: Some(g.clone()),
            },
            JumpKind::DiracAtom(Displacement::Custom(_)) => return Err(custom("jump displacement")),
            JumpKind::GridDensity(JumpDensity::Gaussian { mean, std }) => LevySpec::GridDensity {
                rate,
                density: "gaussian".into(),
                center: mean.clone(),
                width: *std,
            },
            JumpKind::GridDensity(JumpDensity::Uniform { center, half_width }) => LevySpec::GridDensity {
                rate,
                density: "uniform".into(),
                center: center.clone(),
                width: *half_width,
            },
        };
        levy.push(span(entry));
    }
    Ok(ProblemSpec {
        dim: problem.dim,
        radius: problem.domain_radius,
        controls: problem.controls.clone(),
        diffusion: Spanned::new(0..0, diffusion),
        drift: Spanned::new(0..0, drift),
        cost: Spanned::new(0..0, cost),
        levy,
    })
}

/// Write a problem (built from config families only) as a problem file with
/// default run settings.
pub fn render(problem: &ControlledProblem) -> Result<String> {
    let spec = FileSpec {
        problem: problem_spec(problem)?,
        grid: GridSpec::default(),
        solver: SolverSpec::default(),
        sim: SimSpec::default(),
        lyapunov: None,
    };
    toml::to_string(&spec).map_err(|e| Error::InvalidInput(e.to_string()))
}

/// Write a full config, run settings included.
pub fn render_config(config: &Config) -> Result<String> {
    let spec = FileSpec {
        problem: problem_spec(&config.problem)?,
        grid: GridSpec {
            nodes: config.nodes,
            boundary: match config.boundary {
                BoundaryMode::Reflecting => "reflecting".into(),
                _ => "dirichlet".into(),
            },
        },
        solver: SolverSpec {
            tolerance: config.solver.options.tolerance,
            max_iterations: config.solver.options.max_iterations,
            alpha_max: config.solver.alpha_max,
            alpha_min: config.solver.alpha_min,
        },
        sim: SimSpec {
            time_step: Some(config.sim.time_step),
            horizon: Some(config.sim.horizon),
            seed: Some(config.sim.seed),
            burn_in: Some(config.sim.burn_in),
            replications: Some(config.sim.replications),
            rate_bound: Some(config.sim.rate_bound),
            safety_factor: Some(config.sim.safety_factor),
        },
        lyapunov: config.lyapunov.as_ref().map(|l| LyapunovSpec {
            matrix: l.matrix.clone(),
            theta: l.theta,
            scale: l.scale,
            uniform: l.uniform,
        }),
    };
    toml::to_string(&spec).map_err(|e| Error::InvalidInput(e.to_string()))
}
