use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("axis {axis} has {nodes} nodes; at least 3 are needed for an interior")]
    NoInterior { axis: usize, nodes: usize },

    #[error("domain radius must be positive, got {0}")]
    InvalidRadius(f64),

    #[error("diffusion matrix is not positive definite at node {node}")]
    NotPositiveDefinite { node: usize },

    #[error("diffusion matrix is not diagonally dominant at node {node} (axis {axis})")]
    DiagonalDominance { node: usize, axis: usize },

    #[error("negative running cost {value} at node {node}, control {control}")]
    NegativeCost {
        node: usize,
        control: usize,
        value: f64,
    },

    #[error("negative jump rate {value} in component {component} at node {node}")]
    NegativeRate {
        component: usize,
        node: usize,
        value: f64,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("singular linear system: {0}")]
    SingularSystem(String),

    #[error("policy chain has {classes} recurrent classes")]
    MultichainDetected { classes: usize },

    #[error("vanishing-discount sequence is not Cauchy (last difference {last:e} > previous {previous:e})")]
    NonCauchy { previous: f64, last: f64 },

    #[error("generator row {row} loses mass (row sum {row_sum:e})")]
    NotConservative { row: usize, row_sum: f64 },

    #[error("linear program is infeasible (phase-one objective {0:e})")]
    Infeasible(f64),

    #[error("linear program is unbounded")]
    Unbounded,

    #[error("Lyapunov candidate is negative ({value}) at node {node}")]
    NegativeCandidate { node: usize, value: f64 },

    #[error("minorant h must be at least 1; got {value} at node {node}, control {control}")]
    MinorantBelowOne {
        node: usize,
        control: usize,
        value: f64,
    },

    #[error("matrix is not symmetric positive definite")]
    NonSpdMatrix,

    #[error("exponent theta = {0} outside [1, 2]")]
    ThetaOutOfRange(f64),

    #[error("total jump rate {rate} exceeds the thinning bound {bound}")]
    RateBoundViolated { rate: f64, bound: f64 },

    #[error("path left the safety box at time {time}")]
    Blowup { time: f64 },

    #[error("ball of radius {radius} not reached on {timeouts} of {replications} replications")]
    HittingTimeout {
        radius: f64,
        timeouts: usize,
        replications: usize,
    },

    #[error("config error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Config { line: Option<usize>, message: String },
}

impl Error {
    pub(crate) fn config(line: Option<usize>, message: impl Into<String>) -> Self {
        Error::Config {
            line,
            message: message.into(),
        }
    }
}
