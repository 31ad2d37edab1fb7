//! Ergodic control of jump diffusions with finite Lévy measures.
//!
//! A controlled process with generator
//!
//! ```text
//! A_z f(x) = Σ a_ij(x) ∂_ij f(x) + Σ b_i(x, z) ∂_i f(x) + ∫ (f(x + y) − f(x)) ν_x(dy)
//! ```
//!
//! and running cost `c(x, z)` is truncated to a box, discretized by a
//! monotone finite-difference scheme into a controlled Markov chain and
//! solved in several independent ways:
//!
//! * [`hjb`]: discounted, vanishing-discount, ergodic and Poisson equations;
//! * [`measures`]: invariant and occupation measures of stationary policies;
//! * [`lp`]: the occupation-measure linear program and its dual;
//! * [`lyapunov`]: Foster–Lyapunov drift checks;
//! * [`sim`]: Monte Carlo simulation of the continuous process.
//!
//! [`config`] reads problem files and [`cli`] drives everything from the
//! command line.

#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

mod dense;

pub mod chain;
pub mod cli;
pub mod config;
pub mod error;
pub mod generator;
pub mod grid;
pub mod hjb;
pub mod io;
pub mod lp;
pub mod lyapunov;
pub mod measures;
pub mod problem;
pub mod sim;

pub use chain::{BoundaryMode, ControlledChain, MarkovPolicy};
pub use config::{parse_config, Config};
pub use error::{Error, Result};
pub use grid::Grid;
pub use problem::ControlledProblem;
