//! Monte Carlo simulation of the controlled jump SDE
//!
//! ```text
//! dX_t = b(X_t, Z_t) dt + σ(X_t) dW_t + jumps with intensity ν_{X_t}
//! ```
//!
//! with `σσᵀ = 2a`. Paths are built piecewise: Euler–Maruyama for the
//! continuous part, and jump epochs drawn exactly by thinning a rate-`Λ`
//! Poisson clock (an epoch at state `x` is accepted with probability
//! `ν̄(x)/Λ`, then a component is picked proportionally to its rate).
//!
//! Replication `k` of a run seeded with `s` draws from ChaCha8 seeded with
//! `s` on stream `k`, so results do not depend on thread scheduling.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;

use crate::chain::MarkovPolicy;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::io::{fmt_f64, header};
use crate::problem::{cholesky, norm, ControlledProblem, Diffusion, TestFunction};

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub time_step: f64,
    pub horizon: f64,
    pub seed: u64,
    /// Fraction of the horizon discarded before averaging.
    pub burn_in: f64,
    pub replications: usize,
    /// Thinning bound `Λ ≥ ν̄(x)` along every path.
    pub rate_bound: f64,
    /// Paths are stopped once `|X| > safety_factor · R`.
    pub safety_factor: f64,
    /// Keep every `record_stride`-th step in a [`PathSample`].
    pub record_stride: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            time_step: 1e-2,
            horizon: 1e3,
            seed: 0,
            burn_in: 0.2,
            replications: 20,
            rate_bound: 0.0,
            safety_factor: 10.0,
            record_stride: 1,
        }
    }
}

impl SimConfig {
    /// Defaults with `Λ` set to `1.05 · max ν̄` over the grid nodes.
    pub fn for_problem(problem: &ControlledProblem, grid: &Grid) -> Self {
        let peak = (0..grid.len())
            .map(|i| problem.total_jump_rate(&grid.coordinates(i)))
            .fold(0.0, f64::max);
        SimConfig {
            rate_bound: 1.05 * peak,
            ..SimConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        if !(self.time_step > 0.0) || !(self.horizon >= self.time_step) {
            return bad(format!(
                "need 0 < time_step <= horizon, got {} and {}",
                self.time_step, self.horizon
            ));
        }
        if !(0.0..1.0).contains(&self.burn_in) {
            return bad(format!("burn_in must lie in [0, 1), got {}", self.burn_in));
        }
        if !(self.rate_bound >= 0.0) || !self.rate_bound.is_finite() {
            return bad(format!("rate_bound must be finite and nonnegative, got {}", self.rate_bound));
        }
        if !(self.safety_factor > 1.0) {
            return bad(format!("safety_factor must exceed 1, got {}", self.safety_factor));
        }
        if self.replications == 0 || self.record_stride == 0 {
            return bad("replications and record_stride must be positive".into());
        }
        Ok(())
    }

    /// `# key = value` lines for output headers.
    pub fn echo(&self) -> Vec<(&'static str, String)> {
        vec![
            ("time_step", fmt_f64(self.time_step)),
            ("horizon", fmt_f64(self.horizon)),
            ("seed", self.seed.to_string()),
            ("burn_in", fmt_f64(self.burn_in)),
            ("replications", self.replications.to_string()),
            ("rate_bound", fmt_f64(self.rate_bound)),
            ("safety_factor", fmt_f64(self.safety_factor)),
        ]
    }
}

/// Anything that picks a control index from time and state.
pub trait Controller: Sync {
    fn control(&self, t: f64, x: &[f64]) -> usize;
}

/// A grid policy extended off the grid by nearest-node lookup.
#[derive(Clone, Debug, PartialEq)]
pub struct GridPolicy {
    pub grid: Grid,
    pub policy: MarkovPolicy,
}

impl GridPolicy {
    pub fn new(grid: Grid, policy: MarkovPolicy) -> Result<Self> {
        if policy.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                got: policy.len(),
            });
        }
        Ok(GridPolicy { grid, policy })
    }
}

impl Controller for GridPolicy {
    fn control(&self, _t: f64, x: &[f64]) -> usize {
        self.policy.control_at(self.grid.nearest_node(x))
    }
}

impl<F: Fn(f64, &[f64]) -> usize + Sync> Controller for F {
    fn control(&self, t: f64, x: &[f64]) -> usize {
        self(t, x)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JumpEvent {
    pub time: f64,
    pub pre_state: Vec<f64>,
    pub displacement: Vec<f64>,
    pub component: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathSample {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Control in force at each recorded time.
    pub controls: Vec<usize>,
    /// `∫₀ᵗ c(X_s, Z_s) ds` at each recorded time.
    pub cost_integral: Vec<f64>,
    pub jumps: Vec<JumpEvent>,
    /// The path left the safety box and was stopped at the last recorded time.
    pub exited: bool,
}

impl PathSample {
    /// Gaps between consecutive jumps, starting from time 0.
    pub fn inter_jump_times(&self) -> Vec<f64> {
        let mut last = 0.0;
        self.jumps
            .iter()
            .map(|e| {
                let gap = e.time - last;
                last = e.time;
                gap
            })
            .collect()
    }

    pub fn to_csv(&self, config: &SimConfig) -> String {
        let mut out = header(&config.echo());
        let d = self.states.first().map_or(0, Vec::len);
        out.push('t');
        for k in 0..d {
            let _ = write!(out, ",x{k}");
        }
        out.push_str(",control,cost_integral\n");
        for i in 0..self.times.len() {
            out.push_str(&fmt_f64(self.times[i]));
            for v in &self.states[i] {
                let _ = write!(out, ",{}", fmt_f64(*v));
            }
            let _ = writeln!(out, ",{},{}", self.controls[i], fmt_f64(self.cost_integral[i]));
        }
        out
    }

    pub fn jumps_csv(&self, config: &SimConfig) -> String {
        let mut out = header(&config.echo());
        out.push_str("time,component,pre_state,displacement\n");
        let join = |v: &[f64]| v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(" ");
        for e in &self.jumps {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                fmt_f64(e.time),
                e.component,
                join(&e.pre_state),
                join(&e.displacement)
            );
        }
        out
    }
}

/// Callbacks fired while a path is advanced.
trait Observer {
    /// The state sat at `x` under `control` (paying `cost`) for `dt`.
    fn hold(&mut self, t: f64, dt: f64, x: &[f64], control: usize, cost: f64);
    fn jump(&mut self, _event: &JumpEvent) {}
    /// The state changed; return `false` to stop.
    fn moved(&mut self, _t: f64, _x: &[f64]) -> bool {
        true
    }
    /// A full time step ended.
    fn step(&mut self, _t: f64, _x: &[f64], _control: usize) {}
}

struct Engine<'a, C: ?Sized> {
    problem: &'a ControlledProblem,
    controller: &'a C,
    config: &'a SimConfig,
    constant_sigma: Option<Vec<f64>>,
    safety: f64,
}

enum Outcome {
    Finished,
    Stopped,
    Exited(f64),
}

impl<'a, C: Controller + ?Sized> Engine<'a, C> {
    fn new(problem: &'a ControlledProblem, controller: &'a C, config: &'a SimConfig) -> Result<Self> {
        config.validate()?;
        problem.validate()?;
        let constant_sigma = match &problem.diffusion {
            Diffusion::Constant { .. } => Some(sigma_of(problem, &vec![0.0; problem.dim])?),
            Diffusion::Custom(_) => None,
        };
        Ok(Engine {
            problem,
            controller,
            config,
            constant_sigma,
            safety: config.safety_factor * problem.domain_radius,
        })
    }

    fn euler(&self, t: f64, dt: f64, x: &mut [f64], rng: &mut ChaCha8Rng, obs: &mut impl Observer) -> Result<usize> {
        let d = x.len();
        let z = self.controller.control(t, x);
        let b = self.problem.drift_at(x, z);
        let c = self.problem.cost_at(x, z);
        obs.hold(t, dt, x, z, c);
        let sigma = match &self.constant_sigma {
            Some(s) => s.clone(),
            None => sigma_of(self.problem, x)?,
        };
        let sqrt_dt = dt.sqrt();
        let xi: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        for i in 0..d {
            let noise: f64 = (0..=i).map(|j| sigma[i * d + j] * xi[j]).sum();
            x[i] += b[i] * dt + noise * sqrt_dt;
        }
        Ok(z)
    }

    fn check_rate(&self, x: &[f64]) -> Result<f64> {
        let rate = self.problem.total_jump_rate(x);
        if rate > self.config.rate_bound * (1.0 + 1e-12) {
            return Err(Error::RateBoundViolated {
                rate,
                bound: self.config.rate_bound,
            });
        }
        Ok(rate)
    }

    fn run(&self, x0: &[f64], t_end: f64, rng: &mut ChaCha8Rng, obs: &mut impl Observer) -> Result<Outcome> {
        let h = self.config.time_step;
        let lambda = self.config.rate_bound;
        let clock = if lambda > 0.0 { Some(Exp::new(lambda).expect("positive rate")) } else { None };
        let mut next_epoch = clock.map_or(f64::INFINITY, |e| e.sample(rng));
        let mut x = x0.to_vec();
        let mut t = 0.0;
        let mut k = 0u64;
        if !obs.moved(t, &x) {
            return Ok(Outcome::Stopped);
        }
        while t < t_end {
            k += 1;
            let step_end = (k as f64 * h).min(t_end);
            self.check_rate(&x)?;
            while next_epoch < step_end {
                self.euler(t, next_epoch - t, &mut x, rng, obs)?;
                t = next_epoch;
                if norm(&x) > self.safety {
                    return Ok(Outcome::Exited(t));
                }
                if !obs.moved(t, &x) {
                    return Ok(Outcome::Stopped);
                }
                let rate = self.check_rate(&x)?;
                if rng.random::<f64>() * lambda < rate {
                    let event = self.sample_jump(t, &x, rate, rng);
                    for (xi, g) in x.iter_mut().zip(&event.displacement) {
                        *xi += g;
                    }
                    obs.jump(&event);
                    if norm(&x) > self.safety {
                        return Ok(Outcome::Exited(t));
                    }
                    if !obs.moved(t, &x) {
                        return Ok(Outcome::Stopped);
                    }
                }
                next_epoch += clock.map_or(f64::INFINITY, |e| e.sample(rng));
            }
            let z = self.euler(t, step_end - t, &mut x, rng, obs)?;
            t = step_end;
            if norm(&x) > self.safety {
                return Ok(Outcome::Exited(t));
            }
            obs.step(t, &x, z);
            if !obs.moved(t, &x) {
                return Ok(Outcome::Stopped);
            }
        }
        Ok(Outcome::Finished)
    }

    fn sample_jump(&self, t: f64, x: &[f64], total: f64, rng: &mut ChaCha8Rng) -> JumpEvent {
        let mut u = rng.random::<f64>() * total;
        let levy = &self.problem.levy;
        let mut component = levy.len() - 1;
        for (k, comp) in levy.iter().enumerate() {
            let r = comp.rate.eval(x);
            if u < r {
                component = k;
                break;
            }
            u -= r;
        }
        JumpEvent {
            time: t,
            pre_state: x.to_vec(),
            displacement: levy[component].sample_displacement(x, rng),
            component,
        }
    }
}

/// Lower-triangular `σ(x)` with `σσᵀ = 2a(x)`, row-major.
fn sigma_of(problem: &ControlledProblem, x: &[f64]) -> Result<Vec<f64>> {
    let a: Vec<f64> = problem.diffusion_at(x).iter().map(|v| 2.0 * v).collect();
    cholesky(&a, problem.dim).ok_or(Error::NotPositiveDefinite { node: usize::MAX })
}

fn replication_rng(seed: u64, replication: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replication as u64);
    rng
}

struct Recorder {
    stride: usize,
    steps: usize,
    cost: f64,
    sample: PathSample,
}

impl Observer for Recorder {
    fn hold(&mut self, _t: f64, dt: f64, _x: &[f64], _control: usize, cost: f64) {
        self.cost += cost * dt;
    }

    fn jump(&mut self, event: &JumpEvent) {
        self.sample.jumps.push(event.clone());
    }

    fn step(&mut self, t: f64, x: &[f64], control: usize) {
        self.steps += 1;
        if self.steps.is_multiple_of(self.stride) {
            self.sample.times.push(t);
            self.sample.states.push(x.to_vec());
            self.sample.controls.push(control);
            self.sample.cost_integral.push(self.cost);
        }
    }
}

/// One path on `[0, T]`; stops early (with `exited = true`) if the state
/// leaves the safety box.
pub fn trace_path<C: Controller + ?Sized>(
    problem: &ControlledProblem,
    controller: &C,
    x0: &[f64],
    config: &SimConfig,
) -> Result<PathSample> {
    let engine = Engine::new(problem, controller, config)?;
    if x0.len() != problem.dim {
        return Err(Error::DimensionMismatch {
            expected: problem.dim,
            got: x0.len(),
        });
    }
    if x0.iter().any(|v| v.abs() > problem.domain_radius) {
        return Err(Error::InvalidInput(format!("initial state {x0:?} is outside the box")));
    }
    let z0 = controller.control(0.0, x0);
    let mut rec = Recorder {
        stride: config.record_stride,
        steps: 0,
        cost: 0.0,
        sample: PathSample {
            times: vec![0.0],
            states: vec![x0.to_vec()],
            controls: vec![z0],
            cost_integral: vec![0.0],
            jumps: Vec::new(),
            exited: false,
        },
    };
    let mut rng = replication_rng(config.seed, 0);
    if let Outcome::Exited(_) = engine.run(x0, config.horizon, &mut rng, &mut rec)? {
        rec.sample.exited = true;
    }
    Ok(rec.sample)
}

/// [`trace_path`], failing with [`Error::Blowup`] if the path leaves the
/// safety box.
pub fn simulate_path<C: Controller + ?Sized>(
    problem: &ControlledProblem,
    controller: &C,
    x0: &[f64],
    config: &SimConfig,
) -> Result<PathSample> {
    let sample = trace_path(problem, controller, x0, config)?;
    if sample.exited {
        return Err(Error::Blowup {
            time: *sample.times.last().unwrap_or(&0.0),
        });
    }
    Ok(sample)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErgodicEstimate {
    /// Mean over replications that stayed in the safety box (`+∞` if none did).
    pub mean: f64,
    pub std_error: f64,
    pub per_replication: Vec<f64>,
    /// Time fraction after burn-in per `(node, control)`, indexed
    /// `node * controls + control`, over contained replications.
    pub histogram: Vec<f64>,
    pub controls: usize,
    pub blowup_fraction: f64,
    /// More than half of the replications blew up.
    pub divergent: bool,
}

impl ErgodicEstimate {
    pub fn node_marginal(&self) -> Vec<f64> {
        self.histogram.chunks(self.controls).map(|c| c.iter().sum()).collect()
    }

    pub fn to_csv(&self, config: &SimConfig) -> String {
        let mut pairs = config.echo();
        pairs.push(("mean", fmt_f64(self.mean)));
        pairs.push(("std_error", fmt_f64(self.std_error)));
        pairs.push(("blowup_fraction", fmt_f64(self.blowup_fraction)));
        let mut out = header(&pairs);
        out.push_str("replication,average_cost\n");
        for (k, v) in self.per_replication.iter().enumerate() {
            let _ = writeln!(out, "{k},{}", fmt_f64(*v));
        }
        out
    }
}

/// Mean and standard error `s / √n`.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

struct Averager<'g> {
    grid: &'g Grid,
    controls: usize,
    burn: f64,
    cost: f64,
    time: f64,
    histogram: Vec<f64>,
}

impl Observer for Averager<'_> {
    fn hold(&mut self, t: f64, dt: f64, x: &[f64], control: usize, cost: f64) {
        let start = t.max(self.burn);
        let dt = t + dt - start;
        if dt <= 0.0 {
            return;
        }
        self.cost += cost * dt;
        self.time += dt;
        self.histogram[self.grid.nearest_node(x) * self.controls + control] += dt;
    }
}

/// Long-run average cost over replications started at the grid reference
/// node, with the empirical occupation histogram on `grid`.
pub fn ergodic_cost_estimate(
    problem: &ControlledProblem,
    policy: &GridPolicy,
    config: &SimConfig,
) -> Result<ErgodicEstimate> {
    let x0 = policy.grid.coordinates(policy.grid.reference_node());
    ergodic_cost_estimate_with(problem, policy, &policy.grid, &x0, config)
}

pub fn ergodic_cost_estimate_with<C: Controller + ?Sized>(
    problem: &ControlledProblem,
    controller: &C,
    grid: &Grid,
    x0: &[f64],
    config: &SimConfig,
) -> Result<ErgodicEstimate> {
    if config.replications < 2 {
        return Err(Error::InvalidInput("an ergodic estimate needs at least 2 replications".into()));
    }
    let engine = Engine::new(problem, controller, config)?;
    let m = problem.num_controls();
    let burn = config.burn_in * config.horizon;
    let runs: Vec<Option<(f64, Vec<f64>)>> = (0..config.replications)
        .into_par_iter()
        .map(|rep| {
            let mut avg = Averager {
                grid,
                controls: m,
                burn,
                cost: 0.0,
                time: 0.0,
                histogram: vec![0.0; grid.len() * m],
            };
            let mut rng = replication_rng(config.seed, rep);
            match engine.run(x0, config.horizon, &mut rng, &mut avg)? {
                Outcome::Exited(_) => Ok(None),
                _ => {
                    let time = avg.time;
                    avg.histogram.iter_mut().for_each(|w| *w /= time);
                    Ok(Some((avg.cost / time, avg.histogram)))
                }
            }
        })
        .collect::<Result<_>>()?;
    let contained: Vec<&(f64, Vec<f64>)> = runs.iter().flatten().collect();
    let blowup_fraction = 1.0 - contained.len() as f64 / config.replications as f64;
    let per_replication: Vec<f64> = contained.iter().map(|r| r.0).collect();
    let mut histogram = vec![0.0; grid.len() * m];
    for (_, h) in &contained {
        for (acc, w) in histogram.iter_mut().zip(h) {
            *acc += w / contained.len() as f64;
        }
    }
    let (mean, std_error) = if per_replication.is_empty() {
        (f64::INFINITY, f64::INFINITY)
    } else {
        mean_and_se(&per_replication)
    };
    Ok(ErgodicEstimate {
        mean,
        std_error,
        per_replication,
        histogram,
        controls: m,
        blowup_fraction,
        divergent: blowup_fraction > 0.5,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct HittingEstimate {
    pub mean: f64,
    pub std_error: f64,
    /// Replications that reached the ball.
    pub samples: Vec<f64>,
    pub timeouts: usize,
}

impl HittingEstimate {
    /// `mean ± 1.96 SE`.
    pub fn confidence_interval(&self) -> (f64, f64) {
        (self.mean - 1.96 * self.std_error, self.mean + 1.96 * self.std_error)
    }
}

struct HittingObserver {
    radius: f64,
    rho: f64,
    integral: f64,
    hit: bool,
}

impl Observer for HittingObserver {
    fn hold(&mut self, _t: f64, dt: f64, _x: &[f64], _control: usize, cost: f64) {
        self.integral += (cost - self.rho) * dt;
    }

    fn moved(&mut self, _t: f64, x: &[f64]) -> bool {
        self.hit = norm(x) <= self.radius;
        !self.hit
    }
}

/// Monte Carlo estimate of `E_x0 ∫₀^τ (c − ρ*) dt` with `τ` the first
/// entrance time of the centered ball of radius `r`. Each replication runs
/// for at most `100 · horizon`.
pub fn estimate_value_via_hitting<C: Controller + ?Sized>(
    problem: &ControlledProblem,
    controller: &C,
    x0: &[f64],
    radius: f64,
    rho_star: f64,
    config: &SimConfig,
) -> Result<HittingEstimate> {
    if !(radius > 0.0) {
        return Err(Error::InvalidInput(format!("ball radius must be positive, got {radius}")));
    }
    if norm(x0) <= radius {
        return Ok(HittingEstimate {
            mean: 0.0,
            std_error: 0.0,
            samples: vec![0.0; config.replications],
            timeouts: 0,
        });
    }
    let engine = Engine::new(problem, controller, config)?;
    let limit = 100.0 * config.horizon;
    let runs: Vec<Option<f64>> = (0..config.replications)
        .into_par_iter()
        .map(|rep| {
            let mut obs = HittingObserver {
                radius,
                rho: rho_star,
                integral: 0.0,
                hit: false,
            };
            let mut rng = replication_rng(config.seed, rep);
            engine.run(x0, limit, &mut rng, &mut obs)?;
            Ok(obs.hit.then_some(obs.integral))
        })
        .collect::<Result<_>>()?;
    let samples: Vec<f64> = runs.iter().flatten().copied().collect();
    let timeouts = runs.len() - samples.len();
    if 2 * timeouts > runs.len() {
        return Err(Error::HittingTimeout {
            radius,
            timeouts,
            replications: runs.len(),
        });
    }
    let (mean, std_error) = mean_and_se(&samples);
    Ok(HittingEstimate {
        mean,
        std_error,
        samples,
        timeouts,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathwiseReport {
    pub rho_star: f64,
    pub optimal: ErgodicEstimate,
    pub other: ErgodicEstimate,
    /// `other.mean ≥ ρ* − 3 SE` (a divergent `other` counts as `+∞`).
    pub ordering_holds: bool,
}

impl PathwiseReport {
    pub fn to_key_values(&self) -> String {
        format!(
            "rho_star = {}\noptimal_mean = {}\noptimal_se = {}\nother_mean = {}\nother_se = {}\nother_blowup_fraction = {}\nordering_holds = {}\n",
            fmt_f64(self.rho_star),
            fmt_f64(self.optimal.mean),
            fmt_f64(self.optimal.std_error),
            fmt_f64(self.other.mean),
            fmt_f64(self.other.std_error),
            fmt_f64(self.other.blowup_fraction),
            self.ordering_holds
        )
    }
}

/// Compare the time-average costs of two controls against `ρ*`. Without a
/// solver value, `ρ*` is taken from the optimal control's estimate.
pub fn pathwise_comparison<A: Controller + ?Sized, B: Controller + ?Sized>(
    problem: &ControlledProblem,
    grid: &Grid,
    optimal: &A,
    other: &B,
    rho_star: Option<f64>,
    config: &SimConfig,
) -> Result<PathwiseReport> {
    let x0 = grid.coordinates(grid.reference_node());
    let opt = ergodic_cost_estimate_with(problem, optimal, grid, &x0, config)?;
    let oth = ergodic_cost_estimate_with(problem, other, grid, &x0, config)?;
    let rho_star = rho_star.unwrap_or(opt.mean);
    let ordering_holds = oth.divergent || oth.mean >= rho_star - 3.0 * oth.std_error;
    Ok(PathwiseReport {
        rho_star,
        optimal: opt,
        other: oth,
        ordering_holds,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MartingaleCheck {
    /// Per replication: `(f(X_T) − f(X_0) − ∫₀ᵀ A f(X_s) ds) / T`.
    pub per_replication: Vec<f64>,
    pub mean: f64,
    pub std_error: f64,
}

struct Compensator<'a, F: ?Sized> {
    problem: &'a ControlledProblem,
    f: &'a F,
    integral: f64,
    last: Vec<f64>,
}

impl<F: TestFunction + ?Sized> Observer for Compensator<'_, F> {
    fn hold(&mut self, _t: f64, dt: f64, x: &[f64], control: usize, _cost: f64) {
        self.integral += self.problem.generator_on(self.f, x, control) * dt;
    }

    fn moved(&mut self, _t: f64, x: &[f64]) -> bool {
        self.last.clear();
        self.last.extend_from_slice(x);
        true
    }
}

/// Time-averaged martingale part of `f(X_t)`; close to zero when the
/// simulator and the generator agree.
pub fn martingale_check<C: Controller + ?Sized, F: TestFunction + Sync + ?Sized>(
    problem: &ControlledProblem,
    controller: &C,
    f: &F,
    x0: &[f64],
    config: &SimConfig,
) -> Result<MartingaleCheck> {
    let engine = Engine::new(problem, controller, config)?;
    let per_replication: Vec<f64> = (0..config.replications)
        .into_par_iter()
        .map(|rep| {
            let mut obs = Compensator {
                problem,
                f,
                integral: 0.0,
                last: x0.to_vec(),
            };
            let mut rng = replication_rng(config.seed, rep);
            match engine.run(x0, config.horizon, &mut rng, &mut obs)? {
                Outcome::Exited(time) => Err(Error::Blowup { time }),
                _ => Ok((f.value(&obs.last) - f.value(x0) - obs.integral) / config.horizon),
            }
        })
        .collect::<Result<_>>()?;
    let (mean, std_error) = mean_and_se(&per_replication);
    Ok(MartingaleCheck {
        per_replication,
        mean,
        std_error,
    })
}

/// One-sample Kolmogorov–Smirnov test against `Exp(rate)`: the statistic
/// `D` and its asymptotic p-value.
pub fn ks_exponential(samples: &[f64], rate: f64) -> (f64, f64) {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let cdf = 1.0 - (-rate * x).exp();
            (cdf - i as f64 / n).max((i + 1) as f64 / n - cdf)
        })
        .fold(0.0, f64::max);
    (d, kolmogorov_survival((n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d))
}

/// `P(K > λ) = 2 Σ_{k≥1} (−1)^{k−1} e^{−2k²λ²}`.
fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{Cost, Displacement, Drift, LevyComponent};
    use approx::assert_relative_eq;

    fn problem(sigma: f64, gain: f64, jump_rate: f64, cost: Cost) -> ControlledProblem {
        ControlledProblem {
            dim: 1,
            controls: vec![vec![0.0]],
            diffusion: Diffusion::scaled_identity(1, sigma.max(1e-300)),
            drift: Drift::Linear {
                matrix: vec![vec![gain]],
                control_gain: vec![vec![0.0]],
                offset: vec![0.0],
            },
            levy: if jump_rate > 0.0 {
                vec![LevyComponent::dirac(jump_rate, Displacement::ToPoint(vec![0.0]))]
            } else {
                vec![]
            },
            cost,
            domain_radius: 4.0,
        }
    }

    fn zero_control(_t: f64, _x: &[f64]) -> usize {
        0
    }

    fn config(horizon: f64, rate_bound: f64) -> SimConfig {
        SimConfig {
            horizon,
            rate_bound,
            replications: 4,
            ..SimConfig::default()
        }
    }

    #[test]
    fn frozen_dynamics_keep_the_initial_state() {
        let p = problem(1e-300, 0.0, 0.0, Cost::Constant { value: 1.0 });
        let path = simulate_path(&p, &zero_control, &[1.5], &config(5.0, 0.0)).unwrap();
        assert!(path.states.iter().all(|x| (x[0] - 1.5).abs() < 1e-100));
        assert!(path.jumps.is_empty());
        assert_relative_eq!(*path.cost_integral.last().unwrap(), 5.0, epsilon = 1e-9);
    }

    #[test]
    fn deterministic_decay_tracks_the_exponential() {
        let p = problem(1e-300, -1.0, 0.0, Cost::Constant { value: 0.0 });
        let path = simulate_path(&p, &zero_control, &[2.0], &config(3.0, 0.0)).unwrap();
        let end = path.states.last().unwrap()[0];
        // explicit Euler error is about T·h·x0·e^{−T}/2
        assert!((end - 2.0 * (-3.0f64).exp()).abs() < 3.0 * 0.01 * 2.0 * (-3.0f64).exp());
    }

    #[test]
    fn jump_to_origin_path_shape() {
        let p = problem(1e-300, 0.0, 1.0, Cost::Constant { value: 0.0 });
        let path = simulate_path(&p, &zero_control, &[1.0], &config(50.0, 2.0)).unwrap();
        let first = path.jumps.first().expect("a jump within 50 time units").time;
        for (t, x) in path.times.iter().zip(&path.states) {
            let expected = if *t < first { 1.0 } else { 0.0 };
            assert!((x[0] - expected).abs() < 1e-100);
        }
        assert_eq!(path.jumps[0].displacement, vec![-1.0]);
    }

    #[test]
    fn seeds_are_reproducible_and_distinct() {
        let p = problem(0.5, -1.0, 1.0, Cost::Constant { value: 0.0 });
        let mut c = config(20.0, 1.5);
        let a = simulate_path(&p, &zero_control, &[0.5], &c).unwrap();
        let b = simulate_path(&p, &zero_control, &[0.5], &c).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_csv(&c), b.to_csv(&c));
        c.seed = 1;
        assert_ne!(a, simulate_path(&p, &zero_control, &[0.5], &c).unwrap());
    }

    #[test]
    fn rate_bound_is_enforced() {
        let p = problem(0.5, -1.0, 2.0, Cost::Constant { value: 0.0 });
        let err = simulate_path(&p, &zero_control, &[0.5], &config(5.0, 1.0)).unwrap_err();
        assert!(matches!(err, Error::RateBoundViolated { .. }));
    }

    #[test]
    fn constant_cost_averages_exactly() {
        let p = problem(0.5, -1.0, 0.0, Cost::Constant { value: 2.5 });
        let grid = Grid::uniform(1, 4.0, 41).unwrap();
        let policy = GridPolicy::new(grid.clone(), MarkovPolicy::constant(41, 0)).unwrap();
        let est = ergodic_cost_estimate(&p, &policy, &config(10.0, 0.0)).unwrap();
        assert_relative_eq!(est.mean, 2.5, epsilon = 1e-12);
        assert!(est.std_error < 1e-12);
        assert_relative_eq!(est.histogram.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn unstable_drift_blows_up() {
        let cost = Cost::Quadratic {
            state_weights: vec![1.0],
            control_weights: vec![0.0],
            offset: 0.0,
        };
        let p = problem(0.5, 2.0, 0.0, cost);
        let grid = Grid::uniform(1, 4.0, 41).unwrap();
        let policy = GridPolicy::new(grid, MarkovPolicy::constant(41, 0)).unwrap();
        let est = ergodic_cost_estimate(&p, &policy, &config(20.0, 0.0)).unwrap();
        assert_eq!(est.blowup_fraction, 1.0);
        assert!(est.divergent);
        assert!(matches!(
            simulate_path(&p, &zero_control, &[1.0], &config(20.0, 0.0)),
            Err(Error::Blowup { .. })
        ));
    }

    #[test]
    fn hitting_trivial_cases() {
        let p = problem(0.5, -1.0, 0.0, Cost::Constant { value: 1.0 });
        let inside = estimate_value_via_hitting(&p, &zero_control, &[0.05], 0.1, 1.0, &config(5.0, 0.0)).unwrap();
        assert_eq!(inside.mean, 0.0);
        let flat = estimate_value_via_hitting(&p, &zero_control, &[2.0], 0.1, 1.0, &config(5.0, 0.0)).unwrap();
        assert!(flat.mean.abs() < 1e-12);
        assert_eq!(flat.timeouts, 0);
    }

    #[test]
    fn kolmogorov_tail_values() {
        assert_relative_eq!(kolmogorov_survival(1.36), 0.0494, epsilon = 1e-3);
        assert_relative_eq!(kolmogorov_survival(1.63), 0.0098, epsilon = 1e-3);
        let grid: Vec<f64> = (0..1000).map(|i| -((1000 - i) as f64 / 1000.5).ln()).collect();
        let (d, p) = ks_exponential(&grid, 1.0);
        assert!(d < 0.01 && p > 0.9);
    }
}
