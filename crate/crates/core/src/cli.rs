//! Command-line front end: one subcommand per solver or simulator task.
//!
//! Every run writes its tables and a `manifest.txt` into `--out-dir`. A run
//! that fails before the configuration is loaded writes nothing.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::chain::{BoundaryMode, ControlledChain, MarkovPolicy};
use crate::config::{parse_config, Config};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::hjb::{solve_discounted, solve_ergodic, solve_poisson, vanishing_discount, ValueSolution};
use crate::io::{fmt_f64, header, measure_table, node_table, policy_table, value_table};
use crate::lp::{assemble_lp, extract_duals, solve_lp};
use crate::lyapunov::{quadratic_candidate, quadratic_form, report_from_margins, verify_drift, verify_uniform_drift};
use crate::measures::{average_cost, ergodic_occupation, evaluate_policy, invariant_measure, stationarity_residual};
use crate::problem::{QuadraticForm, TestFunction};
use crate::sim::{
    ergodic_cost_estimate, estimate_value_via_hitting, pathwise_comparison, trace_path, GridPolicy, SimConfig,
};

/// Tolerance of `duality-check`.
pub const DUALITY_TOLERANCE: f64 = 1e-8;

/// Rows kept in `path.csv`.
const PATH_ROWS: f64 = 1e4;

#[derive(Parser, Debug)]
#[command(name = "ergodic-jump", version, about = "Ergodic control of jump diffusions on a truncated grid")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug)]
struct Common {
    /// Problem file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Nodes per axis.
    #[arg(long)]
    nodes: Option<usize>,
    /// Half-width of the truncation box.
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    alpha_min: Option<f64>,
    #[arg(long)]
    alpha_max: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Simulated time per replication.
    #[arg(long)]
    horizon: Option<f64>,
    /// Monte Carlo replications.
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Solver stopping tolerance.
    #[arg(long)]
    tolerance: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Discounted HJB at one rate (default: alpha-max).
    SolveDiscounted {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Sweep alpha from alpha-max down to alpha-min and tabulate alpha V(ref).
    VanishingDiscount(Common),
    /// Ergodic HJB: value field, optimal policy and average cost.
    SolveErgodic(Common),
    /// Poisson equation for a constant control, or the optimal policy.
    Poisson(PolicyArgs),
    /// Invariant measure of a constant control, or the optimal policy.
    Invariant(PolicyArgs),
    /// Occupation-measure linear program and its dual value field.
    Lp(Common),
    /// Foster-Lyapunov drift check for the [lyapunov] candidate.
    VerifyLyapunov(Common),
    /// Monte Carlo long-run average cost under the optimal policy.
    Simulate(Common),
    /// Value at a state from costs accumulated until a small ball is reached.
    HittingValue {
        #[command(flatten)]
        common: Common,
        /// Starting state, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        x0: Vec<f64>,
        /// Radius of the target ball (default: two grid cells).
        #[arg(long)]
        ball: Option<f64>,
    },
    /// Time-average cost of the optimal policy against another policy.
    ComparePathwise {
        #[command(flatten)]
        common: Common,
        /// Constant control for the competitor (default: the costliest one).
        #[arg(long)]
        other_control: Option<usize>,
    },
    /// Compare the HJB and LP average costs.
    DualityCheck(Common),
}

#[derive(Args, Clone, Debug)]
struct PolicyArgs {
    #[command(flatten)]
    common: Common,
    /// Constant control index; without it the optimal policy is used.
    #[arg(long)]
    control: Option<usize>,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::SolveDiscounted { .. } => "solve-discounted",
            Command::VanishingDiscount(_) => "vanishing-discount",
            Command::SolveErgodic(_) => "solve-ergodic",
            Command::Poisson(_) => "poisson",
            Command::Invariant(_) => "invariant",
            Command::Lp(_) => "lp",
            Command::VerifyLyapunov(_) => "verify-lyapunov",
            Command::Simulate(_) => "simulate",
            Command::HittingValue { .. } => "hitting-value",
            Command::ComparePathwise { .. } => "compare-pathwise",
            Command::DualityCheck(_) => "duality-check",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::SolveDiscounted { common, .. }
            | Command::HittingValue { common, .. }
            | Command::ComparePathwise { common, .. } => common,
            Command::Poisson(p) | Command::Invariant(p) => &p.common,
            Command::VanishingDiscount(c)
            | Command::SolveErgodic(c)
            | Command::Lp(c)
            | Command::VerifyLyapunov(c)
            | Command::Simulate(c)
            | Command::DualityCheck(c) => c,
        }
    }
}

/// Process exit code for an error: 2 for bad input, 3 for solver failures,
/// 4 for simulation failures.
pub fn exit_code(error: &Error) -> i32 {
    match error {
        Error::NonConvergence { .. }
        | Error::SingularSystem(_)
        | Error::MultichainDetected { .. }
        | Error::NonCauchy { .. }
        | Error::Infeasible(_)
        | Error::Unbounded => 3,
        Error::Blowup { .. } | Error::HittingTimeout { .. } => 4,
        _ => 2,
    }
}

/// What a successful subcommand produced.
struct Report {
    files: Vec<(&'static str, String)>,
    stdout: String,
    iterations: Option<usize>,
    code: i32,
}

impl Report {
    fn new(stdout: String) -> Self {
        Report {
            files: Vec::new(),
            stdout,
            iterations: None,
            code: 0,
        }
    }

    fn file(mut self, name: &'static str, contents: String) -> Self {
        self.files.push((name, contents));
        self
    }

    fn iterations(mut self, n: usize) -> Self {
        self.iterations = Some(n);
        self
    }
}

/// Loaded configuration with the command-line overrides applied.
struct Run {
    cfg: Config,
    grid: Grid,
    echo: Vec<(&'static str, String)>,
}

impl Run {
    fn load(common: &Common) -> Result<Self> {
        let text = fs::read_to_string(&common.config)
            .map_err(|e| Error::config(None, format!("cannot read {}: {e}", common.config.display())))?;
        let mut cfg = parse_config(&text)?.with_grid(common.nodes, common.radius)?;
        if let Some(t) = common.tolerance {
            if !(t > 0.0) {
                return Err(Error::config(None, format!("--tolerance must be positive, got {t}")));
            }
            cfg.solver.options.tolerance = t;
        }
        if let Some(a) = common.alpha_max {
            cfg.solver.alpha_max = a;
        }
        if let Some(a) = common.alpha_min {
            cfg.solver.alpha_min = a;
        }
        let s = &cfg.solver;
        if !(s.alpha_max < 1.0 && s.alpha_min > 0.0 && s.alpha_min <= s.alpha_max) {
            return Err(Error::config(None, "need 0 < alpha-min <= alpha-max < 1"));
        }
        if let Some(seed) = common.seed {
            cfg.sim.seed = seed;
        }
        if let Some(h) = common.horizon {
            cfg.sim.horizon = h;
        }
        if let Some(r) = common.reps {
            cfg.sim.replications = r;
        }
        let grid = cfg.grid()?;
        let peak = SimConfig::for_problem(&cfg.problem, &grid).rate_bound;
        cfg.sim.rate_bound = cfg.sim.rate_bound.max(peak);
        cfg.sim.validate().map_err(|e| Error::config(None, e.to_string()))?;
        let mut echo = vec![
            ("config", common.config.display().to_string()),
            ("dim", cfg.problem.dim.to_string()),
            ("nodes", cfg.nodes.to_string()),
            ("radius", fmt_f64(cfg.problem.domain_radius)),
            ("boundary", boundary_name(cfg.boundary).to_string()),
            ("tolerance", fmt_f64(cfg.solver.options.tolerance)),
            ("max_iterations", cfg.solver.options.max_iterations.to_string()),
            ("alpha_max", fmt_f64(cfg.solver.alpha_max)),
            ("alpha_min", fmt_f64(cfg.solver.alpha_min)),
        ];
        echo.extend(cfg.sim.echo());
        Ok(Run { cfg, grid, echo })
    }

    fn chain(&self) -> Result<ControlledChain> {
        ControlledChain::from_problem(&self.cfg.problem, &self.grid, self.cfg.boundary)
    }

    fn ergodic(&self, chain: &ControlledChain) -> Result<ValueSolution> {
        solve_ergodic(chain, &self.cfg.solver.options)
    }

    /// Table text with the parameter echo on top.
    fn table(&self, body: String) -> String {
        header(&self.echo) + &body
    }

    fn policy(&self, chain: &ControlledChain, control: Option<usize>) -> Result<MarkovPolicy> {
        match control {
            Some(z) if z >= chain.controls() => Err(Error::config(
                None,
                format!("control {z} out of range (problem has {})", chain.controls()),
            )),
            Some(z) => Ok(MarkovPolicy::constant(chain.nodes(), z)),
            None => Ok(self.ergodic(chain)?.policy),
        }
    }

    fn grid_policy(&self, policy: MarkovPolicy) -> Result<GridPolicy> {
        GridPolicy::new(self.grid.clone(), policy)
    }
}

fn boundary_name(mode: BoundaryMode) -> &'static str {
    match mode {
        BoundaryMode::Reflecting => "reflecting",
        BoundaryMode::DirichletZero | BoundaryMode::DirichletConstant(_) => "dirichlet",
    }
}

/// `scale · f`.
struct Scaled<'a> {
    scale: f64,
    f: &'a QuadraticForm,
}

impl TestFunction for Scaled<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        self.scale * self.f.value(x)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.f.gradient(x).into_iter().map(|g| self.scale * g).collect()
    }

    fn hessian(&self, x: &[f64]) -> Vec<f64> {
        self.f.hessian(x).into_iter().map(|h| self.scale * h).collect()
    }
}

fn execute(command: &Command, run: &Run) -> Result<Report> {
    let grid = &run.grid;
    let cfg = &run.cfg;
    match command {
        Command::SolveDiscounted { alpha, .. } => {
            let alpha = alpha.unwrap_or(cfg.solver.alpha_max);
            if !(alpha > 0.0) {
                return Err(Error::config(None, format!("--alpha must be positive, got {alpha}")));
            }
            let sol = solve_discounted(&run.chain()?, alpha, &cfg.solver.options)?;
            let stdout = format!("alpha = {}\nalpha_v_ref = {}\n", fmt_f64(alpha), fmt_f64(sol.rho));
            Ok(Report::new(stdout)
                .file("V_alpha.csv", run.table(value_table(grid, &sol.values, sol.policy.as_slice())))
                .iterations(sol.iterations))
        }
        Command::VanishingDiscount(_) => {
            let (sol, table) = vanishing_discount(&run.chain()?, &cfg.solver.alphas(), &cfg.solver.options)?;
            let last = table.steps.last().and_then(|s| s.cauchy_diff).unwrap_or(f64::NAN);
            let stdout = format!("rho = {}\nlast_cauchy_diff = {}\n", fmt_f64(sol.rho), fmt_f64(last));
            Ok(Report::new(stdout)
                .file("convergence.csv", run.table(table.to_csv()))
                .file("V.csv", run.table(value_table(grid, &sol.values, sol.policy.as_slice())))
                .iterations(sol.iterations))
        }
        Command::SolveErgodic(_) => {
            let sol = run.ergodic(&run.chain()?)?;
            Ok(Report::new(format!("rho = {}\n", fmt_f64(sol.rho)))
                .file("V.csv", run.table(node_table(grid, &[("V", &sol.values)])))
                .file("policy.csv", run.table(policy_table(grid, sol.policy.as_slice())))
                .iterations(sol.iterations))
        }
        Command::Poisson(args) => {
            let chain = run.chain()?;
            let policy = run.policy(&chain, args.control)?;
            let sol = solve_poisson(&chain, &policy)?;
            Ok(Report::new(format!("beta = {}\n", fmt_f64(sol.rho)))
                .file("poisson.csv", run.table(value_table(grid, &sol.values, policy.as_slice())))
                .iterations(sol.iterations))
        }
        Command::Invariant(args) => {
            let chain = run.chain()?;
            let policy = run.policy(&chain, args.control)?;
            let generator = chain.policy_generator(&policy)?;
            let mu = invariant_measure(&generator)?;
            let residual = stationarity_residual(&mu, &generator);
            let cost = average_cost(&ergodic_occupation(&mu, &policy, chain.controls())?, &chain);
            let stdout = format!(
                "average_cost = {}\nstationarity_residual = {}\nstrictly_positive = {}\n",
                fmt_f64(cost),
                fmt_f64(residual),
                mu.is_strictly_positive()
            );
            Ok(Report::new(stdout).file("measure.csv", run.table(measure_table(grid, &mu.weights, policy.as_slice()))))
        }
        Command::Lp(_) => {
            let chain = run.chain()?;
            let instance = assemble_lp(&chain)?;
            let solution = solve_lp(&instance)?;
            let duals = extract_duals(&instance, &solution, &chain)?;
            let mut occupation = String::from("node,control,weight\n");
            for x in 0..instance.nodes() {
                for z in 0..instance.controls() {
                    let w = solution.occupation.weight(x, z);
                    let _ = writeln!(occupation, "{x},{z},{}", fmt_f64(w));
                }
            }
            let stdout = format!(
                "rho = {}\nrho_dual = {}\ncertificate_margin = {}\ncomplementary_slackness = {}\nsimplex_iterations = {}\n",
                fmt_f64(solution.rho_star),
                fmt_f64(duals.rho_dual),
                fmt_f64(duals.certificate_margin),
                fmt_f64(solution.complementary_slackness),
                solution.simplex.iterations
            );
            Ok(Report::new(stdout)
                .file("occupation.csv", run.table(occupation))
                .file("duals.csv", run.table(node_table(grid, &[("h", &duals.value_field)])))
                .file("problem.lp", instance.to_lp_format())
                .iterations(solution.simplex.iterations))
        }
        Command::VerifyLyapunov(_) => {
            let settings = cfg
                .lyapunov
                .as_ref()
                .ok_or_else(|| Error::config(None, "verify-lyapunov needs a [lyapunov] table"))?;
            let candidate: Vec<f64> = quadratic_candidate(grid, &settings.matrix, settings.theta)?
                .into_iter()
                .map(|v| settings.scale * v)
                .collect();
            let mut stdout = String::new();
            let report = if settings.uniform {
                verify_uniform_drift(&cfg.problem, grid, &candidate, &vec![1.0; grid.len()])?
            } else {
                let chain = ControlledChain::from_problem(&cfg.problem, grid, BoundaryMode::Reflecting)?;
                let policy = if chain.controls() == 1 {
                    MarkovPolicy::constant(grid.len(), 0)
                } else {
                    run.ergodic(&chain)?.policy
                };
                let cost = chain.policy_cost(&policy);
                let q = quadratic_form(grid.dim(), &settings.matrix, settings.theta)?;
                let f = Scaled {
                    scale: settings.scale,
                    f: &q,
                };
                let exact: Vec<f64> = (0..grid.len())
                    .map(|i| {
                        if grid.is_boundary(i) {
                            f64::NAN
                        } else {
                            cfg.problem.generator_on(&f, &grid.coordinates(i), policy.control_at(i)) + cost[i]
                        }
                    })
                    .collect();
                let exact = report_from_margins(grid, exact);
                stdout.push_str(&format!(
                    "exact_satisfied = {}\nexact_kappa0 = {}\nexact_ball_radius = {}\n",
                    exact.satisfied,
                    fmt_f64(exact.kappa0),
                    fmt_f64(exact.ball_radius)
                ));
                verify_drift(&cfg.problem, grid, &policy, &candidate, &cost)?
            };
            let stdout = report.to_key_values() + &stdout;
            Ok(Report::new(stdout.clone())
                .file("margins.csv", run.table(report.margins_csv(grid)))
                .file("lyapunov.txt", stdout))
        }
        Command::Simulate(_) => {
            let sol = run.ergodic(&run.chain()?)?;
            let controller = run.grid_policy(sol.policy.clone())?;
            let estimate = ergodic_cost_estimate(&cfg.problem, &controller, &cfg.sim)?;
            let steps = cfg.sim.horizon / cfg.sim.time_step;
            let path_config = SimConfig {
                record_stride: (steps / PATH_ROWS).ceil().max(1.0) as usize,
                ..cfg.sim.clone()
            };
            let x0 = grid.coordinates(grid.reference_node());
            let path = trace_path(&cfg.problem, &controller, &x0, &path_config)?;
            let stdout = format!(
                "mean = {}\nstd_error = {}\nrho_grid = {}\nblowup_fraction = {}\n",
                fmt_f64(estimate.mean),
                fmt_f64(estimate.std_error),
                fmt_f64(sol.rho),
                fmt_f64(estimate.blowup_fraction)
            );
            let mut report = Report::new(stdout)
                .file("estimate.csv", run.table(estimate.to_csv(&cfg.sim)))
                .file(
                    "histogram.csv",
                    run.table(measure_table(grid, &estimate.node_marginal(), sol.policy.as_slice())),
                )
                .file("path.csv", run.table(path.to_csv(&path_config)))
                .file("jumps.csv", run.table(path.jumps_csv(&path_config)));
            if estimate.divergent {
                report.code = 4;
            }
            Ok(report)
        }
        Command::HittingValue { x0, ball, .. } => {
            if x0.len() != grid.dim() {
                return Err(Error::config(
                    None,
                    format!("--x0 needs {} coordinates, got {}", grid.dim(), x0.len()),
                ));
            }
            let sol = run.ergodic(&run.chain()?)?;
            let radius = ball.unwrap_or(2.0 * grid.max_spacing());
            let controller = run.grid_policy(sol.policy.clone())?;
            let est = estimate_value_via_hitting(&cfg.problem, &controller, x0, radius, sol.rho, &cfg.sim)?;
            let v = sol.values[grid.nearest_node(x0)];
            let mut table = String::from("replication,integral\n");
            for (k, s) in est.samples.iter().enumerate() {
                let _ = writeln!(table, "{k},{}", fmt_f64(*s));
            }
            let stdout = format!(
                "estimate = {}\nstd_error = {}\ntimeouts = {}\nball_radius = {}\nrho = {}\nv_grid = {}\n",
                fmt_f64(est.mean),
                fmt_f64(est.std_error),
                est.timeouts,
                fmt_f64(radius),
                fmt_f64(sol.rho),
                fmt_f64(v)
            );
            Ok(Report::new(stdout).file("hitting.csv", run.table(table)))
        }
        Command::ComparePathwise { other_control, .. } => {
            let chain = run.chain()?;
            let sol = run.ergodic(&chain)?;
            let other = match other_control {
                Some(_) => run.policy(&chain, *other_control)?,
                None => costliest_constant_policy(&chain),
            };
            let optimal = run.grid_policy(sol.policy.clone())?;
            let competitor = run.grid_policy(other)?;
            let report = pathwise_comparison(&cfg.problem, grid, &optimal, &competitor, Some(sol.rho), &cfg.sim)?;
            let text = report.to_key_values();
            Ok(Report::new(text.clone())
                .file("pathwise.txt", text)
                .file("optimal.csv", run.table(report.optimal.to_csv(&cfg.sim)))
                .file("other.csv", run.table(report.other.to_csv(&cfg.sim))))
        }
        Command::DualityCheck(_) => {
            let chain = run.chain()?;
            let sol = run.ergodic(&chain)?;
            let lp = solve_lp(&assemble_lp(&chain)?)?;
            let gap = (sol.rho - lp.rho_star).abs();
            let pass = gap <= DUALITY_TOLERANCE;
            let text = format!(
                "rho_hjb = {}\nrho_lp = {}\ngap = {}\nresult = {}\n",
                fmt_f64(sol.rho),
                fmt_f64(lp.rho_star),
                fmt_f64(gap),
                if pass { "PASS" } else { "FAIL" }
            );
            let mut report = Report::new(text.clone()).file("duality.txt", text);
            if !pass {
                report.code = 3;
            }
            Ok(report)
        }
    }
}

/// The constant policy with the largest average cost on the grid (policies
/// whose chain is not unichain are skipped).
fn costliest_constant_policy(chain: &ControlledChain) -> MarkovPolicy {
    (0..chain.controls())
        .map(|z| MarkovPolicy::constant(chain.nodes(), z))
        .filter_map(|p| evaluate_policy(chain, &p).ok().map(|(_, _, c)| (p, c)))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map_or_else(|| MarkovPolicy::constant(chain.nodes(), 0), |(p, _)| p)
}

/// Outcome of one subcommand, as recorded in `manifest.txt`.
struct Manifest<'a> {
    command: &'a Command,
    files: Vec<&'a str>,
    code: i32,
    error: Option<Error>,
    seconds: f64,
    iterations: Option<usize>,
}

impl Manifest<'_> {
    fn write(&self, dir: &Path, run: &Run) -> std::io::Result<()> {
        let mut out = String::new();
        let _ = writeln!(out, "subcommand = {}", self.command.name());
        let _ = writeln!(out, "out_dir = {}", dir.display());
        let _ = writeln!(out, "exit_code = {}", self.code);
        if let Some(e) = &self.error {
            let _ = writeln!(out, "error = {e}");
        }
        let _ = writeln!(out, "wall_clock_seconds = {}", fmt_f64(self.seconds));
        if let Some(n) = self.iterations {
            let _ = writeln!(out, "iterations = {n}");
        }
        for (k, v) in &run.echo {
            let _ = writeln!(out, "{k} = {v}");
        }
        let _ = writeln!(out, "outputs = {}", self.files.join(" "));
        fs::write(dir.join("manifest.txt"), out)
    }
}

/// Parse `argv` (program name first), run the subcommand and return the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let command = &cli.command;
    let common = command.common();
    let run = match Run::load(common) {
        Ok(run) => run,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    let dir = &common.out_dir;
    if let Err(e) = fs::create_dir_all(dir) {
        eprintln!("error: cannot create {}: {e}", dir.display());
        return 1;
    }
    let start = Instant::now();
    let result = execute(command, &run);
    let seconds = start.elapsed().as_secs_f64();
    let manifest = match &result {
        Ok(out) => {
            for (name, contents) in &out.files {
                if let Err(e) = fs::write(dir.join(name), contents) {
                    eprintln!("error: cannot write {name}: {e}");
                    return 1;
                }
            }
            print!("{}", out.stdout);
            Manifest {
                command,
                files: out.files.iter().map(|(n, _)| *n).collect(),
                code: out.code,
                error: None,
                seconds,
                iterations: out.iterations,
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            Manifest {
                command,
                files: Vec::new(),
                code: exit_code(e),
                error: Some(e.clone()),
                seconds,
                iterations: None,
            }
        }
    };
    if let Err(e) = manifest.write(dir, &run) {
        eprintln!("error: cannot write manifest: {e}");
        return 1;
    }
    manifest.code
}
