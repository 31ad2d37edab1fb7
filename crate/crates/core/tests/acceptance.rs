//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Tolerances are fixed here. The process exits nonzero when the set of
//! failing criteria differs from `KNOWN_FAILURES`.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ergodic_jump::config::Config;
use ergodic_jump::hjb::{improve_policy, solve_ergodic, solve_poisson, vanishing_discount, SolverOptions};
use ergodic_jump::lp::{assemble_lp, solve_lp};
use ergodic_jump::lyapunov::{quadratic_candidate, verify_drift};
use ergodic_jump::measures::{evaluate_policy, invariant_measure, stationarity_residual};
use ergodic_jump::problem::QuadraticForm;
use ergodic_jump::sim::{
    ergodic_cost_estimate, estimate_value_via_hitting, ks_exponential, martingale_check, trace_path, GridPolicy,
    SimConfig,
};
use ergodic_jump::{parse_config, ControlledChain, Grid, MarkovPolicy, Result};

/// Criteria whose failure is explained in the project notes. A criterion
/// that starts passing must be removed from this list.
const KNOWN_FAILURES: &[usize] = &[11];

const JUMPORIGIN: &str = include_str!("../../../configs/jumporigin.toml");
const FAMILY: &str = include_str!("../../../configs/lyapunov_family.toml");
const STEERING: &str = include_str!("../../../configs/steering.toml");
const UNIFORM: &str = include_str!("../../../configs/uniform_stability.toml");

const CANONICAL: [(&str, &str); 4] = [
    ("jumporigin", JUMPORIGIN),
    ("lyapunov_family", FAMILY),
    ("steering", STEERING),
    ("uniform_stability", UNIFORM),
];

struct Instance {
    cfg: Config,
    grid: Grid,
    chain: ControlledChain,
}

fn load(text: &str, nodes: Option<usize>, radius: Option<f64>) -> Result<Instance> {
    let cfg = parse_config(text)?.with_grid(nodes, radius)?;
    let grid = cfg.grid()?;
    let chain = ControlledChain::from_problem(&cfg.problem, &grid, cfg.boundary)?;
    Ok(Instance { cfg, grid, chain })
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

type Outcome = Result<(bool, String)>;

/// |ρ_HJB − ρ_LP| ≤ 1e−8 on the four instances, within 30 s.
fn duality() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0_f64;
    for (_, text) in CANONICAL {
        let inst = load(text, None, None)?;
        let rho = solve_ergodic(&inst.chain, &inst.cfg.solver.options)?.rho;
        let lp = solve_lp(&assemble_lp(&inst.chain)?)?;
        worst = worst.max((rho - lp.rho_star).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((
        worst <= 1e-8 && secs <= 30.0,
        format!("max gap {worst:.2e} (tol 1e-8), {secs:.2} s (limit 30 s)"),
    ))
}

/// Final |α V_α(ref) − ρ*| ≤ 1e−3 max(1, ρ*), errors non-increasing for α ≤ 1/8.
fn vanishing() -> Outcome {
    let mut ok = true;
    let mut worst = 0.0_f64;
    for (name, text) in CANONICAL {
        let inst = load(text, None, None)?;
        let rho = solve_lp(&assemble_lp(&inst.chain)?)?.rho_star;
        let (_, table) = vanishing_discount(&inst.chain, &inst.cfg.solver.alphas(), &inst.cfg.solver.options)?;
        let errors: Vec<(f64, f64)> = table
            .steps
            .iter()
            .map(|s| (s.alpha, (s.scaled_value - rho).abs()))
            .collect();
        let last = errors.last().map_or(f64::INFINITY, |e| e.1);
        let monotone = errors
            .windows(2)
            .filter(|w| w[0].0 <= 0.125 + 1e-15)
            .all(|w| w[1].1 <= w[0].1);
        let final_ok = last <= 1e-3 * rho.max(1.0);
        if !(monotone && final_ok) {
            println!("    {name}: final error {last:.2e}, monotone {monotone}");
        }
        ok &= monotone && final_ok;
        worst = worst.max(last / rho.max(1.0));
    }
    Ok((ok, format!("worst final error {worst:.2e} relative (tol 1e-3), monotone below 1/8")))
}

/// Two starting value fields give the same (V, ρ) after pinning V(ref) = 0.
fn uniqueness() -> Outcome {
    let (mut dv, mut drho) = (0.0_f64, 0.0_f64);
    for (_, text) in CANONICAL {
        let inst = load(text, None, None)?;
        let a = solve_ergodic(&inst.chain, &inst.cfg.solver.options)?;
        let start: Vec<f64> = (0..inst.grid.len())
            .map(|i| {
                let x = inst.grid.coordinates(i);
                10.0 * x.iter().map(|v| v.sin() + v * v).sum::<f64>()
            })
            .collect();
        let options = SolverOptions {
            initial_values: Some(start),
            ..inst.cfg.solver.options.clone()
        };
        let b = solve_ergodic(&inst.chain, &options)?;
        dv = dv.max(max_abs_diff(&a.values, &b.values));
        drho = drho.max((a.rho - b.rho).abs());
    }
    Ok((
        dv <= 1e-8 && drho <= 1e-10,
        format!("max |V1 - V2| = {dv:.2e} (tol 1e-8), |rho1 - rho2| = {drho:.2e} (tol 1e-10)"),
    ))
}

/// The greedy policy of the converged V is the converged policy everywhere.
fn verification() -> Outcome {
    let (mut agree, mut total) = (0, 0);
    for (_, text) in CANONICAL {
        let inst = load(text, None, None)?;
        let sol = solve_ergodic(&inst.chain, &inst.cfg.solver.options)?;
        let greedy = improve_policy(&inst.chain, &sol.values)?;
        agree += greedy.as_slice().iter().zip(sol.policy.as_slice()).filter(|(a, b)| a == b).count();
        total += inst.grid.len();
    }
    Ok((agree == total, format!("{agree} of {total} nodes agree")))
}

/// Poisson β against μ(c), stationarity residual and positivity, for every
/// deterministic policy of a 7-node instance and for constant, optimal and
/// 50 random policies of the 41-node instances.
fn poisson() -> Outcome {
    let mut cases: Vec<(Instance, Vec<MarkovPolicy>)> = Vec::new();
    let tiny = load(STEERING, Some(7), Some(1.5))?;
    let all: Vec<MarkovPolicy> = MarkovPolicy::enumerate(tiny.chain.nodes(), tiny.chain.controls()).collect();
    cases.push((tiny, all));
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for text in [JUMPORIGIN, STEERING] {
        let inst = load(text, None, None)?;
        let (n, m) = (inst.chain.nodes(), inst.chain.controls());
        let mut policies: Vec<MarkovPolicy> = (0..m).map(|z| MarkovPolicy::constant(n, z)).collect();
        policies.push(solve_ergodic(&inst.chain, &inst.cfg.solver.options)?.policy);
        policies.extend((0..50).map(|_| MarkovPolicy((0..n).map(|_| rng.random_range(0..m)).collect())));
        cases.push((inst, policies));
    }
    let (mut gap, mut residual, mut positive, mut count) = (0.0_f64, 0.0_f64, true, 0);
    for (inst, policies) in &cases {
        for policy in policies {
            let beta = solve_poisson(&inst.chain, policy)?.rho;
            let (_, _, cost) = evaluate_policy(&inst.chain, policy)?;
            let generator = inst.chain.policy_generator(policy)?;
            let mu = invariant_measure(&generator)?;
            gap = gap.max((beta - cost).abs());
            residual = residual.max(stationarity_residual(&mu, &generator));
            positive &= mu.is_strictly_positive();
            count += 1;
        }
    }
    Ok((
        gap <= 1e-8 && residual <= 1e-10 && positive,
        format!(
            "{count} policies: max |beta - mu(c)| = {gap:.2e} (tol 1e-8), max |mu Q| = {residual:.2e} (tol 1e-10), mu > 0: {positive}"
        ),
    ))
}

/// Enumeration of deterministic policies matches ρ*_LP on tiny instances.
fn attainment() -> Outcome {
    let mut worst = 0.0_f64;
    let mut enumerated = 0;
    for (nodes, radius) in [(3, 1.0), (7, 1.5)] {
        let inst = load(STEERING, Some(nodes), Some(radius))?;
        let lp = solve_lp(&assemble_lp(&inst.chain)?)?.rho_star;
        let best = MarkovPolicy::enumerate(inst.chain.nodes(), inst.chain.controls())
            .map(|p| evaluate_policy(&inst.chain, &p).map(|r| r.2))
            .collect::<Result<Vec<f64>>>()?;
        enumerated += best.len();
        let best = best.into_iter().fold(f64::INFINITY, f64::min);
        worst = worst.max((best - lp).abs());
    }
    Ok((
        worst <= 1e-10,
        format!("{enumerated} policies enumerated, max |min cost - rho_LP| = {worst:.2e} (tol 1e-10)"),
    ))
}

/// Drift check for |x|² on the jump-to-origin problem, and the quadratic
/// family for θ ∈ {1, 2}.
fn lyapunov() -> Outcome {
    let inst = load(JUMPORIGIN, None, None)?;
    let grid = &inst.grid;
    let d = grid.dim() as f64;
    let h = grid.max_spacing();
    let policy = MarkovPolicy::constant(grid.len(), 0);
    let candidate: Vec<f64> = quadratic_candidate(grid, &[vec![1.0]], 2.0)?;
    let report = verify_drift(&inst.cfg.problem, grid, &policy, &candidate, &inst.chain.policy_cost(&policy))?;
    let lipschitz = (1..grid.len())
        .filter(|&i| {
            let (a, b) = (report.margins[i - 1], report.margins[i]);
            !a.is_nan() && !b.is_nan() && grid.coordinates(i)[0].abs().max(grid.coordinates(i - 1)[0].abs()) <= report.ball_radius + h
        })
        .map(|i| (report.margins[i] - report.margins[i - 1]).abs() / h)
        .fold(0.0, f64::max);
    let tol = 10.0 * h * lipschitz;
    let kappa_ok = (report.kappa0 - 2.0 * d).abs() <= tol;
    let ball_ok = (report.ball_radius - d.sqrt()).abs() <= h;
    let mut family = Vec::new();
    for theta in ["1.0", "2.0"] {
        let text = FAMILY
            .replace("theta = 1.0\n\n[problem.cost]", &format!("theta = {theta}\n\n[problem.cost]"))
            .replace("theta = 1.0\nscale", &format!("theta = {theta}\nscale"));
        let inst = load(&text, None, None)?;
        let l = inst.cfg.lyapunov.clone().expect("family config has [lyapunov]");
        let candidate: Vec<f64> = quadratic_candidate(&inst.grid, &l.matrix, l.theta)?
            .into_iter()
            .map(|v| l.scale * v)
            .collect();
        let policy = MarkovPolicy::constant(inst.grid.len(), 0);
        let r = verify_drift(&inst.cfg.problem, &inst.grid, &policy, &candidate, &inst.chain.policy_cost(&policy))?;
        family.push(r.satisfied);
    }
    Ok((
        report.satisfied && kappa_ok && ball_ok && family.iter().all(|&s| s),
        format!(
            "kappa0 = {:.4} vs {} (tol {tol:.3}), ball radius {:.3} vs {:.3} (tol {h}), family theta 1/2 satisfied: {:?}",
            report.kappa0,
            2.0 * d,
            report.ball_radius,
            d.sqrt(),
            family
        ),
    ))
}

/// Simulated average under the optimal policy within 3 SE + 0.05 ρ*, and a
/// suboptimal policy not below ρ* − 3 SE. Within 2 minutes.
fn solver_vs_simulation() -> Outcome {
    let start = Instant::now();
    let mut ok = true;
    let mut lines = Vec::new();
    for (name, text) in [("jumporigin", JUMPORIGIN), ("steering", STEERING)] {
        let inst = load(text, Some(161), None)?;
        let sol = solve_ergodic(&inst.chain, &inst.cfg.solver.options)?;
        let config = SimConfig {
            horizon: 1e4,
            replications: 20,
            time_step: 1e-2,
            ..inst.cfg.sim.clone()
        };
        let optimal = GridPolicy::new(inst.grid.clone(), sol.policy.clone())?;
        let est = ergodic_cost_estimate(&inst.cfg.problem, &optimal, &config)?;
        let tol = 3.0 * est.std_error + 0.05 * sol.rho;
        ok &= (est.mean - sol.rho).abs() <= tol;
        lines.push(format!("{name} {:.4} vs {:.4} (tol {tol:.4})", est.mean, sol.rho));
        if inst.chain.controls() > 1 {
            let other = GridPolicy::new(inst.grid.clone(), MarkovPolicy::constant(inst.grid.len(), 1))?;
            let bad = ergodic_cost_estimate(&inst.cfg.problem, &other, &config)?;
            ok &= bad.divergent || bad.mean >= sol.rho - 3.0 * bad.std_error;
            lines.push(format!("suboptimal {:.4} >= {:.4}", bad.mean, sol.rho - 3.0 * bad.std_error));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ok &= secs <= 120.0;
    Ok((ok, format!("{}, {secs:.1} s (limit 120 s)", lines.join("; "))))
}

/// Hitting-time value estimates at three states against the grid V.
fn representation() -> Outcome {
    let inst = load(JUMPORIGIN, None, None)?;
    let sol = solve_ergodic(&inst.chain, &inst.cfg.solver.options)?;
    let controller = GridPolicy::new(inst.grid.clone(), sol.policy.clone())?;
    let config = SimConfig {
        replications: 400,
        horizon: 100.0,
        ..inst.cfg.sim.clone()
    };
    let radius = 2.0 * inst.grid.max_spacing();
    let mut ok = true;
    let mut lines = Vec::new();
    for x in [1.0, 2.0, 3.0] {
        let est = estimate_value_via_hitting(&inst.cfg.problem, &controller, &[x], radius, sol.rho, &config)?;
        let v = sol.values[inst.grid.nearest_node(&[x])];
        let tol = 3.0 * est.std_error + 0.1 * (1.0 + v.abs());
        ok &= (est.mean - v).abs() <= tol;
        lines.push(format!("x={x}: {:.3} vs {v:.3} (tol {tol:.3})", est.mean));
    }
    Ok((ok, lines.join(", ")))
}

/// KS test of inter-jump times, seed determinism and the martingale check.
fn simulator_laws() -> Outcome {
    let inst = load(JUMPORIGIN, None, None)?;
    let zero = |_t: f64, _x: &[f64]| 0usize;
    let config = SimConfig {
        horizon: 1.0e4,
        record_stride: 1000,
        ..inst.cfg.sim.clone()
    };
    let path = trace_path(&inst.cfg.problem, &zero, &[0.0], &config)?;
    let mut gaps = path.inter_jump_times();
    gaps.truncate(10_000);
    let (d, p) = ks_exponential(&gaps, 1.0);
    let ks_ok = gaps.len() == 10_000 && p >= 0.01;

    let short = SimConfig {
        horizon: 50.0,
        ..config.clone()
    };
    let steer = load(STEERING, None, None)?;
    let policy = GridPolicy::new(steer.grid.clone(), solve_ergodic(&steer.chain, &steer.cfg.solver.options)?.policy)?;
    let a = trace_path(&steer.cfg.problem, &policy, &[0.0], &short)?;
    let b = trace_path(&steer.cfg.problem, &policy, &[0.0], &short)?;
    let same = a == b && a.to_csv(&short) == b.to_csv(&short);

    let f = QuadraticForm::squared_norm(1);
    let mart_config = SimConfig {
        horizon: 200.0,
        replications: 40,
        ..inst.cfg.sim.clone()
    };
    let m1 = martingale_check(&inst.cfg.problem, &zero, &f, &[1.0], &mart_config)?;
    let m2 = martingale_check(&steer.cfg.problem, &policy, &f, &[1.0], &mart_config)?;
    let mart_ok = m1.mean.abs() <= 3.0 * m1.std_error && m2.mean.abs() <= 3.0 * m2.std_error;
    Ok((
        ks_ok && same && mart_ok,
        format!(
            "KS D = {d:.4}, p = {p:.3} on {} gaps; deterministic: {same}; martingale means {:.2e} (3 SE {:.2e}), {:.2e} (3 SE {:.2e})",
            gaps.len(),
            m1.mean,
            3.0 * m1.std_error,
            m2.mean,
            3.0 * m2.std_error
        ),
    ))
}

/// ρ* at R = 2, 3, 4 with spacing 0.2: the last change is at most 1%.
fn truncation() -> Outcome {
    let mut rhos = Vec::new();
    for radius in [2.0_f64, 3.0, 4.0] {
        let nodes = (2.0 * radius / 0.2).round() as usize + 1;
        let inst = load(JUMPORIGIN, Some(nodes), Some(radius))?;
        rhos.push(solve_ergodic(&inst.chain, &inst.cfg.solver.options)?.rho);
    }
    let change = (rhos[2] - rhos[1]).abs() / rhos[2].abs();
    Ok((
        change <= 0.01,
        format!(
            "rho = {:.6}, {:.6}, {:.6}; last relative change {:.3}% (limit 1%)",
            rhos[0],
            rhos[1],
            rhos[2],
            100.0 * change
        ),
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("duality", duality),
        ("vanishing discount", vanishing),
        ("uniqueness normalization", uniqueness),
        ("verification", verification),
        ("poisson identity", poisson),
        ("optimality attainment", attainment),
        ("lyapunov example", lyapunov),
        ("solver vs simulation", solver_vs_simulation),
        ("stochastic representation", representation),
        ("simulator laws", simulator_laws),
        ("truncation trend", truncation),
    ];
    let mut failures = Vec::new();
    for (k, (name, check)) in criteria.iter().enumerate() {
        let id = k + 1;
        let (pass, detail) = check().unwrap_or_else(|e| (false, format!("error: {e}")));
        println!("criterion {id:>2} {}: {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            failures.push(id);
        }
    }
    let passed = criteria.len() - failures.len();
    println!("acceptance: {passed}/{} passed; failing: {failures:?}; known: {KNOWN_FAILURES:?}", criteria.len());
    if failures != KNOWN_FAILURES {
        std::process::exit(1);
    }
}
