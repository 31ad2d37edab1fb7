use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_ergodic-jump");

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(format!("{name}.toml"))
}

fn run(args: &[&str], config_name: &str, out: &Path) -> (i32, String, String) {
    let output = Command::new(BIN)
        .args(args)
        .arg("--config")
        .arg(config(config_name))
        .arg("--out-dir")
        .arg(out)
        .output()
        .expect("binary runs");
    (
        output.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&output.stdout).into_owned(),
        String::from_utf8_lossy(&output.stderr).into_owned(),
    )
}

fn key(text: &str, name: &str) -> String {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{name} = ")))
        .unwrap_or_else(|| panic!("no `{name}` in\n{text}"))
        .to_string()
}

#[test]
fn solve_ergodic_writes_tables_and_manifest() {
    let dir = TempDir::new().unwrap();
    let (code, stdout, _) = run(&["solve-ergodic", "--nodes", "41"], "jumporigin", dir.path());
    assert_eq!(code, 0);
    let rho: f64 = key(&stdout, "rho").parse().unwrap();
    assert!((rho - 0.708020143671).abs() < 1e-9);
    let manifest = fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    assert_eq!(key(&manifest, "exit_code"), "0");
    assert_eq!(key(&manifest, "nodes"), "41");
    for file in key(&manifest, "outputs").split(' ') {
        assert!(dir.path().join(file).exists(), "{file} listed but missing");
    }
    let v = fs::read_to_string(dir.path().join("V.csv")).unwrap();
    assert_eq!(v.lines().filter(|l| !l.starts_with('#')).count(), 42);
    let policy = fs::read_to_string(dir.path().join("policy.csv")).unwrap();
    assert!(policy.lines().any(|l| l == "x0,control"));
}

#[test]
fn duality_check_passes_on_jump_to_origin() {
    let dir = TempDir::new().unwrap();
    let (code, stdout, _) = run(&["duality-check"], "jumporigin", dir.path());
    assert_eq!(code, 0);
    assert_eq!(key(&stdout, "result"), "PASS");
    let gap: f64 = key(&stdout, "gap").parse().unwrap();
    assert!(gap <= 1e-8);
}

#[test]
fn missing_config_exits_2_without_outputs() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let (code, _, stderr) = run(&["solve-ergodic"], "no_such_file", &out);
    assert_eq!(code, 2);
    assert!(stderr.contains("cannot read"));
    assert!(!out.exists());
}

#[test]
fn unknown_subcommand_exits_2_with_usage() {
    let output = Command::new(BIN).arg("solve-everything").output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("Usage"));
}

#[test]
fn bad_config_reports_line_and_exits_2() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "[problem]\ndim = 1\nradius = 2.0\ncontrols = [[0.0]]\nraduis = 3.0\n").unwrap();
    let output = Command::new(BIN)
        .args(["solve-ergodic", "--config"])
        .arg(&path)
        .arg("--out-dir")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("line 5") && stderr.contains("raduis"), "{stderr}");
}

#[test]
fn failure_after_loading_still_writes_manifest() {
    let dir = TempDir::new().unwrap();
    let (code, _, _) = run(&["verify-lyapunov"], "steering", dir.path());
    assert_eq!(code, 2);
    let manifest = fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    assert_eq!(key(&manifest, "exit_code"), "2");
    assert!(key(&manifest, "error").contains("[lyapunov]"));
    assert_eq!(key(&manifest, "outputs"), "");
}

#[test]
fn non_convergence_exits_3() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("tight.toml");
    let text = fs::read_to_string(config("steering")).unwrap() + "\n[solver]\nmax_iterations = 1\n";
    fs::write(&path, text).unwrap();
    let output = Command::new(BIN)
        .args(["solve-ergodic", "--config"])
        .arg(&path)
        .arg("--out-dir")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(3));
    let manifest = fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    assert_eq!(key(&manifest, "exit_code"), "3");
}

#[test]
fn simulation_outputs_are_byte_identical_for_equal_seeds() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let args = ["simulate", "--horizon", "50", "--reps", "4", "--seed", "99"];
    assert_eq!(run(&args, "steering", a.path()).0, 0);
    assert_eq!(run(&args, "steering", b.path()).0, 0);
    for file in ["estimate.csv", "histogram.csv", "path.csv", "jumps.csv"] {
        let x = fs::read(a.path().join(file)).unwrap();
        let y = fs::read(b.path().join(file)).unwrap();
        assert_eq!(x, y, "{file} differs");
    }
    let c = TempDir::new().unwrap();
    let other = ["simulate", "--horizon", "50", "--reps", "4", "--seed", "100"];
    assert_eq!(run(&other, "steering", c.path()).0, 0);
    assert_ne!(
        fs::read(a.path().join("estimate.csv")).unwrap(),
        fs::read(c.path().join("estimate.csv")).unwrap()
    );
}

#[test]
fn verify_lyapunov_passes_on_the_quadratic_family() {
    let dir = TempDir::new().unwrap();
    let (code, stdout, _) = run(&["verify-lyapunov"], "lyapunov_family", dir.path());
    assert_eq!(code, 0);
    assert_eq!(key(&stdout, "satisfied"), "true");
    assert_eq!(key(&stdout, "exact_satisfied"), "true");
    assert!(dir.path().join("margins.csv").exists());
}

#[test]
fn every_subcommand_runs_on_a_small_grid() {
    let cases: [&[&str]; 11] = [
        &["solve-discounted", "--alpha", "0.25"],
        &["vanishing-discount", "--alpha-min", "0.01"],
        &["solve-ergodic"],
        &["poisson", "--control", "1"],
        &["invariant"],
        &["lp"],
        &["verify-lyapunov"],
        &["simulate", "--horizon", "20", "--reps", "2"],
        &["hitting-value", "--x0", "-2,1", "--horizon", "20", "--reps", "8"],
        &["compare-pathwise", "--horizon", "20", "--reps", "2"],
        &["duality-check"],
    ];
    for args in cases {
        let dir = TempDir::new().unwrap();
        let mut full = args.to_vec();
        full.extend(["--nodes", "21"]);
        let (code, _, stderr) = run(&full, "uniform_stability", dir.path());
        assert_eq!(code, 0, "{args:?}: {stderr}");
        let manifest = fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
        assert_eq!(key(&manifest, "subcommand"), args[0]);
    }
}

#[test]
fn out_of_range_control_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let (code, _, stderr) = run(&["poisson", "--control", "5"], "steering", dir.path());
    assert_eq!(code, 2);
    assert!(stderr.contains("out of range"));
}

#[test]
fn library_entry_point_matches_binary() {
    let dir = TempDir::new().unwrap();
    let code = ergodic_jump::cli::run([
        "ergodic-jump",
        "lp",
        "--config",
        config("jumporigin").to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let lp = fs::read_to_string(dir.path().join("problem.lp")).unwrap();
    assert!(lp.starts_with("\\ ergodic occupation-measure LP"));
}

#[test]
fn divergent_simulation_exits_4() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("unstable.toml");
    fs::write(
        &path,
        "[problem]\ndim = 1\nradius = 2.0\ncontrols = [[0.0]]\n\n\
         [problem.diffusion]\nkind = \"scaled_identity\"\nscale = 0.5\n\n\
         [problem.drift]\nkind = \"linear\"\nmatrix = [[1.0]]\n\n\
         [problem.cost]\nkind = \"quadratic\"\nstate_weights = [1.0]\n",
    )
    .unwrap();
    let output = Command::new(BIN)
        .args(["simulate", "--horizon", "50", "--reps", "4", "--config"])
        .arg(&path)
        .arg("--out-dir")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(4));
    let manifest = fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    assert_eq!(key(&manifest, "exit_code"), "4");
    assert!(dir.path().join("estimate.csv").exists());
}
