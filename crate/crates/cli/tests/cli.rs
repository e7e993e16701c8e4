use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_impulse-qvi");

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn quick() -> PathBuf {
    configs().join("quick.toml")
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn run_env(args: &[&str], key: &str, value: &str) -> Output {
    Command::new(BIN).args(args).env(key, value).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn manifest(dir: &Path, command: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join(format!("{command}.manifest.json"))).unwrap()).unwrap()
}

/// Quick config with extra TOML appended.
fn quick_with(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("config.toml");
    fs::write(&path, fs::read_to_string(quick()).unwrap() + extra).unwrap();
    path
}

#[test]
fn solve_reference_writes_value_field_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["solve", "--config", s(&configs().join("reference.toml")), "--out", s(dir.path())]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = fs::read_to_string(dir.path().join("value_field.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("x,u,Mu,region,xi_star,Au_minus_f"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 801);
    for row in &rows {
        assert_eq!(row.len(), 6);
        assert!(row[3] == "C" || row[3] == "A");
        // d.dddddddddddddddde±x: 17 significant digits
        let mantissa = row[1].split('e').next().unwrap();
        assert_eq!(mantissa.chars().filter(|c| c.is_ascii_digit()).count(), 17, "{}", row[1]);
    }
    let u0: f64 = rows[400][1].parse().unwrap();
    assert!((u0 - 0.9742).abs() < 1e-3, "u(0) = {u0}");
    assert!(rows.iter().any(|r| r[3] == "A") && rows[400][3] == "C");

    let m = manifest(dir.path(), "solve");
    assert_eq!(m["command"], "solve");
    assert_eq!(m["verdict"], "ok");
    assert_eq!(m["seed"], 1);
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(m["outputs"]["value_field"], "value_field.csv");
    assert_eq!(m["summary"]["violations"], 0);
    assert_eq!(m["summary"]["lipschitz"]["pass"], true);
    assert!(m["summary"]["residuals"]["r1"].as_f64().unwrap() <= 5e-6);
}

#[test]
fn same_config_and_seed_give_identical_outputs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        assert_eq!(code(&run(&["solve", "--config", s(&quick()), "--out", s(dir.path())])), 0);
        assert_eq!(code(&run(&["simulate", "--config", s(&quick()), "--seed", "9", "--out", s(dir.path())])), 0);
    }
    for file in ["value_field.csv", "trace.csv", "paths.csv", "trajectories.csv"] {
        assert_eq!(fs::read(a.path().join(file)).unwrap(), fs::read(b.path().join(file)).unwrap(), "{file}");
    }
    assert_eq!(manifest(a.path(), "solve")["config_hash"], manifest(b.path(), "solve")["config_hash"]);

    let c = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&["simulate", "--config", s(&quick()), "--seed", "10", "--out", s(c.path())])), 0);
    assert_ne!(fs::read(a.path().join("paths.csv")).unwrap(), fs::read(c.path().join("paths.csv")).unwrap());
}

#[test]
fn manifest_config_reproduces_the_run() {
    let a = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&["solve", "--config", s(&quick()), "--out", s(a.path())])), 0);
    let m = manifest(a.path(), "solve");
    let replay = a.path().join("replay.toml");
    fs::write(&replay, m["config"].as_str().unwrap()).unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&["solve", "--config", s(&replay), "--out", s(b.path())])), 0);
    assert_eq!(manifest(b.path(), "solve")["config_hash"], m["config_hash"]);
    assert_eq!(fs::read(a.path().join("value_field.csv")).unwrap(), fs::read(b.path().join("value_field.csv")).unwrap());
}

#[test]
fn simulate_writes_one_row_per_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["simulate", "--config", s(&quick()), "--out", s(dir.path())]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = fs::read_to_string(dir.path().join("paths.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("path,stream,terminal,impulses,cost"));
    assert_eq!(csv.lines().count(), 201);
    assert_eq!(manifest(dir.path(), "simulate")["seed"], 1);
}

#[test]
fn input_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = run(&["solve", "--config", s(&dir.path().join("absent.toml")), "--out", s(dir.path())]);
    assert_eq!(code(&missing), 2);

    let heavy = quick_with(dir.path(), "\n[levy]\norder = 2.5\n");
    let out = run(&["solve", "--config", s(&heavy), "--out", s(dir.path())]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("infinite quadratic small-jump mass"), "{}", stderr(&out));

    let unknown = quick_with(dir.path(), "\n[model.drift]\nname = \"cubic\"\n");
    assert_eq!(code(&run(&["solve", "--config", s(&unknown), "--out", s(dir.path())])), 2);

    let two_eps = run(&["solve", "--config", s(&quick()), "--eps", "0.1,0.05", "--out", s(dir.path())]);
    assert_eq!(code(&two_eps), 2);
    let negative = run(&["solve", "--config", s(&quick()), "--eps=-0.1", "--out", s(dir.path())]);
    assert_eq!(code(&negative), 2);
    assert_eq!(code(&run(&["solve", "--bogus"])), 2);

    let threads = run_env(&["solve", "--config", s(&quick()), "--out", s(dir.path())], "IMPULSE_QVI_THREADS", "zero");
    assert_eq!(code(&threads), 2);
}

#[test]
fn thread_cap_does_not_change_results() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = |d: &Path| vec!["simulate".to_string(), "--config".into(), s(&quick()).into(), "--out".into(), s(d).into()];
    let run_with = |d: &Path, n: &str| {
        let argv = args(d);
        let argv: Vec<&str> = argv.iter().map(String::as_str).collect();
        code(&run_env(&argv, "IMPULSE_QVI_THREADS", n))
    };
    assert_eq!(run_with(a.path(), "1"), 0);
    assert_eq!(run_with(b.path(), "3"), 0);
    assert_eq!(fs::read(a.path().join("paths.csv")).unwrap(), fs::read(b.path().join("paths.csv")).unwrap());
}

#[test]
fn dump_operator_writes_matrix() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&["solve", "--config", s(&quick()), "--dump-operator", "--out", s(dir.path())])), 0);
    assert!(dir.path().join("operator.csv").is_file());
    assert_eq!(manifest(dir.path(), "solve")["outputs"]["operator"], "operator.csv");
}

#[test]
fn empty_verify_selection_passes_with_empty_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["verify", "--config", s(&quick()), "--out", s(dir.path())]);
    assert_eq!(code(&out), 0);
    let report: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("verify_report.json")).unwrap()).unwrap();
    assert_eq!(report, Value::Array(vec![]));
    assert_eq!(manifest(dir.path(), "verify")["verdict"], "pass");
}

#[test]
fn verify_selected_experiments() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["verify", "--config", s(&quick()), "--lipschitz", "--experiments", "semiconcave,lp", "--out", s(dir.path())]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let report: Vec<Value> = serde_json::from_str(&fs::read_to_string(dir.path().join("verify_report.json")).unwrap()).unwrap();
    let names: Vec<&str> = report.iter().map(|r| r["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["lipschitz_u", "semiconcavity_u", "semiconcavity_mu", "eps_lp_estimate"]);
    assert!(report.iter().all(|r| r["pass"] == true && r["inputs_hash"].as_str().unwrap().len() == 64));

    let bad = run(&["verify", "--config", s(&quick()), "--experiments", "lipschitz,nonsense", "--out", s(dir.path())]);
    assert_eq!(code(&bad), 2);
}

#[test]
fn failed_check_exits_with_code_4() {
    let dir = tempfile::tempdir().unwrap();
    // declared C_f far below the true Lipschitz constant of f
    let cfg = quick_with(dir.path(), "\n[assumptions]\nc_f = 0.1\n");
    let out = run(&["verify", "--config", s(&cfg), "--lipschitz", "--out", s(dir.path())]);
    assert_eq!(code(&out), 4);
    assert_eq!(manifest(dir.path(), "verify")["verdict"], "fail");
}

#[test]
fn sweep_emits_convergence_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["sweep", "--config", s(&quick()), "--eps", "0.2,0.1,0.05", "--out", s(dir.path())]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("eps,lambda,c_eps,alpha,diff_prev"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|c| if c.is_empty() { f64::NAN } else { c.parse().unwrap() }).collect())
        .collect();
    assert_eq!(rows.len(), 3);
    assert!(rows.windows(2).all(|w| w[1][1] < w[0][1] && w[1][2] < w[0][2]));
    assert!(rows[0][4].is_nan() && rows[2][4] < rows[1][4]);
    // Λ(0.1) = (4√ε)^{1/2} + (0.8 ε^{5/2})^{1/4}
    let e: f64 = 0.1;
    let oracle = (4.0 * e.sqrt()).sqrt() + (0.8 * e.powf(2.5)).powf(0.25);
    assert!((rows[1][1] - oracle).abs() < 1e-4, "{} vs {oracle}", rows[1][1]);
}

#[test]
fn plot_after_solve_writes_three_figures() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&["solve", "--config", s(&quick()), "--out", s(dir.path())])), 0);
    let out = run(&["plot", s(&dir.path().join("solve.manifest.json"))]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for f in ["value_overlay.svg", "eps_convergence.svg", "residual_trace.svg"] {
        let svg = fs::read_to_string(dir.path().join(f)).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains("</svg>"), "{f}");
    }
    let overlay = fs::read_to_string(dir.path().join("value_overlay.svg")).unwrap();
    assert!(overlay.contains("action region"));
}

#[test]
fn plot_without_action_region_has_no_shading() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_with(dir.path(), "\n[costs]\nfixed = 20.0\n");
    assert_eq!(code(&run(&["solve", "--config", s(&cfg), "--out", s(dir.path())])), 0);
    let csv = fs::read_to_string(dir.path().join("value_field.csv")).unwrap();
    assert!(!csv.contains(",A,"));
    assert_eq!(code(&run(&["plot", s(dir.path())])), 0);
    let overlay = fs::read_to_string(dir.path().join("value_overlay.svg")).unwrap();
    assert!(!overlay.contains("action region"));
}

#[test]
fn plot_rejects_missing_or_corrupt_csv() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&["solve", "--config", s(&quick()), "--out", s(dir.path())])), 0);
    let field = dir.path().join("value_field.csv");
    let good = fs::read_to_string(&field).unwrap();

    fs::write(&field, good.replacen(",C,", ",Q,", 1)).unwrap();
    assert_eq!(code(&run(&["plot", s(dir.path())])), 2);
    fs::write(&field, good.replacen("x,u,Mu", "x,v,Mu", 1)).unwrap();
    assert_eq!(code(&run(&["plot", s(dir.path())])), 2);
    let mut lines: Vec<&str> = good.lines().collect();
    lines[5] = "1.0,not-a-number,2.0,C,0.0,0.0";
    fs::write(&field, lines.join("\n")).unwrap();
    assert_eq!(code(&run(&["plot", s(dir.path())])), 2);
    fs::remove_file(&field).unwrap();
    assert_eq!(code(&run(&["plot", s(dir.path())])), 2);
    assert_eq!(code(&run(&["plot", s(&dir.path().join("absent.manifest.json"))])), 2);
}
