//! End-to-end tests of the `hdes` binary: exit codes, output formats and
//! round trips between the subcommands.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hdes::cli::MultiStartReport;
use hdes::solver::SolveResult;

fn hdes(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hdes"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn problems_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../problems")
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

#[test]
fn solve_writes_a_result_and_echoes_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let problem = problems_dir().join("coupled_linear.hde");
    let output = hdes(&[
        "solve",
        problem.to_str().unwrap(),
        "--qubits",
        "4",
        "--depth",
        "3",
        "--samples",
        "20",
        "--max-iter",
        "60",
        "--seed",
        "7",
        "--strategy",
        "floating",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let result: SolveResult =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert!(result.final_loss.is_finite());
    assert_eq!(result.seed, 7);
    assert_eq!(result.config_echo.n_samples, 20);
    assert_eq!(result.config_echo.variables[0].name, "x");
    assert!(result.config_echo.problem_path.is_some());
    assert_eq!(result.functions.len(), 2);
}

#[test]
fn missing_problem_file_exits_2_and_names_the_path() {
    let output = hdes(&["solve", "/definitely/not/here.hde"]);
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("/definitely/not/here.hde"), "{stderr}");
}

#[test]
fn malformed_problem_exits_2_with_position() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.hde");
    write(&bad, "var x in [0, 1];\neq: D(f, x) = 0;\n");
    let output = hdes(&["solve", bad.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("2:"), "{stderr}");
    assert!(stderr.contains("unknown function"), "{stderr}");
}

#[test]
fn shot_mode_is_reproducible_across_invocations() {
    let dir = tempfile::tempdir().unwrap();
    let problem = dir.path().join("p.hde");
    write(&problem, "var x in [-1, 1]; fun f(x); eq: f - 1 = 0;");
    let run = |out: &Path| {
        let output = hdes(&[
            "solve",
            problem.to_str().unwrap(),
            "--qubits",
            "3",
            "--depth",
            "2",
            "--samples",
            "5",
            "--max-iter",
            "8",
            "--shots",
            "4096",
            "--seed",
            "3",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
        std::fs::read_to_string(out).unwrap()
    };
    let a = run(&dir.path().join("a.json"));
    let b = run(&dir.path().join("b.json"));
    assert_eq!(a, b);
}

#[test]
fn validate_round_trips_through_rk4_and_tables() {
    let dir = tempfile::tempdir().unwrap();
    let result_path = dir.path().join("r.json");
    let problem = problems_dir().join("coupled_linear.hde");
    let output = hdes(&[
        "solve",
        problem.to_str().unwrap(),
        "--max-iter",
        "150",
        "--seed",
        "5",
        "--strategy",
        "floating",
        "--out",
        result_path.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));

    // RK4 reference path.
    let output = hdes(&["validate", result_path.to_str().unwrap(), "--rk4"]);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let report: serde_json::Value =
        serde_json::from_slice(&output.stdout).expect("stdout is the scores JSON");
    assert!(report["V"][0].as_f64().unwrap() >= 0.0);
    assert!(report["per_function"]["f"]["orders"].get("0").is_some());
    // g appears only through its derivative in the equations.
    assert!(report["per_function"]["g"]["orders"].get("0").is_none());
    assert!(report["per_function"]["g"]["orders"].get("1").is_some());

    // A result validated against its own tabulated values scores (0, 0).
    let result: SolveResult =
        serde_json::from_str(&std::fs::read_to_string(&result_path).unwrap()).unwrap();
    let mut table = String::from("x,f,f:1,g:1\n");
    let f = result.function("f").unwrap().expansion();
    let g = result.function("g").unwrap().expansion();
    let mi = |q: u32| hdes::cheb::MultiIndex::new(vec![q]);
    // Same grid the validator uses, so node lookups are exact.
    let grid = hdes::loss::generate_samples(
        100,
        &[hdes::problem::Domain { lo: 0.0, hi: 0.95 }],
    )
    .unwrap();
    for point in &grid {
        let x = point[0];
        table.push_str(&format!(
            "{x},{},{},{}\n",
            f.eval(&[x], &mi(0)).unwrap(),
            f.eval(&[x], &mi(1)).unwrap(),
            g.eval(&[x], &mi(1)).unwrap()
        ));
    }
    let table_path = dir.path().join("self.csv");
    write(&table_path, &table);
    let output = hdes(&[
        "validate",
        result_path.to_str().unwrap(),
        "--reference",
        table_path.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let report: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    assert_eq!(report["V"][0].as_f64().unwrap(), 0.0);
    assert_eq!(report["V"][1].as_f64().unwrap(), 0.0);

    // A table without the needed derivative columns is a runtime error.
    let thin_path = dir.path().join("thin.csv");
    write(&thin_path, "x,f\n0,0\n0.5,2.375\n0.95,4.75\n");
    let output = hdes(&[
        "validate",
        result_path.to_str().unwrap(),
        "--reference",
        thin_path.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(3));
}

#[test]
fn curve_exports_the_stated_linear_example() {
    // Hand-built result: f(x) = -3·T0 + 2·T1 = 2x - 3 on [0, 1].
    let dir = tempfile::tempdir().unwrap();
    let result_path = dir.path().join("r.json");
    let result = serde_json::json!({
        "functions": [{
            "name": "f",
            "orders": [[0], [1]],
            "coefficients": [-3.0, 2.0],
            "lambda": 5.0,
            "angles": [0.0, 0.0]
        }],
        "final_loss": 0.0,
        "iterations": 0,
        "termination": "target_loss",
        "loss_trace": [0.0],
        "seed": 0,
        "config_echo": {
            "qubits": {"default": 2},
            "depth": {"default": 1},
            "n_samples": 3,
            "max_iterations": 1,
            "epsilon": 1e-6,
            "eta": 10.0,
            "strategy": "penalty",
            "seed": 0,
            "shots": 0,
            "restarts": 1,
            "variables": [{"name": "x", "lo": 0.0, "hi": 1.0}],
            "function_vars": {"f": ["x"]}
        }
    });
    write(&result_path, &result.to_string());
    let output = hdes(&["curve", result_path.to_str().unwrap(), "--points", "3"]);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let csv = String::from_utf8(output.stdout).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "x,f");
    let row = |line: &str| -> Vec<f64> {
        line.split(',').map(|c| c.parse().unwrap()).collect()
    };
    assert_eq!(row(lines[1]), vec![0.0, -3.0]);
    assert_eq!(row(lines[2]), vec![0.5, -2.0]);
    assert_eq!(row(lines[3]), vec![1.0, -1.0]);

    // An empty expansion exports a zero column.
    let mut empty = result.clone();
    empty["functions"][0]["orders"] = serde_json::json!([]);
    empty["functions"][0]["coefficients"] = serde_json::json!([]);
    write(&result_path, &empty.to_string());
    let output = hdes(&["curve", result_path.to_str().unwrap(), "--points", "3"]);
    assert!(output.status.success());
    let csv = String::from_utf8(output.stdout).unwrap();
    for line in csv.lines().skip(1) {
        assert_eq!(row(line)[1], 0.0);
    }
}

#[test]
fn restarts_write_a_best_run_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let problem = dir.path().join("p.hde");
    write(&problem, "var x in [-1, 1]; fun f(x); eq: f - 1 = 0;");
    let out = dir.path().join("multi.json");
    let output = hdes(&[
        "solve",
        problem.to_str().unwrap(),
        "--qubits",
        "3",
        "--depth",
        "2",
        "--max-iter",
        "60",
        "--restarts",
        "4",
        "--seed",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let report: MultiStartReport =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report.summary.restarts, 4);
    assert_eq!(report.summary.seeds, vec![2, 3, 4, 5]);
    assert_eq!(report.best.final_loss, report.summary.best_final_loss);

    // The curve command accepts the multi-start report as well.
    let output = hdes(&["curve", out.to_str().unwrap(), "--points", "4"]);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
}

#[test]
fn profile_builds_curves_and_rejects_empty_directories() {
    let dir = tempfile::tempdir().unwrap();
    let scores = |v: f64| {
        serde_json::json!({
            "per_function": {"f": {"orders": {"0": [v, v * v]}, "V_f": [v, v * v]}},
            "V": [v, v * v]
        })
        .to_string()
    };
    write(&dir.path().join("a__p1.json"), &scores(1e-3));
    write(&dir.path().join("a__p2.json"), &scores(2e-3));
    write(&dir.path().join("b__p1.json"), &scores(2e-3));
    write(&dir.path().join("b__p2.json"), &scores(0.9));
    let output = hdes(&["profile", dir.path().to_str().unwrap()]);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let csv = String::from_utf8(output.stdout).unwrap();
    assert!(csv.starts_with("tau,solver,rho\n"));
    // Solver a wins everywhere: ρ(1) = 1. Solver b fails p2 (0.9 is above
    // the default threshold), so its curve reaches 1 only at r_max.
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    let rho_at = |solver: &str, tau_prefix: &str| -> f64 {
        rows.iter()
            .find(|r| r[1] == solver && r[0].starts_with(tau_prefix))
            .map(|r| r[2].parse().unwrap())
            .unwrap()
    };
    assert_eq!(rho_at("a", "1.0000000000000000e0"), 1.0);
    assert_eq!(rho_at("b", "1.0000000000000000e6"), 1.0);

    let empty = tempfile::tempdir().unwrap();
    let output = hdes(&["profile", empty.path().to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(2));
}
