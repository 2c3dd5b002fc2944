//! End-to-end tests of the `opd` binary: exit codes, artifact layout,
//! rerun determinism, and the documented numerical outcomes of the
//! canonical runs.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn opd(out_dir: &Path, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_opd"));
    // Isolate from any ambient configuration of the host shell.
    cmd.env_remove("OPD_OUT_DIR");
    cmd.arg("--out-dir").arg(out_dir);
    cmd.args(args);
    cmd.output().expect("spawning the opd binary")
}

fn read_json(path: &Path) -> Value {
    let text = fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("reading {}: {e}", path.display()));
    serde_json::from_str(&text).unwrap_or_else(|e| panic!("parsing {}: {e}", path.display()))
}

/// Split a CSV file into (header, rows).
fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("reading {}: {e}", path.display()));
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .expect("csv header")
        .split(',')
        .map(str::to_string)
        .collect();
    let rows = lines
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    (header, rows)
}

fn column(header: &[String], name: &str) -> usize {
    header
        .iter()
        .position(|h| h == name)
        .unwrap_or_else(|| panic!("column {name} not in {header:?}"))
}

#[test]
fn toy_opd_converges_and_reruns_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a");
    let second = dir.path().join("b");
    let out = opd(&first, &["toy", "--method", "opd", "--iters", "300"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let summary = read_json(&first.join("toy-opd/summary.json"));
    let final_distance = summary["final_distance"].as_f64().unwrap();
    assert!(
        final_distance <= 1e-8,
        "final distance {final_distance} should be at most 1e-8"
    );
    assert_eq!(summary["converged"], Value::Bool(true));
    // The summary must point at a trace file that exists.
    let trace = first.join("toy-opd").join(summary["trace_path"].as_str().unwrap());
    assert!(trace.is_file(), "{} missing", trace.display());

    let rerun = opd(&second, &["toy", "--method", "opd", "--iters", "300"]);
    assert_eq!(rerun.status.code(), Some(0));
    for file in ["metrics.csv", "convergence.svg", "trace.jsonl"] {
        let a = fs::read(first.join("toy-opd").join(file)).unwrap();
        let b = fs::read(second.join("toy-opd").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identical reruns");
    }
}

#[test]
fn toy_pd_flags_nonconvergence() {
    let dir = tempfile::tempdir().unwrap();
    let out = opd(dir.path(), &["toy", "--method", "pd", "--iters", "1000"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = read_json(&dir.path().join("toy-pd/summary.json"));
    assert_eq!(summary["converged"], Value::Bool(false));
    let min_distance = summary["min_distance"].as_f64().unwrap();
    assert!(
        min_distance > 1e-3,
        "plain alternation should stay off the saddle (min distance {min_distance})"
    );
}

#[test]
fn toy_npg_matches_the_distributional_run() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        opd(dir.path(), &["toy", "--method", "opd", "--iters", "300"]).status.code(),
        Some(0)
    );
    assert_eq!(
        opd(dir.path(), &["toy", "--method", "npg", "--iters", "300"]).status.code(),
        Some(0)
    );
    let opd_final = read_json(&dir.path().join("toy-opd/summary.json"))["final_distance"]
        .as_f64()
        .unwrap();
    let npg_final = read_json(&dir.path().join("toy-npg/summary.json"))["final_distance"]
        .as_f64()
        .unwrap();
    assert!(
        (opd_final - npg_final).abs() <= 1e-8,
        "npg final {npg_final} vs distributional final {opd_final}"
    );
}

#[test]
fn bilinear_growth_matches_the_closed_form_rate() {
    let dir = tempfile::tempdir().unwrap();
    let out = opd(
        dir.path(),
        &["bilinear", "--method", "pd", "--alpha", "0.5", "--sigma", "1.0", "--t", "20"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = read_csv(&dir.path().join("bilinear-pd/metrics.csv"));
    let t_col = column(&header, "t");
    let norm_col = column(&header, "norm_1");
    assert_eq!(rows.len(), 21, "norms at t = 0..=20");
    for row in &rows {
        let t: i32 = row[t_col].parse().unwrap();
        let norm: f64 = row[norm_col].parse().unwrap();
        // One alternating step multiplies the squared norm by
        // 1 + alpha^2 sigma^2 = 1.25 exactly.
        let expected = 1.25_f64.powf(t as f64 / 2.0);
        assert!(
            (norm - expected).abs() <= 1e-9,
            "t = {t}: norm {norm} vs closed form {expected}"
        );
    }
}

#[test]
fn bilinear_optimistic_variant_contracts() {
    let dir = tempfile::tempdir().unwrap();
    let out = opd(
        dir.path(),
        &["bilinear", "--method", "optimistic", "--alpha", "0.3", "--sigma", "1.0", "--t", "500"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = read_json(&dir.path().join("bilinear-optimistic/summary.json"));
    let final_norm = summary[0]["final_distance"].as_f64().unwrap();
    assert!(
        final_norm <= 1e-6,
        "optimistic iterates should contract to the saddle (final norm {final_norm})"
    );
}

#[test]
fn bilinear_rejects_a_zero_step_budget() {
    let dir = tempfile::tempdir().unwrap();
    let out = opd(dir.path(), &["bilinear", "--t", "0"]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("T must be >= 1"),
        "stderr should explain the step budget: {stderr}"
    );
}

#[test]
fn certify_single_inactive_seed_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = opd(dir.path(), &["certify", "--seeds", "1"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&dir.path().join("certify/report.json"));
    assert_eq!(report["num_violations"], Value::from(0));
    assert_eq!(report["num_errors"], Value::from(0));
    let rows = report["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0]["seed"], Value::from(0));
    assert_eq!(rows[0]["passes"], Value::Bool(true));
    // Seed-scoped artifacts exist and the summary references its trace.
    let summary = read_json(&dir.path().join("certify/seed-0000/summary.json"));
    let trace = dir
        .path()
        .join("certify/seed-0000")
        .join(summary["trace_path"].as_str().unwrap());
    assert!(trace.is_file());
}

#[test]
fn certify_batch_with_active_seed_reports_the_violation() {
    let dir = tempfile::tempdir().unwrap();
    let out = opd(dir.path(), &["certify", "--seeds", "2"]);
    assert_eq!(
        out.status.code(),
        Some(2),
        "violations must exit 2: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report = read_json(&dir.path().join("certify/report.json"));
    assert_eq!(report["num_violations"], Value::from(1));
    let rows = report["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1]["seed"], Value::from(1));
    assert_eq!(rows[1]["passes"], Value::Bool(false));
    let violation = rows[1]["max_violation"].as_f64().unwrap();
    assert!(
        violation > 1e-3,
        "seed 1 carries a macroscopic per-step violation (got {violation})"
    );
    // The CSV mirror carries one line per seed plus the header.
    let (_, csv_rows) = read_csv(&dir.path().join("certify/report.csv"));
    assert_eq!(csv_rows.len(), 2);
}

#[test]
fn certify_empty_batch_writes_an_empty_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = opd(dir.path(), &["certify", "--seeds", "0"]);
    assert_eq!(out.status.code(), Some(0));
    let report = read_json(&dir.path().join("certify/report.json"));
    assert!(report["rows"].as_array().unwrap().is_empty());
    assert_eq!(report["num_violations"], Value::from(0));
}

#[test]
fn compare_unknown_method_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = opd(dir.path(), &["compare", "--methods", "opd,gradient_descent"]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("unknown method 'gradient_descent'"),
        "stderr: {stderr}"
    );
    for name in ["opd", "npg", "pd", "one_shot", "multi_shot"] {
        assert!(
            stderr.contains(name),
            "usage error should list valid method {name}: {stderr}"
        );
    }
}

#[test]
fn compare_toy_reproduces_the_constraint_gap() {
    let dir = tempfile::tempdir().unwrap();
    let out = opd(dir.path(), &["compare", "--methods", "opd,pd", "--iters", "300"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = read_csv(&dir.path().join("compare/metrics.csv"));
    let method_col = column(&header, "method");
    let constraint_col = column(&header, "final_constraint_0");
    let constraint = |name: &str| -> f64 {
        rows.iter()
            .find(|r| r[method_col] == name)
            .unwrap_or_else(|| panic!("no {name} row"))[constraint_col]
            .parse()
            .unwrap()
    };
    let opd_gap = constraint("opd").abs();
    let pd_gap = constraint("pd").abs();
    assert!(
        opd_gap <= 1e-6,
        "optimistic run should satisfy the constraint (|g| = {opd_gap})"
    );
    assert!(
        pd_gap > 1e-2,
        "plain alternation should still be circling (|g| = {pd_gap})"
    );
}

#[test]
fn compare_single_method_plots_one_series_per_metric() {
    let dir = tempfile::tempdir().unwrap();
    let out = opd(dir.path(), &["compare", "--methods", "opd", "--iters", "100"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let svg = fs::read_to_string(dir.path().join("compare/convergence.svg")).unwrap();
    // Three panels (distance, Lagrangian, constraints), one method, one
    // constraint on the canonical instance: exactly one polyline each.
    assert_eq!(
        svg.matches("<polyline").count(),
        3,
        "single-method compare should draw one series per metric panel"
    );
    assert!(
        !svg.to_lowercase().contains("timestamp"),
        "plots must not embed timestamps"
    );
}

#[test]
fn compare_duplicate_methods_produce_identical_series() {
    let dir = tempfile::tempdir().unwrap();
    let out = opd(dir.path(), &["compare", "--methods", "opd,opd", "--iters", "100"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let (_, rows) = read_csv(&dir.path().join("compare/metrics.csv"));
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0], rows[1], "identical requests must yield identical series");
    assert!(dir.path().join("compare/trace-opd.jsonl").is_file());
}

#[test]
fn out_dir_environment_variable_is_honored() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_opd"))
        .env("OPD_OUT_DIR", dir.path())
        .args(["toy", "--method", "opd", "--iters", "50"])
        .output()
        .expect("spawning the opd binary");
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("toy-opd/summary.json").is_file());
}
