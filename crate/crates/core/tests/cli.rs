//! End-to-end runs of the `gridfreq` binary.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn gridfreq(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridfreq"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("GRIDFREQ_OUT")
        .output()
        .unwrap()
}

/// The JSON report that follows the check table on stdout.
fn report(o: &Output) -> Value {
    let s = String::from_utf8_lossy(&o.stdout);
    let start = s.find('{').expect("no JSON on stdout");
    serde_json::from_str(&s[start..]).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_writes_csv_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let o = gridfreq(&["run", "two_bus_analytic"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("two_bus_analytic_default.csv")).unwrap();
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    assert!(header.contains(&"P_1_2"));
    // t, 2 x (omega, d, theta, mu), one flow, g
    assert_eq!(header.len(), 1 + 4 * 2 + 1 + 1);
    for line in csv.lines().skip(1) {
        assert_eq!(line.split(',').count(), header.len());
    }
    let m: Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("two_bus_analytic_default_metrics.json")).unwrap(),
    )
    .unwrap();
    assert!(m["final_omega_inf"].as_f64().unwrap() < 1e-5);
    assert_eq!(report(&o)["checks"]["box_invariance"], true);
}

#[test]
fn line_limited_csv_has_multiplier_columns() {
    let dir = tempfile::tempdir().unwrap();
    let o = gridfreq(&["run", "four_bus_line_limited", "--T", "1"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv =
        std::fs::read_to_string(dir.path().join("four_bus_line_limited_default.csv")).unwrap();
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    assert_eq!(header.len(), 1 + 4 * 4 + 3 * 3 + 1);
    assert!(header.contains(&"nu_plus_3_4"));
}

#[test]
fn negative_step_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = gridfreq(&["run", "two_bus_analytic", "--h", "-0.1"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("h must be positive"), "{}", stderr(&o));
}

#[test]
fn zero_damping_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let json = gridfreq::scenarios::bundled_case_json("two_bus_analytic").unwrap();
    let mut v: Value = serde_json::from_str(json).unwrap();
    v["buses"][1]["D"] = 0.0.into();
    let path = dir.path().join("broken.json");
    std::fs::write(&path, v.to_string()).unwrap();
    let o = gridfreq(&["run", path.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).starts_with("error:"));
}

#[test]
fn unknown_case_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = gridfreq(&["run", "no_such_case"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn verify_reports_the_binding_line() {
    let dir = tempfile::tempdir().unwrap();
    let o = gridfreq(&["verify", "four_bus_line_limited"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = report(&o);
    let active = r["metrics"]["active_lines"].as_array().unwrap();
    assert_eq!(active, &[Value::from("3_4")]);
    assert!(r["checks"].as_object().unwrap().values().all(|v| v == true));
}

#[test]
fn failed_check_exits_with_four() {
    let dir = tempfile::tempdir().unwrap();
    let o = gridfreq(&["verify", "triangle", "--T", "1"], dir.path());
    assert_eq!(o.status.code(), Some(4));
    assert_eq!(report(&o)["checks"]["kkt_residual"], false);
}

#[test]
fn runs_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let o = gridfreq(&["run", "triangle", "--T", "5"], d.path());
        assert_eq!(o.status.code(), Some(0));
    }
    for f in ["triangle_default.csv", "triangle_default_metrics.json"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{f} differs");
    }
}

#[test]
fn environment_overrides_out_flag() {
    let (env_dir, flag_dir) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let o = Command::new(env!("CARGO_BIN_EXE_gridfreq"))
        .args(["run", "two_bus_l1", "--T", "1", "--out"])
        .arg(flag_dir.path())
        .env("GRIDFREQ_OUT", env_dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(env_dir.path().join("two_bus_l1_default.csv").exists());
    assert!(!flag_dir.path().join("two_bus_l1_default.csv").exists());
}

#[test]
fn compare_with_a_repeated_controller_gives_identical_rows() {
    let dir = tempfile::tempdir().unwrap();
    let o = gridfreq(
        &[
            "compare",
            "two_bus_l1",
            "--controllers",
            "dppd,dppd,baseline",
            "--T",
            "10",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = report(&o)["extra"].as_array().unwrap().clone();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0], rows[1]);
    assert_ne!(rows[0], rows[2]);
}

#[test]
fn step_scenario_restores_frequency() {
    let dir = tempfile::tempdir().unwrap();
    let o = gridfreq(
        &["run", "ieee39_approx", "--scenario", "step37_39"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let w = report(&o)["metrics"]["final_omega_inf"].as_f64().unwrap();
    assert!(w < 1e-3, "{w}");
}

#[test]
fn damping_side_flag_is_echoed() {
    let dir = tempfile::tempdir().unwrap();
    let o = gridfreq(
        &[
            "run",
            "two_bus_analytic",
            "--T",
            "1",
            "--k1",
            "0.5",
            "--k1-side",
            "plant",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let cfg = &report(&o)["config"];
    assert_eq!(cfg["k1"], 0.5);
    assert_eq!(cfg["k1_side"], "plant");
}

#[test]
fn svg_plots_are_written_on_request() {
    let dir = tempfile::tempdir().unwrap();
    let o = gridfreq(
        &["run", "two_bus_analytic", "--T", "2", "--svg"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    let svgs = std::fs::read_dir(dir.path())
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .path()
                .extension()
                .is_some_and(|x| x == "svg")
        })
        .count();
    assert_eq!(svgs, 3);
}

#[test]
fn oracle_prints_fixture_json() {
    let o = Command::new(env!("CARGO_BIN_EXE_gridfreq"))
        .args(["oracle", "two_bus_analytic"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["method"], "analytic");
    assert!((v["d_star"][0].as_f64().unwrap() - 8.0 / 15.0).abs() < 1e-12);
}
