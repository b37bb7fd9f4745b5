//! Bundled case files: schema round-trip, reproducible 39-bus draw, stored feasible points.

use std::path::PathBuf;

use gridfreq::scenarios::{
    base_flow_slater_point, bundled_case_json, ieee39_case_file, parse_case_file, IEEE39_SEED,
};
use gridfreq::{load_case, BusKind, BUNDLED_CASES};

fn cases_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("cases")
}

/// Rewrites `ieee39_approx.json` from its seed and fills in missing feasible points.
#[test]
#[ignore]
fn regenerate_bundled_fixtures() {
    let ieee = ieee39_case_file(IEEE39_SEED);
    let json = serde_json::to_string_pretty(&ieee).unwrap();
    std::fs::write(cases_dir().join("ieee39_approx.json"), json + "\n").unwrap();
    for name in BUNDLED_CASES {
        let path = cases_dir().join(format!("{name}.json"));
        let text = std::fs::read_to_string(&path).unwrap();
        let mut file = parse_case_file(&text).unwrap();
        if file.slater.is_none() {
            file.slater = base_flow_slater_point(&file);
            assert!(
                file.slater.is_some(),
                "{name}: base flow is not strictly feasible"
            );
            let json = serde_json::to_string_pretty(&file).unwrap();
            std::fs::write(&path, json + "\n").unwrap();
        }
    }
}

#[test]
fn ieee39_fixture_reproduces_from_seed() {
    let shipped = parse_case_file(bundled_case_json("ieee39_approx").unwrap()).unwrap();
    assert_eq!(shipped, ieee39_case_file(IEEE39_SEED));
}

#[test]
fn every_bundled_case_loads_with_a_feasible_point() {
    for name in BUNDLED_CASES {
        let case = load_case(name).unwrap();
        case.verify_slater()
            .unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn ieee39_shape() {
    let case = load_case("ieee39_approx").unwrap();
    assert_eq!(case.net.n_buses(), 39);
    assert_eq!(case.net.n_lines(), 46);
    for i in 0..39 {
        assert_eq!(case.net.damping()[i], 1.0);
        if i >= 29 {
            assert_eq!(case.net.kind(i), BusKind::Gen);
            assert_eq!(case.net.inertia()[i], 8.0);
        } else {
            assert_eq!(case.net.kind(i), BusKind::Load);
        }
    }
    let ctrl: Vec<usize> = case.cost.controllable_buses();
    assert_eq!(ctrl, (11..20).collect::<Vec<_>>());
    for &i in &ctrl {
        let (lo, hi) = case.cost.bounds(i);
        assert_eq!((lo, hi), (-1.5, 1.5));
    }
}

#[test]
fn two_bus_shape() {
    let case = load_case("two_bus_analytic").unwrap();
    assert_eq!(case.net.n_buses(), 2);
    assert_eq!(case.net.n_lines(), 1);
    assert_eq!(case.cost.controllable_buses(), vec![0, 1]);
}

#[test]
fn four_bus_limits_active_by_construction() {
    let case = load_case("four_bus_line_limited").unwrap();
    assert!(case.cfg.thermal_limits);
    assert!(!case.cost.is_controllable(1));
}

// The virtual-angle update contains -rho * L^2 and, with limits active, -rho * B * L.
// RK4 is stable on the negative real axis up to 2.785 / h.
#[test]
fn bundled_step_sizes_stay_inside_rk4_stability() {
    for name in BUNDLED_CASES {
        let case = load_case(name).unwrap();
        let lmax = case
            .net
            .weighted_laplacian()
            .clone()
            .symmetric_eigenvalues()
            .max();
        let bmax = case.net.susceptances().iter().cloned().fold(0.0, f64::max);
        let stiff = case.cfg.rho.theta_hat * (lmax * lmax + bmax * lmax);
        let limit = 2.785 / case.scenario.options.h;
        assert!(stiff < 0.8 * limit, "{name}: {stiff} vs {limit}");
    }
}
