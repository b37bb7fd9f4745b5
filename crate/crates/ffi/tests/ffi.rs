//! The C ABI exercised from Rust, plus a C program built against the generated header.

use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use gridfreq_ffi::*;

fn last_error() -> String {
    let p = gf_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn load(name: &str) -> *mut GfCase {
    let name = CString::new(name).unwrap();
    let mut case = ptr::null_mut();
    assert_eq!(
        unsafe { gf_case_load(name.as_ptr(), &mut case) },
        GfStatus::Ok
    );
    assert!(!case.is_null());
    case
}

#[test]
fn simulate_and_read_back() {
    let case = load("two_bus_analytic");
    unsafe {
        assert_eq!(gf_case_n_buses(case), 2);
        assert_eq!(gf_case_n_lines(case), 1);
        let mut traj = ptr::null_mut();
        assert_eq!(
            gf_simulate(case, GfControlLaw::Dppd, &mut traj),
            GfStatus::Ok
        );
        let len = gf_trajectory_len(traj);
        assert!(len > 1000);
        let (mut t, mut d) = (0.0, [0.0; 2]);
        let s = gf_trajectory_sample(traj, len - 1, GfSeries::Load, &mut t, d.as_mut_ptr(), 2);
        assert_eq!(s, GfStatus::Ok);
        assert!((t - 60.0).abs() < 1e-9);
        assert!((d[0] - 8.0 / 15.0).abs() < 1e-4 && (d[1] - 4.0 / 15.0).abs() < 1e-4);

        let mut m = GfMetrics::default();
        assert_eq!(gf_trajectory_metrics(case, traj, &mut m), GfStatus::Ok);
        assert!(m.final_omega_inf < 1e-5 && m.max_box_violation < 1e-6);

        let mut flow = [0.0; 1];
        let s = gf_trajectory_sample(traj, 0, GfSeries::Flow, &mut t, flow.as_mut_ptr(), 1);
        assert_eq!(s, GfStatus::Ok);
        gf_trajectory_free(traj);
        gf_case_free(case);
    }
}

#[test]
fn prox_helpers_match_the_library() {
    let case = load("two_bus_l1");
    let lib = gridfreq::load_case("two_bus_l1").unwrap();
    for y in [-3.0, -0.4, 0.0, 0.2, 2.5] {
        let (mut a, mut b) = (0.0, 0.0);
        unsafe {
            assert_eq!(gf_prox_box(case, 0, y, &mut a), GfStatus::Ok);
            assert_eq!(gf_prox_l1(case, 0, y, &mut b), GfStatus::Ok);
        }
        assert_eq!(a, lib.cost.prox_box(0, y));
        assert_eq!(b, lib.cost.prox_l1_shifted(0, y));
    }
    unsafe { gf_case_free(case) };
}

#[test]
fn errors_map_to_status_codes() {
    unsafe {
        let mut case = ptr::null_mut();
        let bad = CString::new("no_such_case").unwrap();
        assert_eq!(
            gf_case_load(bad.as_ptr(), &mut case),
            GfStatus::InvalidArgument
        );
        assert!(case.is_null());
        assert!(last_error().contains("no_such_case"));

        assert_eq!(gf_case_load(ptr::null(), &mut case), GfStatus::NullPointer);
        assert_eq!(last_error(), "name is null");

        let case = load("triangle");
        assert_eq!(
            gf_case_set_horizon(case, 10.0, -0.1),
            GfStatus::InvalidArgument
        );
        assert!(last_error().contains("h must be positive"));
        let scen = CString::new("missing").unwrap();
        assert_eq!(
            gf_case_select_scenario(case, scen.as_ptr()),
            GfStatus::InvalidArgument
        );

        let mut traj = ptr::null_mut();
        assert_eq!(gf_case_set_horizon(case, 1.0, 1e-3), GfStatus::Ok);
        assert_eq!(
            gf_simulate(case, GfControlLaw::None, &mut traj),
            GfStatus::Ok
        );
        let (mut t, mut buf) = (0.0, [0.0; 2]);
        let s = gf_trajectory_sample(traj, 0, GfSeries::Omega, &mut t, buf.as_mut_ptr(), 2);
        assert_eq!(s, GfStatus::InvalidArgument);
        assert!(last_error().contains("buffer holds 2"));
        let s = gf_trajectory_sample(
            traj,
            usize::MAX,
            GfSeries::Omega,
            &mut t,
            buf.as_mut_ptr(),
            3,
        );
        assert_eq!(s, GfStatus::InvalidArgument);

        // a step far outside the stable region blows up
        assert_eq!(gf_case_set_horizon(case, 200.0, 0.5), GfStatus::Ok);
        let mut blown = ptr::null_mut();
        assert_eq!(
            gf_simulate(case, GfControlLaw::Dppd, &mut blown),
            GfStatus::NumericFailure
        );
        assert!(blown.is_null());

        gf_trajectory_free(traj);
        gf_case_free(case);
        gf_case_free(ptr::null_mut());
        assert_eq!(gf_case_n_buses(ptr::null()), 0);
    }
}

#[test]
fn case_from_json_and_mode_switch() {
    let json =
        CString::new(gridfreq::scenarios::bundled_case_json("four_bus_line_limited").unwrap())
            .unwrap();
    let name = CString::new("copy").unwrap();
    let mut case = ptr::null_mut();
    unsafe {
        assert_eq!(
            gf_case_from_json(name.as_ptr(), json.as_ptr(), &mut case),
            GfStatus::Ok
        );
        assert_eq!(gf_case_set_mode(case, GfMode::PureOpt, true), GfStatus::Ok);
        assert_eq!(gf_case_set_horizon(case, 5.0, 1e-3), GfStatus::Ok);
        let mut traj = ptr::null_mut();
        assert_eq!(
            gf_simulate(case, GfControlLaw::Dppd, &mut traj),
            GfStatus::Ok
        );
        let mut m = GfMetrics::default();
        assert_eq!(gf_trajectory_metrics(case, traj, &mut m), GfStatus::Ok);
        assert!(m.max_box_violation < 1e-6);
        gf_trajectory_free(traj);
        gf_case_free(case);

        let broken = CString::new("{\"buses\": []}").unwrap();
        let mut none = ptr::null_mut();
        assert_eq!(
            gf_case_from_json(name.as_ptr(), broken.as_ptr(), &mut none),
            GfStatus::InvalidArgument
        );
    }
}

#[test]
fn verify_through_the_abi() {
    let name = CString::new("two_bus_analytic").unwrap();
    let mut r = GfVerifyResult::default();
    assert_eq!(unsafe { gf_verify(name.as_ptr(), &mut r) }, GfStatus::Ok);
    assert!(r.passed, "{r:?}");
    assert!(r.kkt_total < 1e-5);
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(gf_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_export() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(dir.join("include/gridfreq.h")).unwrap();
    let src = std::fs::read_to_string(dir.join("src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 15);
    for f in exports {
        assert!(header.contains(&format!("{f}(")), "{f} missing from header");
    }
}

/// Compiles `tests/c/smoke.c` against the header and the shared library and runs it.
#[test]
fn c_program_links_and_runs() {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("no C compiler, skipping");
        return;
    }
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    // target/<profile>/deps/ffi-<hash> -> target/<profile>
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().unwrap().parent().unwrap();
    let lib = ["libgridfreq_ffi.so", "libgridfreq_ffi.dylib"]
        .iter()
        .map(|f| profile_dir.join(f))
        .find(|p| p.exists());
    let Some(lib) = lib else {
        eprintln!(
            "shared library not found next to {}, skipping",
            exe.display()
        );
        return;
    };
    let tmp = tempfile::tempdir().unwrap();
    let bin = tmp.path().join("smoke");
    let status = Command::new(&cc)
        .arg(dir.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(dir.join("include"))
        .arg("-Wall")
        .arg("-Werror")
        .arg("-o")
        .arg(&bin)
        .arg(&lib)
        .arg(format!("-Wl,-rpath,{}", profile_dir.display()))
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    let line = String::from_utf8(out.stdout).unwrap();
    let v: Vec<f64> = line
        .split_whitespace()
        .map(|x| x.parse().unwrap())
        .collect();
    assert!((v[0] - 60.0).abs() < 1e-9);
    assert!((v[1] - 8.0 / 15.0).abs() < 1e-4);
}
