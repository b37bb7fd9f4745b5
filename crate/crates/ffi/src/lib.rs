//! C ABI over the `gridfreq` simulator.
//!
//! Cases and trajectories are opaque handles created by `gf_*_load` / `gf_simulate` and
//! released with the matching `*_free`. Every fallible call returns a [`GfStatus`]; on
//! failure the message is available from [`gf_last_error`] on the same thread until the
//! next failing call. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use gridfreq::cli::{cmd_verify, metrics, simulate_case, Overrides};
use gridfreq::scenarios::{case_from_file, parse_case_file};
use gridfreq::{load_case, Case, ControlLaw, Error, Mode, Trajectory};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GfStatus {
    Ok = 0,
    NullPointer = 1,
    /// Bad case data, unknown name, bad option or out-of-range index.
    InvalidArgument = 2,
    /// The integration produced a non-finite state.
    NumericFailure = 3,
    /// A verification or equilibrium check did not pass.
    CheckFailed = 4,
    Io = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GfControlLaw {
    Dppd = 0,
    /// Projected subgradient dynamics without the proximal step.
    Baseline = 1,
    None = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GfMode {
    ClosedLoop = 0,
    PureOpt = 1,
}

/// Summary diagnostics of one trajectory.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GfMetrics {
    pub kkt_total: f64,
    pub max_box_violation: f64,
    pub final_omega_inf: f64,
    pub max_omega_inf: f64,
    pub final_cost: f64,
    pub rate_pass: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GfVerifyResult {
    pub passed: bool,
    pub kkt_total: f64,
    pub wall_time_s: f64,
}

/// Loaded case with its selected scenario.
pub struct GfCase {
    case: Case,
}

/// Sampled result of [`gf_simulate`].
pub struct GfTrajectory {
    traj: Trajectory,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

enum Fail {
    Null(&'static str),
    Arg(String),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> GfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GfStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("{what} is null"));
            GfStatus::NullPointer
        }
        Ok(Err(Fail::Arg(msg))) => {
            set_error(msg);
            GfStatus::InvalidArgument
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            match e {
                Error::Io(_) => GfStatus::Io,
                _ => match e.exit_code() {
                    3 => GfStatus::NumericFailure,
                    4 => GfStatus::CheckFailed,
                    _ => GfStatus::InvalidArgument,
                },
            }
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            GfStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::Arg(format!("{what} is not valid UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn handle_mut<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(what))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    handle_mut(p, what)
}

fn law(l: GfControlLaw) -> ControlLaw {
    match l {
        GfControlLaw::Dppd => ControlLaw::Dppd,
        GfControlLaw::Baseline => ControlLaw::Baseline,
        GfControlLaw::None => ControlLaw::None,
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. The pointer stays valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn gf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a bundled case by name, or a case JSON file by path.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gf_case_load(name: *const c_char, out: *mut *mut GfCase) -> GfStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let case = load_case(str_arg(name, "name")?)?;
        *out = Box::into_raw(Box::new(GfCase { case }));
        Ok(())
    })
}

/// Parses a case from JSON text.
///
/// # Safety
/// `name` and `json` must be NUL-terminated strings and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gf_case_from_json(
    name: *const c_char,
    json: *const c_char,
    out: *mut *mut GfCase,
) -> GfStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let file = parse_case_file(str_arg(json, "json")?)?;
        let case = case_from_file(str_arg(name, "name")?, file)?;
        *out = Box::into_raw(Box::new(GfCase { case }));
        Ok(())
    })
}

/// Releases a case. NULL is ignored.
///
/// # Safety
/// `case` must come from a `gf_case_*` constructor and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gf_case_free(case: *mut GfCase) {
    if !case.is_null() {
        drop(Box::from_raw(case));
    }
}

/// Number of buses, or 0 for NULL.
///
/// # Safety
/// `case` must be NULL or a live case handle.
#[no_mangle]
pub unsafe extern "C" fn gf_case_n_buses(case: *const GfCase) -> usize {
    case.as_ref().map_or(0, |c| c.case.net.n_buses())
}

/// Number of lines, or 0 for NULL.
///
/// # Safety
/// `case` must be NULL or a live case handle.
#[no_mangle]
pub unsafe extern "C" fn gf_case_n_lines(case: *const GfCase) -> usize {
    case.as_ref().map_or(0, |c| c.case.net.n_lines())
}

/// Switches to a named scenario of the case file.
///
/// # Safety
/// `case` must be a live case handle and `scenario` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn gf_case_select_scenario(
    case: *mut GfCase,
    scenario: *const c_char,
) -> GfStatus {
    guard(|| {
        let c = handle_mut(case, "case")?;
        c.case.select_scenario(str_arg(scenario, "scenario")?)?;
        Ok(())
    })
}

/// Overrides the horizon and step. Samples are never finer than the step.
///
/// # Safety
/// `case` must be a live case handle.
#[no_mangle]
pub unsafe extern "C" fn gf_case_set_horizon(case: *mut GfCase, t_end: f64, h: f64) -> GfStatus {
    guard(|| {
        let c = handle_mut(case, "case")?;
        let mut opts = c.case.scenario.options;
        opts.t_end = t_end;
        opts.h = h;
        opts.sample_every = opts.sample_every.max(h);
        opts.validate()?;
        c.case.scenario.options = opts;
        Ok(())
    })
}

/// Sets the controller mode and whether line limits are enforced.
///
/// # Safety
/// `case` must be a live case handle.
#[no_mangle]
pub unsafe extern "C" fn gf_case_set_mode(
    case: *mut GfCase,
    mode: GfMode,
    thermal_limits: bool,
) -> GfStatus {
    guard(|| {
        let c = handle_mut(case, "case")?;
        c.case.cfg.mode = match mode {
            GfMode::ClosedLoop => Mode::ClosedLoop,
            GfMode::PureOpt => Mode::PureOpt,
        };
        c.case.cfg.thermal_limits = thermal_limits;
        Ok(())
    })
}

/// Box projection of `y` for bus `bus` (0-based).
///
/// # Safety
/// `case` must be a live case handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gf_prox_box(
    case: *const GfCase,
    bus: usize,
    y: f64,
    out: *mut f64,
) -> GfStatus {
    guard(|| {
        let c = handle(case, "case")?;
        let out = out_ptr(out, "out")?;
        check_bus(c, bus)?;
        *out = c.case.cost.prox_box(bus, y);
        Ok(())
    })
}

/// Shifted soft threshold of `y` for bus `bus` (0-based), using the scaled cost.
///
/// # Safety
/// `case` must be a live case handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gf_prox_l1(
    case: *const GfCase,
    bus: usize,
    y: f64,
    out: *mut f64,
) -> GfStatus {
    guard(|| {
        let c = handle(case, "case")?;
        let out = out_ptr(out, "out")?;
        check_bus(c, bus)?;
        *out = c.case.cost.prox_l1_shifted(bus, y);
        Ok(())
    })
}

fn check_bus(c: &GfCase, bus: usize) -> Result<(), Fail> {
    let n = c.case.net.n_buses();
    if bus < n {
        Ok(())
    } else {
        Err(Fail::Arg(format!("bus index {bus} out of range 0..{n}")))
    }
}

/// Integrates the case under its current scenario.
///
/// # Safety
/// `case` must be a live case handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gf_simulate(
    case: *const GfCase,
    law_kind: GfControlLaw,
    out: *mut *mut GfTrajectory,
) -> GfStatus {
    guard(|| {
        let c = handle(case, "case")?;
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let traj = simulate_case(&c.case, law(law_kind))?;
        *out = Box::into_raw(Box::new(GfTrajectory { traj }));
        Ok(())
    })
}

/// Releases a trajectory. NULL is ignored.
///
/// # Safety
/// `traj` must come from [`gf_simulate`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gf_trajectory_free(traj: *mut GfTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}

/// Number of stored samples, or 0 for NULL.
///
/// # Safety
/// `traj` must be NULL or a live trajectory handle.
#[no_mangle]
pub unsafe extern "C" fn gf_trajectory_len(traj: *const GfTrajectory) -> usize {
    traj.as_ref().map_or(0, |t| t.traj.samples.len())
}

#[derive(Clone, Copy)]
#[repr(C)]
pub enum GfSeries {
    /// Frequency deviation per bus.
    Omega = 0,
    /// Controllable load per bus.
    Load = 1,
    /// Line flow per line.
    Flow = 2,
    /// Virtual angle per bus.
    VirtualAngle = 3,
}

/// Copies sample `k` into `time` and one per-bus or per-line series into `buf`.
/// `len` must equal the series width ([`gf_case_n_buses`] or [`gf_case_n_lines`]).
///
/// # Safety
/// `traj` must be a live trajectory handle, `time` a valid pointer and `buf` valid for
/// `len` writes.
#[no_mangle]
pub unsafe extern "C" fn gf_trajectory_sample(
    traj: *const GfTrajectory,
    k: usize,
    series: GfSeries,
    time: *mut f64,
    buf: *mut f64,
    len: usize,
) -> GfStatus {
    guard(|| {
        let t = handle(traj, "trajectory")?;
        let time = out_ptr(time, "time")?;
        if buf.is_null() {
            return Err(Fail::Null("buf"));
        }
        let s = t.traj.samples.get(k).ok_or_else(|| {
            Fail::Arg(format!(
                "sample {k} out of range 0..{}",
                t.traj.samples.len()
            ))
        })?;
        let src: &[f64] = match series {
            GfSeries::Omega => &s.omega,
            GfSeries::Load => &s.ctrl.d,
            GfSeries::Flow => &s.line_flow,
            GfSeries::VirtualAngle => &s.ctrl.theta_hat,
        };
        if src.len() != len {
            return Err(Fail::Arg(format!(
                "buffer holds {len} values, series has {}",
                src.len()
            )));
        }
        *time = s.t;
        std::slice::from_raw_parts_mut(buf, len).copy_from_slice(src);
        Ok(())
    })
}

/// Diagnostics of a trajectory produced from `case`.
///
/// # Safety
/// `case` and `traj` must be live handles and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gf_trajectory_metrics(
    case: *const GfCase,
    traj: *const GfTrajectory,
    out: *mut GfMetrics,
) -> GfStatus {
    guard(|| {
        let c = handle(case, "case")?;
        let t = handle(traj, "trajectory")?;
        let out = out_ptr(out, "out")?;
        let n = c.case.net.n_buses();
        if t.traj.samples.first().map(|s| s.omega.len()) != Some(n) {
            return Err(Fail::Arg("trajectory does not belong to this case".into()));
        }
        let m = metrics(&c.case, &c.case.cfg, &t.traj)?;
        *out = GfMetrics {
            kkt_total: m.kkt_total,
            max_box_violation: m.max_box_violation,
            final_omega_inf: m.final_omega_inf,
            max_omega_inf: m.max_omega_inf,
            final_cost: m.final_cost,
            rate_pass: m.rate_pass,
        };
        Ok(())
    })
}

/// Runs the full verification of a bundled case or case file. A failed check is
/// reported through `out->passed`, not the status.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gf_verify(name: *const c_char, out: *mut GfVerifyResult) -> GfStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let r = cmd_verify(str_arg(name, "name")?, &Overrides::default())?;
        *out = GfVerifyResult {
            passed: r.passed(),
            kkt_total: r.metrics.as_ref().map_or(f64::NAN, |m| m.kkt_total),
            wall_time_s: r.wall_time_s,
        };
        Ok(())
    })
}
