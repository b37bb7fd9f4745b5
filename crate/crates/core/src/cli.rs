//! Command implementations behind the `gridfreq` binary.
//!
//! Every command returns a [`RunReport`]; the binary only parses flags, prints and maps
//! errors to exit codes (0 ok, 2 validation, 3 numeric blow-up, 4 failed check).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};

use crate::controller::{DppdConfig, Mode, StepSizes};
use crate::diagnostics::{
    chatter_metric, kkt_residual, lemma2_check, lyapunov_va, lyapunov_vb, max_box_violation,
    max_increase, max_relative_increase, rate_report, Equilibrium, KktOptions, KktResidual,
    Lemma2Report, PrimalDualPoint, V1Form, LEMMA2_G_TOLERANCE,
};
use crate::error::{Error, Result};
use crate::injection::InjectionProfile;
use crate::oracle::{grid_search_optimum, two_bus_analytic_optimum, OracleFixture};
use crate::output::{write_csv_file, write_svgs};
use crate::scenarios::{
    case_from_file, ieee39_case_file, load_case, Case, InitialCondition, BUNDLED_CASES,
};
use crate::simulate::{ControlLaw, DampingSide, SimOptions, Simulation, Trajectory};

/// Environment variable that takes precedence over `--out`.
pub const OUT_ENV: &str = "GRIDFREQ_OUT";
pub const DEFAULT_OUT_DIR: &str = "gridfreq_out";

pub const KKT_TOLERANCE: f64 = 1e-5;
pub const VA_SLACK: f64 = 1e-8;
pub const VB_RELATIVE_SLACK: f64 = 1e-7;
pub const BOX_TOLERANCE: f64 = 1e-6;
pub const LEMMA2_TOLERANCE: f64 = 1e-4;
/// `‖ω‖∞` below which a bus is considered back at nominal frequency.
pub const FREQUENCY_BAND: f64 = 1e-3;

/// Horizon used by `verify` when `--T` is not given.
pub const VERIFY_HORIZON: f64 = 480.0;
pub const VERIFY_SAMPLE_EVERY: f64 = 0.05;

/// Command-line overrides applied on top of a case file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub scenario: Option<String>,
    pub h: Option<f64>,
    pub t_end: Option<f64>,
    pub kappa: Option<f64>,
    pub mode: Option<Mode>,
    pub thermal_limits: Option<bool>,
    pub k1: Option<f64>,
    pub k1_side: Option<DampingSide>,
    pub k2: Option<f64>,
    pub seed: Option<u64>,
    pub svg: bool,
    pub out: Option<PathBuf>,
    pub jobs: usize,
    pub controllers: Vec<ControlLaw>,
}

pub fn parse_mode(s: &str) -> std::result::Result<Mode, String> {
    match s {
        "closed_loop" => Ok(Mode::ClosedLoop),
        "pure_opt" => Ok(Mode::PureOpt),
        _ => Err(format!(
            "unknown mode {s:?}, expected closed_loop or pure_opt"
        )),
    }
}

pub fn parse_damping_side(s: &str) -> std::result::Result<DampingSide, String> {
    match s {
        "controller" => Ok(DampingSide::Controller),
        "plant" => Ok(DampingSide::Plant),
        _ => Err(format!(
            "unknown damping side {s:?}, expected controller or plant"
        )),
    }
}

pub fn parse_law(s: &str) -> std::result::Result<ControlLaw, String> {
    match s {
        "dppd" => Ok(ControlLaw::Dppd),
        "baseline" => Ok(ControlLaw::Baseline),
        "none" => Ok(ControlLaw::None),
        _ => Err(format!(
            "unknown controller {s:?}, expected dppd, baseline or none"
        )),
    }
}

fn law_name(l: ControlLaw) -> &'static str {
    match l {
        ControlLaw::Dppd => "dppd",
        ControlLaw::Baseline => "baseline",
        ControlLaw::None => "none",
    }
}

fn mode_name(m: Mode) -> &'static str {
    match m {
        Mode::ClosedLoop => "closed_loop",
        Mode::PureOpt => "pure_opt",
    }
}

/// Loads a case and applies the overrides. `--seed` redraws the randomized 39-bus fixture.
pub fn prepare_case(name: &str, ov: &Overrides) -> Result<Case> {
    let mut case = match (name, ov.seed) {
        ("ieee39_approx", Some(seed)) => case_from_file(name, ieee39_case_file(seed))?,
        _ => load_case(name)?,
    };
    if let Some(s) = &ov.scenario {
        case.select_scenario(s)?;
    }
    let opts = &mut case.scenario.options;
    if let Some(h) = ov.h {
        opts.h = h;
        if opts.sample_every < h {
            opts.sample_every = h;
        }
    }
    if let Some(t) = ov.t_end {
        opts.t_end = t;
    }
    opts.validate()?;
    if let Some(k) = ov.kappa {
        case.cfg.kappa = k;
    }
    if let Some(m) = ov.mode {
        case.cfg.mode = m;
    }
    if let Some(b) = ov.thermal_limits {
        case.cfg.thermal_limits = b;
    }
    if let Some(k1) = ov.k1 {
        if !(k1 > 0.0 && k1.is_finite()) {
            return Err(Error::NonpositiveParameter {
                what: "k1".into(),
                value: k1,
            });
        }
        case.scenario.uncertainty.k1 = Some(k1);
    }
    if let Some(side) = ov.k1_side {
        case.scenario.uncertainty.side = side;
    }
    if let Some(k2) = ov.k2 {
        if !(k2 >= 0.0 && k2.is_finite()) {
            return Err(Error::Validation("k2 must be non-negative".into()));
        }
        case.scenario.uncertainty.k2 = k2;
    }
    case.cfg.validate()?;
    Ok(case)
}

/// Diagnostics attached to every report. Absent quantities serialize as `null`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub kkt_total: f64,
    pub kkt_breakdown: KktResidual,
    pub va_max_increase: f64,
    pub vb_max_increase: Option<f64>,
    /// Same as `vb_max_increase` measured as a Bregman divergence; informational only.
    pub vb_bregman_max_increase: Option<f64>,
    pub rate_bound_t0: f64,
    pub rate_bound_final: f64,
    pub rate_pass: bool,
    pub lemma2_angle_residual: Option<f64>,
    pub lemma2_flow_residual: Option<f64>,
    pub lemma2_shift_spread: Option<f64>,
    pub chatter: BTreeMap<String, usize>,
    pub max_box_violation: f64,
    pub final_omega_inf: f64,
    pub max_omega_inf: f64,
    pub final_cost: f64,
    pub active_lines: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub case: String,
    pub command: String,
    pub config: Value,
    pub wall_time_s: f64,
    pub trajectory: Option<String>,
    pub metrics: Option<Metrics>,
    pub checks: BTreeMap<String, bool>,
    /// Command-specific payload (per-controller rows for `compare`).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub extra: Option<Value>,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.checks.values().all(|&b| b)
    }

    /// Fixed-width check table for terminals.
    pub fn table(&self) -> String {
        let mut s = format!("{} {}\n", self.command, self.case);
        for (k, v) in &self.checks {
            s += &format!("  {:<22} {}\n", k, if *v { "pass" } else { "FAIL" });
        }
        s
    }
}

fn config_echo(case: &Case, law: ControlLaw, ov: &Overrides) -> Value {
    let o = &case.scenario.options;
    let u = &case.scenario.uncertainty;
    json!({
        "case": case.name,
        "scenario": case.scenario.name,
        "h": o.h,
        "T": o.t_end,
        "sample_every": o.sample_every,
        "kappa": case.cfg.kappa,
        "cost_scale": case.cost.k(),
        "mode": mode_name(case.cfg.mode),
        "thermal_limits": case.cfg.thermal_limits,
        "k1": u.k1,
        "k1_side": u.side,
        "k2": u.k2,
        "seed": ov.seed,
        "controller": law_name(law),
    })
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m: f64, x| m.max(x.abs()))
}

/// Lines whose virtual-angle flow sits on a limit at the end of the run.
fn active_lines(case: &Case, traj: &Trajectory) -> Result<Vec<String>> {
    if !traj.thermal_limits {
        return Ok(Vec::new());
    }
    let last = traj.last()?;
    let flows = case.net.line_flows_from_angles(&last.ctrl.theta_hat)?;
    Ok(case
        .net
        .lines()
        .iter()
        .zip(flows)
        .filter(|(l, f)| (f - l.p_min).abs() < 1e-4 || (l.p_max - f).abs() < 1e-4)
        .map(|(l, _)| l.label())
        .collect())
}

/// Equilibrium for `V_b`: the final point of a pure-optimization run, if it passes KKT.
fn final_equilibrium(case: &Case, traj: &Trajectory) -> Option<Equilibrium> {
    let last = traj.last().ok()?;
    Equilibrium::new(
        &case.net,
        &case.cost,
        last.p_in.clone(),
        PrimalDualPoint::from_sample(last),
        traj.thermal_limits,
    )
    .ok()
}

fn vb_series(
    case: &Case,
    cfg: &DppdConfig,
    traj: &Trajectory,
    eq: &Equilibrium,
    form: V1Form,
) -> Result<Vec<f64>> {
    traj.samples
        .iter()
        .map(|s| {
            lyapunov_vb(
                &case.net,
                &case.cost,
                cfg,
                &PrimalDualPoint::from_sample(s),
                eq,
                form,
            )
        })
        .collect()
}

fn lemma2_of(case: &Case, traj: &Trajectory) -> Option<Lemma2Report> {
    if traj.mode != Mode::ClosedLoop {
        return None;
    }
    let last = traj.last().ok()?;
    lemma2_check(
        &case.net,
        &last.theta,
        &last.ctrl.theta_hat,
        &last.line_flow,
        &last.omega,
        last.g,
        LEMMA2_G_TOLERANCE,
    )
    .ok()
}

/// Computes the standard metrics of one trajectory.
pub fn metrics(case: &Case, cfg: &DppdConfig, traj: &Trajectory) -> Result<Metrics> {
    let last = traj.last()?;
    let kkt = kkt_residual(
        &case.net,
        &case.cost,
        &last.p_in,
        &PrimalDualPoint::from_sample(last),
        &KktOptions {
            thermal_limits: traj.thermal_limits,
            ..KktOptions::default()
        },
    )?;
    let va: Vec<f64> = traj
        .samples
        .iter()
        .map(|s| lyapunov_va(&case.cost, &s.ctrl.d))
        .collect();
    let eq = match traj.mode {
        Mode::PureOpt => final_equilibrium(case, traj),
        Mode::ClosedLoop => None,
    };
    let vb = |form| -> Result<Option<f64>> {
        eq.as_ref()
            .map(|eq| {
                Ok(max_relative_increase(&vb_series(
                    case, cfg, traj, eq, form,
                )?))
            })
            .transpose()
    };
    let vb_max_increase = vb(V1Form::Printed)?;
    let vb_bregman_max_increase = vb(V1Form::Bregman)?;
    let rate = rate_report(traj)?;
    let lemma2 = lemma2_of(case, traj);
    let mut chatter = BTreeMap::new();
    for b in case.cost.controllable_buses() {
        chatter.insert((b + 1).to_string(), chatter_metric(traj, b)?);
    }
    Ok(Metrics {
        kkt_total: kkt.total,
        kkt_breakdown: kkt,
        va_max_increase: max_increase(&va),
        vb_max_increase,
        vb_bregman_max_increase,
        rate_bound_t0: rate.bound_t0,
        rate_bound_final: rate.bound_final,
        rate_pass: rate.pass,
        lemma2_angle_residual: lemma2.map(|r| r.angle_residual),
        lemma2_flow_residual: lemma2.map(|r| r.flow_residual),
        lemma2_shift_spread: lemma2.map(|r| r.shift_spread),
        chatter,
        max_box_violation: max_box_violation(&case.cost, traj),
        final_omega_inf: inf_norm(&last.omega),
        max_omega_inf: traj.max_frequency_deviation(),
        final_cost: case.cost.eval_total_cost(&last.ctrl.d)?,
        active_lines: active_lines(case, traj)?,
    })
}

/// Integrates `case` under its scenario with the given law.
pub fn simulate_case(case: &Case, law: ControlLaw) -> Result<Trajectory> {
    let sim = Simulation {
        net: &case.net,
        cost: &case.cost,
        cfg: case.cfg,
        law,
        injection: &case.scenario.injection,
        uncertainty: case.scenario.uncertainty,
    };
    let init = sim.initial_state(case.scenario.initial)?;
    sim.run(init, &case.scenario.options)
}

/// Output directory: `GRIDFREQ_OUT`, then `--out`, then a default.
pub fn output_dir(ov: &Overrides) -> PathBuf {
    std::env::var_os(OUT_ENV)
        .map(PathBuf::from)
        .or_else(|| ov.out.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

fn file_stem(case: &Case) -> String {
    format!("{}_{}", case.name, case.scenario.name)
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    let s = serde_json::to_string_pretty(v).map_err(|e| Error::Io(e.to_string()))?;
    std::fs::write(path, s + "\n")?;
    Ok(())
}

/// `run`: one simulation, CSV, metrics JSON and optional plots.
pub fn cmd_run(case_name: &str, ov: &Overrides) -> Result<RunReport> {
    let start = Instant::now();
    let case = prepare_case(case_name, ov)?;
    let law = ov.controllers.first().copied().unwrap_or(ControlLaw::Dppd);
    let traj = simulate_case(&case, law)?;
    let m = metrics(&case, &case.cfg, &traj)?;

    let dir = output_dir(ov);
    std::fs::create_dir_all(&dir)?;
    let stem = file_stem(&case);
    let csv_path = dir.join(format!("{stem}.csv"));
    write_csv_file(&csv_path, &case.net, &traj)?;
    write_json(&dir.join(format!("{stem}_metrics.json")), &m)?;
    if ov.svg {
        write_svgs(&dir, &stem, &case.net, &case.base, &traj)?;
    }

    let mut checks = BTreeMap::new();
    checks.insert("box_invariance".into(), m.max_box_violation < BOX_TOLERANCE);
    checks.insert("frequency_band".into(), m.final_omega_inf < FREQUENCY_BAND);
    Ok(RunReport {
        case: case.name.clone(),
        command: "run".into(),
        config: config_echo(&case, law, ov),
        wall_time_s: start.elapsed().as_secs_f64(),
        trajectory: Some(csv_path.display().to_string()),
        metrics: Some(m),
        checks,
        extra: None,
    })
}

/// Configuration used by `verify`: pure optimization, unit analysis step sizes.
pub fn verify_config(case: &Case, ov: &Overrides) -> DppdConfig {
    DppdConfig {
        kappa: ov.kappa.unwrap_or(0.5),
        rho: StepSizes::analysis(),
        mode: Mode::PureOpt,
        thermal_limits: ov.thermal_limits.unwrap_or(case.cfg.thermal_limits),
    }
}

fn verify_options(case: &Case, ov: &Overrides) -> SimOptions {
    let h = ov.h.unwrap_or(case.scenario.options.h);
    SimOptions {
        h,
        t_end: ov.t_end.unwrap_or(VERIFY_HORIZON),
        sample_every: VERIFY_SAMPLE_EVERY.max(h),
    }
}

/// `verify`: pure-optimization run on the base injection, then every optimality and
/// stability diagnostic. A closed-loop run on the same injection supplies the angle check.
pub fn cmd_verify(case_name: &str, ov: &Overrides) -> Result<RunReport> {
    let start = Instant::now();
    let loaded = prepare_case(case_name, ov)?;
    let opts = verify_options(&loaded, ov);
    opts.validate()?;
    let constant = InjectionProfile::constant(loaded.scenario.injection.base().to_vec());

    let mut opt_case = loaded.clone();
    opt_case.cfg = verify_config(&loaded, ov);
    opt_case.cfg.validate()?;
    opt_case.scenario.injection = constant.clone();
    opt_case.scenario.options = opts;
    opt_case.scenario.uncertainty = Default::default();
    opt_case.scenario.initial = InitialCondition::Steady;
    let traj = simulate_case(&opt_case, ControlLaw::Dppd)?;
    let mut m = metrics(&opt_case, &opt_case.cfg, &traj)?;

    let mut cl_case = loaded.clone();
    cl_case.cfg.mode = Mode::ClosedLoop;
    cl_case.cfg.thermal_limits = opt_case.cfg.thermal_limits;
    cl_case.scenario.injection = constant;
    cl_case.scenario.options = opts;
    cl_case.scenario.uncertainty = Default::default();
    cl_case.scenario.initial = InitialCondition::Steady;
    let cl = simulate_case(&cl_case, ControlLaw::Dppd)?;
    let lemma2 = lemma2_of(&cl_case, &cl);
    m.lemma2_angle_residual = lemma2.map(|r| r.angle_residual);
    m.lemma2_flow_residual = lemma2.map(|r| r.flow_residual);
    m.lemma2_shift_spread = lemma2.map(|r| r.shift_spread);

    let mut checks = BTreeMap::new();
    checks.insert("kkt_residual".into(), m.kkt_total < KKT_TOLERANCE);
    checks.insert("va_monotone".into(), m.va_max_increase <= VA_SLACK);
    checks.insert(
        "vb_monotone".into(),
        m.vb_max_increase.is_some_and(|v| v <= VB_RELATIVE_SLACK),
    );
    checks.insert("rate_bound".into(), m.rate_pass);
    checks.insert("box_invariance".into(), m.max_box_violation < BOX_TOLERANCE);
    checks.insert(
        "lemma2".into(),
        lemma2.is_some_and(|r| {
            r.angle_residual < LEMMA2_TOLERANCE
                && r.flow_residual < LEMMA2_TOLERANCE
                && r.shift_spread < LEMMA2_TOLERANCE
        }),
    );
    if loaded.slater.is_some() {
        checks.insert("slater_point".into(), loaded.verify_slater().is_ok());
    }

    Ok(RunReport {
        case: loaded.name.clone(),
        command: "verify".into(),
        config: config_echo(&opt_case, ControlLaw::Dppd, ov),
        wall_time_s: start.elapsed().as_secs_f64(),
        trajectory: None,
        metrics: Some(m),
        checks,
        extra: None,
    })
}

/// `verify all` over the bundled cases, `jobs` at a time. Reports keep the bundled order.
pub fn cmd_verify_many(names: &[&str], ov: &Overrides) -> Vec<Result<RunReport>> {
    let jobs = ov.jobs.max(1).min(names.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<RunReport>>>> =
        Mutex::new((0..names.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= names.len() {
                    break;
                }
                let r = cmd_verify(names[i], ov);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}

pub fn all_case_names() -> &'static [&'static str] {
    BUNDLED_CASES
}

/// First sample time after which `‖ω‖∞` stays inside the band, if any.
pub fn time_to_band(traj: &Trajectory, band: f64) -> Option<f64> {
    let mut t = None;
    for s in &traj.samples {
        if inf_norm(&s.omega) < band {
            t.get_or_insert(s.t);
        } else {
            t = None;
        }
    }
    t
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControllerRow {
    pub controller: String,
    pub final_cost: f64,
    pub cost_gap: f64,
    pub chatter: BTreeMap<String, usize>,
    pub time_to_band: Option<f64>,
    pub final_omega_inf: f64,
    pub max_omega_inf: f64,
}

/// `compare`: identical scenario under each listed controller, closed loop.
pub fn cmd_compare(case_name: &str, ov: &Overrides) -> Result<RunReport> {
    let start = Instant::now();
    let mut case = prepare_case(case_name, ov)?;
    case.cfg.mode = Mode::ClosedLoop;
    let laws = if ov.controllers.is_empty() {
        vec![ControlLaw::Dppd, ControlLaw::Baseline]
    } else {
        ov.controllers.clone()
    };
    if laws.contains(&ControlLaw::Baseline) && !case.baseline {
        return Err(Error::Validation(format!(
            "case {} does not enable the baseline controller",
            case.name
        )));
    }
    let mut rows: Vec<ControllerRow> = Vec::new();
    for &law in &laws {
        let traj = simulate_case(&case, law)?;
        let last = traj.last()?;
        let mut chatter = BTreeMap::new();
        for b in case.cost.controllable_buses() {
            chatter.insert((b + 1).to_string(), chatter_metric(&traj, b)?);
        }
        let final_cost = case.cost.eval_total_cost(&last.ctrl.d)?;
        rows.push(ControllerRow {
            controller: law_name(law).into(),
            final_cost,
            cost_gap: rows.first().map_or(0.0, |r| final_cost - r.final_cost),
            chatter,
            time_to_band: time_to_band(&traj, FREQUENCY_BAND),
            final_omega_inf: inf_norm(&last.omega),
            max_omega_inf: traj.max_frequency_deviation(),
        });
    }
    let dir = output_dir(ov);
    std::fs::create_dir_all(&dir)?;
    let path = dir.join(format!("{}_compare.json", file_stem(&case)));
    write_json(&path, &rows)?;
    Ok(RunReport {
        case: case.name.clone(),
        command: "compare".into(),
        config: config_echo(&case, laws[0], ov),
        wall_time_s: start.elapsed().as_secs_f64(),
        trajectory: Some(path.display().to_string()),
        metrics: None,
        checks: BTreeMap::new(),
        extra: Some(serde_json::to_value(&rows).map_err(|e| Error::Io(e.to_string()))?),
    })
}

/// `oracle`: reference optimum of a small case as fixture JSON.
pub fn cmd_oracle(case_name: &str, resolution: f64, ov: &Overrides) -> Result<OracleFixture> {
    let case = prepare_case(case_name, ov)?;
    let p_in = case.scenario.injection.base();
    let opt = match two_bus_analytic_optimum(&case.net, &case.cost, p_in) {
        Ok(o) => o,
        Err(Error::NotTwoBus | Error::BindingLimit) => grid_search_optimum(
            &case.net,
            &case.cost,
            p_in,
            resolution,
            case.cfg.thermal_limits,
        )?,
        Err(e) => return Err(e),
    };
    Ok(opt.to_fixture(&case.name))
}
