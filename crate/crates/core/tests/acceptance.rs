//! Acceptance criteria. Each test writes one `criterion N: PASS|FAIL` line to stdout
//! (bypassing the test harness capture) and asserts unless the criterion is listed in
//! `EXPECTED_FAILURES`.

use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gridfreq::cli::{cmd_verify_many, metrics, simulate_case, Overrides, RunReport};
use gridfreq::controller::{dppd_rhs_pure_opt, Rate};
use gridfreq::diagnostics::{chatter_metric, max_box_violation};
use gridfreq::dynamics::plant_rhs;
use gridfreq::oracle::OracleFixture;
use gridfreq::scenarios::{bundled_case_json, case_from_file, parse_case_file};
use gridfreq::simulate::DampingSide;
use gridfreq::{
    load_case, BusKind, Case, ControlLaw, Mode, SimOptions, Simulation, StepSizes, SystemState,
    BUNDLED_CASES,
};

/// Criteria that cannot hold for this model; see the explanation printed with them.
const EXPECTED_FAILURES: &[u32] = &[9];

const SMALL_CASES: [&str; 4] = [
    "two_bus_analytic",
    "two_bus_l1",
    "triangle",
    "four_bus_line_limited",
];

fn report(n: u32, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let note = if !pass && EXPECTED_FAILURES.contains(&n) {
        " (expected)"
    } else {
        ""
    };
    let mut out = std::io::stdout().lock();
    writeln!(out, "acceptance criterion {n}: {verdict}{note}: {detail}").unwrap();
    out.flush().unwrap();
    assert!(
        pass || EXPECTED_FAILURES.contains(&n),
        "criterion {n}: {detail}"
    );
}

fn note(label: &str, detail: &str) {
    let mut out = std::io::stdout().lock();
    writeln!(out, "acceptance {label}: {detail}").unwrap();
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m: f64, x| m.max(x.abs()))
}

fn inf_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0, |m: f64, (x, y)| m.max((x - y).abs()))
}

fn jobs() -> usize {
    std::thread::available_parallelism().map_or(2, |n| n.get())
}

fn verify_sweep(ov: Overrides) -> Vec<RunReport> {
    let ov = Overrides { jobs: jobs(), ..ov };
    cmd_verify_many(BUNDLED_CASES, &ov)
        .into_iter()
        .map(|r| r.unwrap())
        .collect()
}

/// Default `verify` over every bundled case, shared by criteria 2, 4 and 10.
fn verify_reports() -> &'static [RunReport] {
    static REPORTS: OnceLock<Vec<RunReport>> = OnceLock::new();
    REPORTS.get_or_init(|| verify_sweep(Overrides::default()))
}

fn oracle_fixture(case: &str) -> OracleFixture {
    let path = format!(
        "{}/tests/fixtures/oracle_{case}.json",
        env!("CARGO_MANIFEST_DIR")
    );
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn criterion_01_two_bus_oracle_agreement() {
    let mut lines = Vec::new();
    let mut pass = true;
    for name in ["two_bus_analytic", "two_bus_l1"] {
        let case = load_case(name).unwrap();
        assert_eq!(case.cfg.mode, Mode::ClosedLoop);
        assert_eq!(case.scenario.options.t_end, 60.0);
        let start = Instant::now();
        let traj = simulate_case(&case, ControlLaw::Dppd).unwrap();
        let wall = start.elapsed().as_secs_f64();
        let last = traj.last().unwrap();
        let d_star = oracle_fixture(name).d_star;
        let d_err = inf_dist(&last.ctrl.d, &d_star);
        let w = inf_norm(&last.omega);
        pass &= d_err < 1e-4 && w < 1e-5 && wall < 5.0;
        lines.push(format!(
            "{name} |d-d*| {d_err:.2e} |w| {w:.2e} wall {wall:.2}s"
        ));
    }
    let hand = oracle_fixture("two_bus_analytic").d_star;
    pass &= (hand[0] - 8.0 / 15.0).abs() < 1e-12 && (hand[1] - 4.0 / 15.0).abs() < 1e-12;
    report(1, pass, &lines.join("; "));
}

#[test]
fn criterion_02_kkt_self_consistency() {
    let reports = verify_reports();
    let worst = reports
        .iter()
        .map(|r| (r.case.as_str(), r.metrics.as_ref().unwrap().kkt_total))
        .fold(("", 0.0f64), |a, b| if b.1 > a.1 { b } else { a });
    let pass = reports.len() == BUNDLED_CASES.len()
        && reports.iter().all(|r| {
            r.metrics.as_ref().unwrap().kkt_total < 1e-5 && r.config["mode"] == "pure_opt"
        });
    report(
        2,
        pass,
        &format!(
            "{} cases, worst KKT residual {:.2e} on {}",
            reports.len(),
            worst.1,
            worst.0
        ),
    );
}

/// Random state with `d` inside the boxes and nonnegative line multipliers.
fn random_feasible_state(rng: &mut ChaCha8Rng, sim: &Simulation) -> SystemState {
    let mut s = sim.default_initial_state().unwrap();
    let n = sim.net.n_buses();
    let c = &mut s.ctrl;
    for i in 0..n {
        let (lo, hi) = sim.cost.bounds(i);
        c.d[i] = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        c.eta[i] = rng.gen_range(-1.0..1.0);
        c.theta_hat[i] = rng.gen_range(-0.5..0.5);
        c.mu[i] = rng.gen_range(-1.0..1.0);
    }
    for v in c.nu_minus.iter_mut().chain(c.nu_plus.iter_mut()) {
        *v = rng.gen_range(0.0..0.5);
    }
    for v in c.lambda.iter_mut() {
        *v = rng.gen_range(-0.2..0.2);
    }
    for v in c.line_flow.iter_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    for v in s.plant.omega_gen.iter_mut() {
        *v = rng.gen_range(-0.2..0.2);
    }
    s
}

#[test]
fn criterion_03_box_invariance_from_random_starts() {
    const RUNS: usize = 1000;
    let opts = SimOptions {
        h: 1e-3,
        t_end: 5.0,
        sample_every: 1e-3,
    };
    let worst = std::thread::scope(|scope| {
        let workers = jobs();
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                scope.spawn(move || {
                    let mut worst = 0.0f64;
                    for k in (w..RUNS).step_by(workers) {
                        let mut case = load_case(SMALL_CASES[k % SMALL_CASES.len()]).unwrap();
                        case.cfg.mode = if k % 2 == 0 {
                            Mode::ClosedLoop
                        } else {
                            Mode::PureOpt
                        };
                        let sim = Simulation {
                            net: &case.net,
                            cost: &case.cost,
                            cfg: case.cfg,
                            law: ControlLaw::Dppd,
                            injection: &case.scenario.injection,
                            uncertainty: Default::default(),
                        };
                        let mut rng = ChaCha8Rng::seed_from_u64(k as u64);
                        let init = random_feasible_state(&mut rng, &sim);
                        let traj = sim.run(init, &opts).unwrap();
                        worst = worst.max(max_box_violation(&case.cost, &traj));
                    }
                    worst
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap())
            .fold(0.0f64, f64::max)
    });
    report(
        3,
        worst < 1e-6,
        &format!("{RUNS} random starts on the small cases, worst box distance {worst:.2e}"),
    );
}

#[test]
fn criterion_04_lyapunov_monotonicity() {
    let reports = verify_reports();
    let mut pass = true;
    let mut parts = Vec::new();
    for r in reports {
        let m = r.metrics.as_ref().unwrap();
        let vb = m.vb_max_increase;
        pass &= m.va_max_increase <= 1e-8 && vb.is_some_and(|v| v <= 1e-7);
        parts.push(format!(
            "{} Va {:.1e} Vb {:.1e} (Bregman form {:.1e})",
            r.case,
            m.va_max_increase,
            vb.unwrap_or(f64::NAN),
            m.vb_bregman_max_increase.unwrap_or(f64::NAN)
        ));
    }
    report(4, pass, &parts.join("; "));
}

#[test]
fn criterion_05_rate_bound_with_and_without_limits() {
    let mut pass = true;
    let mut parts = Vec::new();
    for limits in [false, true] {
        let reports = verify_sweep(Overrides {
            t_end: Some(120.0),
            thermal_limits: Some(limits),
            ..Default::default()
        });
        for r in &reports {
            let m = r.metrics.as_ref().unwrap();
            pass &= m.rate_pass;
            if !m.rate_pass {
                parts.push(format!("{} limits={limits} failed", r.case));
            }
        }
        let worst = reports
            .iter()
            .map(|r| {
                let m = r.metrics.as_ref().unwrap();
                m.rate_bound_final / m.rate_bound_t0.max(f64::MIN_POSITIVE)
            })
            .fold(0.0f64, f64::max);
        parts.push(format!(
            "limits={limits}: {} cases, worst final/initial bound ratio {worst:.3}",
            reports.len()
        ));
    }
    report(5, pass, &parts.join("; "));
}

#[test]
fn criterion_06_frequency_restoration_on_39_buses() {
    let mut case = load_case("ieee39_approx").unwrap();
    case.select_scenario("step37_39").unwrap();
    let start = Instant::now();
    let dppd = simulate_case(&case, ControlLaw::Dppd).unwrap();
    let wall = start.elapsed().as_secs_f64();
    let none = simulate_case(&case, ControlLaw::None).unwrap();
    let w_dppd = inf_norm(&dppd.last().unwrap().omega);
    let w_none = inf_norm(&none.last().unwrap().omega);
    report(
        6,
        w_dppd < 1e-3 && w_none > 5.0 * w_dppd && wall < 60.0,
        &format!("final |w| DPPD {w_dppd:.2e}, uncontrolled {w_none:.2e}, DPPD wall {wall:.1}s"),
    );
}

#[test]
fn criterion_07_time_varying_containment() {
    let mut case = load_case("ieee39_approx").unwrap();
    case.select_scenario("sin37_39_imbalanced").unwrap();
    let dppd = simulate_case(&case, ControlLaw::Dppd).unwrap();
    let none = simulate_case(&case, ControlLaw::None).unwrap();
    let first = &dppd.samples[0];
    let (a, b) = (
        dppd.max_frequency_deviation(),
        none.max_frequency_deviation(),
    );
    report(
        7,
        a < b && inf_norm(&first.omega_dot) > 0.0,
        &format!("max |w| DPPD {a:.4e} vs uncontrolled {b:.4e}"),
    );
}

#[test]
fn criterion_08_chatter_at_a_kink() {
    let case = load_case("two_bus_l1").unwrap();
    let fixture = oracle_fixture("two_bus_l1");
    let bus = 0;
    let kink = -case.cost.bus(bus).unwrap().c;
    assert!(
        (fixture.d_star[bus] - kink).abs() < 1e-12,
        "optimum not at the kink"
    );
    let dppd = simulate_case(&case, ControlLaw::Dppd).unwrap();
    let base = simulate_case(&case, ControlLaw::Baseline).unwrap();
    let (cd, cb) = (
        chatter_metric(&dppd, bus).unwrap(),
        chatter_metric(&base, bus).unwrap(),
    );
    report(
        8,
        cb >= 10 * cd.max(1),
        &format!("bus 1 sign changes: baseline {cb}, DPPD {cd}"),
    );
}

/// Triangle network with every bus turned into a generator.
fn generator_only_triangle() -> Case {
    let mut file = parse_case_file(bundled_case_json("triangle").unwrap()).unwrap();
    for b in &mut file.buses {
        b.kind = BusKind::Gen;
        b.m.get_or_insert(2.0);
    }
    case_from_file("triangle_generators", file).unwrap()
}

#[test]
fn criterion_09_pure_opt_reproduces_closed_loop() {
    let case = generator_only_triangle();
    let opts = SimOptions {
        h: 1e-3,
        t_end: 10.0,
        sample_every: 0.01,
    };
    let mut cl_cfg = case.cfg;
    cl_cfg.mode = Mode::ClosedLoop;
    let mut po_cfg = cl_cfg;
    po_cfg.mode = Mode::PureOpt;
    po_cfg.rho = StepSizes {
        line_flow: Rate::Physical,
        lambda: Rate::Physical,
        ..cl_cfg.rho
    };
    let sim = |cfg| Simulation {
        net: &case.net,
        cost: &case.cost,
        cfg,
        law: ControlLaw::Dppd,
        injection: &case.scenario.injection,
        uncertainty: Default::default(),
    };
    let cl_sim = sim(cl_cfg);
    let po_sim = sim(po_cfg);
    let mut cl_init = cl_sim.default_initial_state().unwrap();
    // start away from equilibrium so both systems actually move
    cl_init.plant.omega_gen = vec![0.05, -0.03, 0.02];
    let mut po_init = po_sim.default_initial_state().unwrap();
    po_init.ctrl.eta = cl_init.ctrl.eta.clone();
    po_init.ctrl.d = cl_init.ctrl.d.clone();
    po_init.ctrl.theta_hat = cl_init.ctrl.theta_hat.clone();
    po_init.ctrl.mu = cl_init.ctrl.mu.clone();
    po_init.ctrl.lambda = cl_init.plant.omega_gen.clone();
    po_init.ctrl.line_flow = cl_init.plant.line_flow.clone();

    let cl = cl_sim.run(cl_init.clone(), &opts).unwrap();
    let po = po_sim.run(po_init.clone(), &opts).unwrap();
    let gap = cl
        .samples
        .iter()
        .zip(&po.samples)
        .map(|(a, b)| inf_dist(&a.omega, &b.omega).max(inf_dist(&a.line_flow, &b.line_flow)))
        .fold(0.0f64, f64::max);

    // Matched-state check of the two vector fields: the frequency equations agree
    // exactly, the flow equations differ by B * C^T * u1.
    let p = case.scenario.injection.eval(0.0);
    let plant_dot = plant_rhs(&case.net, &cl_init.plant, &cl_init.ctrl.d, &p).unwrap();
    let po_dot = dppd_rhs_pure_opt(&case.net, &case.cost, &po_sim.cfg, &po_init.ctrl, &p).unwrap();
    let freq_gap = inf_dist(&plant_dot.omega_gen, &po_dot.lambda);
    let flow_gap = inf_dist(&plant_dot.line_flow, &po_dot.line_flow);
    note(
        "criterion 9 vector fields",
        &format!(
            "at a matched state |dw - dlambda| {freq_gap:.1e}, |dP_plant - dP_opt| {flow_gap:.2e}"
        ),
    );
    assert!(freq_gap < 1e-12);

    report(
        9,
        gap < 1e-6,
        &format!(
            "sup |(w,P)_closed - (lambda,P)_opt| over 10 s = {gap:.3e}; the optimization \
             flow update carries an extra B C^T u1 term that vanishes only when dw/dt = 0"
        ),
    );
}

#[test]
fn criterion_10_angle_recovery() {
    let reports = verify_reports();
    let mut pass = true;
    let mut worst = (0.0f64, 0.0f64);
    for r in reports {
        let m = r.metrics.as_ref().unwrap();
        let res = m
            .lemma2_angle_residual
            .unwrap()
            .max(m.lemma2_flow_residual.unwrap());
        let spread = m.lemma2_shift_spread.unwrap();
        pass &= res < 1e-4 && spread < 1e-4;
        worst = (worst.0.max(res), worst.1.max(spread));
    }
    report(
        10,
        pass,
        &format!(
            "worst residual {:.2e}, worst theta - theta_hat spread {:.2e}",
            worst.0, worst.1
        ),
    );
}

#[test]
fn damping_mismatch_on_either_side() {
    let mut parts = Vec::new();
    for side in [DampingSide::Controller, DampingSide::Plant] {
        for k1 in [0.5, 2.0] {
            let mut case = load_case("ieee39_approx").unwrap();
            case.select_scenario("step37_39").unwrap();
            case.scenario.uncertainty.k1 = Some(k1);
            case.scenario.uncertainty.side = side;
            let traj = simulate_case(&case, ControlLaw::Dppd).unwrap();
            let m = metrics(&case, &case.cfg, &traj).unwrap();
            let none = simulate_case(&case, ControlLaw::None).unwrap();
            let offset = inf_norm(&none.last().unwrap().omega);
            assert!(
                m.final_omega_inf < 0.2 * offset,
                "{side:?} k1={k1}: {} vs uncontrolled {offset}",
                m.final_omega_inf
            );
            assert!(m.max_box_violation < 1e-6);
            parts.push(format!(
                "{side:?} k1={k1}: final |w| {:.1e} vs uncontrolled {offset:.1e}",
                m.final_omega_inf
            ));
        }
    }
    note("damping mismatch", &parts.join("; "));
}

#[test]
fn measurement_noise_stays_bounded() {
    let mut case = load_case("ieee39_approx").unwrap();
    case.select_scenario("step37_39").unwrap();
    let clean = simulate_case(&case, ControlLaw::Dppd).unwrap();
    case.scenario.uncertainty.k2 = 0.01;
    let noisy = simulate_case(&case, ControlLaw::Dppd).unwrap();
    let m = metrics(&case, &case.cfg, &noisy).unwrap();
    assert!(m.max_box_violation < 1e-6);
    let (a, b) = (
        clean.max_frequency_deviation(),
        noisy.max_frequency_deviation(),
    );
    assert!(b < 2.0 * a, "{a} vs {b}");
    note(
        "measurement noise",
        &format!("k2=0.01 max |w| {b:.3e} vs {a:.3e} noise-free"),
    );
}
