//! Distributed proximal primal-dual (DPPD) controller and a projected-subgradient baseline.
//!
//! Closed-loop mode reads frequency and line flows from the plant. Pure-optimization mode
//! integrates the multiplier `λ` and flows `P` itself, with `ω ≡ λ`.

use serde::{Deserialize, Serialize};

use crate::costs::CostModel;
use crate::dynamics::{net_injection, ode_state_fields};
use crate::error::{Error, Result};
use crate::network::PowerNetwork;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    ClosedLoop,
    PureOpt,
}

/// Stepsize for the flow and `λ` families, which may follow the network physics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rate {
    Fixed(f64),
    /// `ρ_P = B_ij` per line, `ρ_λ = 1/M_i` per generator. Load-bus `λ` becomes algebraic.
    Physical,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSizes {
    pub eta: f64,
    pub d: f64,
    pub theta_hat: f64,
    pub line_flow: Rate,
    pub lambda: Rate,
    pub mu: f64,
    pub nu_minus: f64,
    pub nu_plus: f64,
}

impl StepSizes {
    /// 1 for `η, d, θ̂, P` and 1/2 for `λ, μ, ν`.
    pub fn analysis() -> Self {
        StepSizes {
            eta: 1.0,
            d: 1.0,
            theta_hat: 1.0,
            line_flow: Rate::Fixed(1.0),
            lambda: Rate::Fixed(0.5),
            mu: 0.5,
            nu_minus: 0.5,
            nu_plus: 0.5,
        }
    }

    /// Analysis values with the flow and `λ` rates tied to `B` and `1/M`.
    pub fn physical() -> Self {
        StepSizes {
            line_flow: Rate::Physical,
            lambda: Rate::Physical,
            ..Self::analysis()
        }
    }
}

impl Default for StepSizes {
    fn default() -> Self {
        Self::analysis()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DppdConfig {
    pub kappa: f64,
    pub rho: StepSizes,
    pub mode: Mode,
    pub thermal_limits: bool,
}

impl Default for DppdConfig {
    fn default() -> Self {
        DppdConfig {
            kappa: 0.5,
            rho: StepSizes::analysis(),
            mode: Mode::ClosedLoop,
            thermal_limits: false,
        }
    }
}

impl DppdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return Err(Error::Validation(format!(
                "kappa must lie in (0, 1), got {}",
                self.kappa
            )));
        }
        let r = &self.rho;
        let mut rates = vec![r.eta, r.d, r.theta_hat, r.mu, r.nu_minus, r.nu_plus];
        for rate in [r.line_flow, r.lambda] {
            if let Rate::Fixed(v) = rate {
                rates.push(v);
            }
        }
        if rates.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Validation("all stepsizes must be positive".into()));
        }
        Ok(())
    }
}

/// Controller state. `lambda` and `line_flow` are empty in closed-loop mode.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ControllerState {
    pub eta: Vec<f64>,
    pub d: Vec<f64>,
    pub theta_hat: Vec<f64>,
    pub mu: Vec<f64>,
    pub nu_minus: Vec<f64>,
    pub nu_plus: Vec<f64>,
    pub lambda: Vec<f64>,
    pub line_flow: Vec<f64>,
}

ode_state_fields!(ControllerState {
    eta,
    d,
    theta_hat,
    mu,
    nu_minus,
    nu_plus,
    lambda,
    line_flow
});

impl ControllerState {
    /// All-zero state shaped for `mode`.
    pub fn zeros(net: &PowerNetwork, mode: Mode) -> Self {
        let n = net.n_buses();
        let l = net.n_lines();
        let (lambda, line_flow) = match mode {
            Mode::ClosedLoop => (Vec::new(), Vec::new()),
            Mode::PureOpt => (vec![0.0; n], vec![0.0; l]),
        };
        ControllerState {
            eta: vec![0.0; n],
            d: vec![0.0; n],
            theta_hat: vec![0.0; n],
            mu: vec![0.0; n],
            nu_minus: vec![0.0; l],
            nu_plus: vec![0.0; l],
            lambda,
            line_flow,
        }
    }

    /// Projects `d` into the boxes, pins uncontrollable buses and clips `ν` at zero.
    pub fn make_feasible(&mut self, cost: &CostModel) {
        for (i, d) in self.d.iter_mut().enumerate() {
            *d = cost.prox_box(i, *d);
        }
        for i in 0..self.eta.len() {
            if !cost.is_controllable(i) {
                self.eta[i] = 0.0;
            }
        }
        for v in self.nu_minus.iter_mut().chain(self.nu_plus.iter_mut()) {
            *v = v.max(0.0);
        }
    }

    fn check(&self, net: &PowerNetwork, mode: Mode) -> Result<()> {
        for (what, len) in [
            ("eta", self.eta.len()),
            ("d", self.d.len()),
            ("theta_hat", self.theta_hat.len()),
            ("mu", self.mu.len()),
        ] {
            net.check_bus_len(what, len)?;
        }
        net.check_line_len("nu_minus", self.nu_minus.len())?;
        net.check_line_len("nu_plus", self.nu_plus.len())?;
        if mode == Mode::PureOpt {
            net.check_bus_len("lambda", self.lambda.len())?;
            net.check_line_len("line flow", self.line_flow.len())?;
        }
        Ok(())
    }
}

/// Local imbalances `(u1, u2)`: physical imbalance after damping, and the virtual-angle imbalance.
pub fn local_imbalances(
    net: &PowerNetwork,
    state: &ControllerState,
    omega: &[f64],
    line_flow: &[f64],
    p_in: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    net.check_bus_len("d", state.d.len())?;
    net.check_bus_len("theta_hat", state.theta_hat.len())?;
    net.check_bus_len("omega", omega.len())?;
    net.check_bus_len("injection", p_in.len())?;
    net.check_line_len("line flow", line_flow.len())?;
    Ok(imbalances(
        net,
        &state.d,
        &state.theta_hat,
        omega,
        line_flow,
        p_in,
    ))
}

fn imbalances(
    net: &PowerNetwork,
    d: &[f64],
    theta_hat: &[f64],
    omega: &[f64],
    line_flow: &[f64],
    p_in: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let r = net_injection(net, d, line_flow, p_in);
    let u1 = (0..r.len())
        .map(|i| r[i] - net.damping()[i] * omega[i])
        .collect();
    let lt = net.laplacian_apply_unchecked(theta_hat);
    let u2 = (0..r.len()).map(|i| p_in[i] - d[i] - lt[i]).collect();
    (u1, u2)
}

#[derive(Clone, Copy, PartialEq)]
enum Law {
    Dppd,
    Subgradient,
}

/// Shared right-hand side of the `η, d, θ̂, μ, ν` families given the `λ` in use.
fn core_rhs(
    net: &PowerNetwork,
    cost: &CostModel,
    cfg: &DppdConfig,
    s: &ControllerState,
    lambda: &[f64],
    u1: &[f64],
    u2: &[f64],
    law: Law,
) -> ControllerState {
    let n = net.n_buses();
    let l = net.n_lines();
    let rho = &cfg.rho;
    let mut eta_dot = vec![0.0; n];
    let mut d_dot = vec![0.0; n];
    for i in 0..n {
        if !cost.is_controllable(i) {
            continue;
        }
        let d = s.d[i];
        let drive = lambda[i] + u1[i] + s.mu[i] + u2[i] - cost.grad_f0_bus(i, d);
        match law {
            Law::Dppd => {
                eta_dot[i] = rho.eta * (cost.prox_l1_shifted(i, d - cfg.kappa * s.eta[i]) - d);
                d_dot[i] = rho.d * (cost.prox_box(i, d + drive + cfg.kappa * s.eta[i]) - d);
            }
            Law::Subgradient => {
                let sel = cost.l1_subgradient_selection(i, d);
                d_dot[i] = rho.d * (cost.prox_box(i, d + drive - sel) - d);
            }
        }
    }

    let mut pull = vec![0.0; l];
    let mut nu_minus_dot = vec![0.0; l];
    let mut nu_plus_dot = vec![0.0; l];
    if cfg.thermal_limits {
        let flows = net.flows_unchecked(&s.theta_hat);
        for (e, line) in net.lines().iter().enumerate() {
            let pm = (s.nu_minus[e] + line.p_min - flows[e]).max(0.0);
            let pp = (s.nu_plus[e] + flows[e] - line.p_max).max(0.0);
            pull[e] = line.susceptance * (pm - pp);
            nu_minus_dot[e] = rho.nu_minus * (pm - s.nu_minus[e]);
            nu_plus_dot[e] = rho.nu_plus * (pp - s.nu_plus[e]);
        }
    }
    let mu_u2: Vec<f64> = (0..n).map(|i| s.mu[i] + u2[i]).collect();
    let lap = net.laplacian_apply_unchecked(&mu_u2);
    let cpull = net.outflow_unchecked(&pull);
    let theta_hat_dot = (0..n)
        .map(|i| rho.theta_hat * (cpull[i] + lap[i]))
        .collect();
    let mu_dot = u2.iter().map(|v| rho.mu * v).collect();

    ControllerState {
        eta: eta_dot,
        d: d_dot,
        theta_hat: theta_hat_dot,
        mu: mu_dot,
        nu_minus: nu_minus_dot,
        nu_plus: nu_plus_dot,
        lambda: Vec::new(),
        line_flow: Vec::new(),
    }
}

fn finite(ds: ControllerState) -> Result<ControllerState> {
    use crate::dynamics::OdeState;
    if ds.all_finite() {
        Ok(ds)
    } else {
        Err(Error::NonFiniteState { t: f64::NAN })
    }
}

fn closed_loop(
    net: &PowerNetwork,
    cost: &CostModel,
    cfg: &DppdConfig,
    state: &ControllerState,
    omega: &[f64],
    line_flow: &[f64],
    p_in: &[f64],
    law: Law,
) -> Result<ControllerState> {
    state.check(net, Mode::ClosedLoop)?;
    let (u1, u2) = local_imbalances(net, state, omega, line_flow, p_in)?;
    finite(core_rhs(net, cost, cfg, state, omega, &u1, &u2, law))
}

/// Controller derivative with `λ` replaced by the measured frequency.
///
/// The plant realizes the flow and frequency families, so only `η, d, θ̂, μ, ν` move here.
pub fn dppd_rhs_closed_loop(
    net: &PowerNetwork,
    cost: &CostModel,
    cfg: &DppdConfig,
    state: &ControllerState,
    omega: &[f64],
    line_flow: &[f64],
    p_in: &[f64],
) -> Result<ControllerState> {
    closed_loop(net, cost, cfg, state, omega, line_flow, p_in, Law::Dppd)
}

/// Baseline: no `η` tracker, and `d` follows a fixed subgradient selection of the l1 term.
pub fn subgradient_baseline_rhs(
    net: &PowerNetwork,
    cost: &CostModel,
    cfg: &DppdConfig,
    state: &ControllerState,
    omega: &[f64],
    line_flow: &[f64],
    p_in: &[f64],
) -> Result<ControllerState> {
    closed_loop(
        net,
        cost,
        cfg,
        state,
        omega,
        line_flow,
        p_in,
        Law::Subgradient,
    )
}

/// The `λ` actually used by pure-optimization mode.
///
/// With physical `ρ_λ` the load-bus entries are the algebraic limit of infinite stepsize.
pub fn effective_lambda(
    net: &PowerNetwork,
    cfg: &DppdConfig,
    state: &ControllerState,
    p_in: &[f64],
) -> Vec<f64> {
    let mut lambda = state.lambda.clone();
    if cfg.rho.lambda == Rate::Physical {
        let r = net_injection(net, &state.d, &state.line_flow, p_in);
        for &i in net.load_buses() {
            lambda[i] = r[i] / net.damping()[i];
        }
    }
    lambda
}

/// Full pure-optimization derivative including the `P` and `λ` families.
pub fn dppd_rhs_pure_opt(
    net: &PowerNetwork,
    cost: &CostModel,
    cfg: &DppdConfig,
    state: &ControllerState,
    p_in: &[f64],
) -> Result<ControllerState> {
    state.check(net, Mode::PureOpt)?;
    net.check_bus_len("injection", p_in.len())?;
    let lambda = effective_lambda(net, cfg, state, p_in);
    let (u1, u2) = imbalances(
        net,
        &state.d,
        &state.theta_hat,
        &lambda,
        &state.line_flow,
        p_in,
    );
    let mut ds = core_rhs(net, cost, cfg, state, &lambda, &u1, &u2, Law::Dppd);

    let lu: Vec<f64> = lambda.iter().zip(&u1).map(|(a, b)| a + b).collect();
    let diff = net.differences_unchecked(&lu);
    ds.line_flow = net
        .lines()
        .iter()
        .zip(diff)
        .map(|(line, v)| match cfg.rho.line_flow {
            Rate::Fixed(r) => r * v,
            Rate::Physical => line.susceptance * v,
        })
        .collect();
    ds.lambda = (0..net.n_buses())
        .map(|i| match cfg.rho.lambda {
            Rate::Fixed(r) => r * u1[i],
            Rate::Physical if net.is_generator(i) => u1[i] / net.inertia()[i],
            Rate::Physical => 0.0,
        })
        .collect();
    finite(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costs::BusCost;
    use crate::network::{build_network, BusKind, BusSpec, LineSpec};

    fn isolated_load() -> (PowerNetwork, CostModel) {
        let net = build_network(
            &[BusSpec {
                id: 1,
                kind: BusKind::Load,
                inertia: None,
                damping: 1.0,
            }],
            &[],
        )
        .unwrap();
        let cost = CostModel::new(
            1,
            vec![(
                0,
                BusCost {
                    a: 1.0,
                    e: 0.0,
                    b: 1.0,
                    c: 0.0,
                    dmin: -1.5,
                    dmax: 1.5,
                },
            )],
        )
        .unwrap();
        (net, cost)
    }

    #[test]
    fn isolated_bus_imbalances() {
        let (net, _) = isolated_load();
        let mut s = ControllerState::zeros(&net, Mode::ClosedLoop);
        s.d = vec![0.4];
        let (u1, u2) = local_imbalances(&net, &s, &[0.2], &[], &[1.0]).unwrap();
        assert!((u1[0] - 0.4).abs() < 1e-15);
        assert!((u2[0] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn isolated_bus_fixed_point() {
        // cost d² + |d|, P_in = 1: d* = 1, ∂f(1) = {3} so λ + μ = 3 with ω* = 0, λ* = 0.
        // η* solves prox_l1(1 - κη) = 1, i.e. 1 - κη = 2.
        let (net, cost) = isolated_load();
        let cfg = DppdConfig::default();
        let mut s = ControllerState::zeros(&net, Mode::ClosedLoop);
        s.d = vec![1.0];
        s.mu = vec![3.0];
        s.eta = vec![-1.0 / cfg.kappa];
        let ds = dppd_rhs_closed_loop(&net, &cost, &cfg, &s, &[0.0], &[], &[1.0]).unwrap();
        assert!(ds.eta[0].abs() < 1e-15);
        assert!(ds.d[0].abs() < 1e-15);
        assert!(ds.mu[0].abs() < 1e-15);
        assert!(ds.theta_hat[0].abs() < 1e-15);
    }

    #[test]
    fn inactive_limit_keeps_nu_at_zero() {
        let net = build_network(
            &[
                BusSpec {
                    id: 1,
                    kind: BusKind::Gen,
                    inertia: Some(8.0),
                    damping: 1.0,
                },
                BusSpec {
                    id: 2,
                    kind: BusKind::Load,
                    inertia: None,
                    damping: 1.0,
                },
            ],
            &[LineSpec {
                from: 1,
                to: 2,
                susceptance: 10.0,
                p_min: -1.0,
                p_max: 1.0,
            }],
        )
        .unwrap();
        let cost = CostModel::new(2, vec![]).unwrap();
        let cfg = DppdConfig {
            thermal_limits: true,
            ..DppdConfig::default()
        };
        let mut s = ControllerState::zeros(&net, Mode::ClosedLoop);
        s.theta_hat = vec![0.05, 0.0];
        let ds =
            dppd_rhs_closed_loop(&net, &cost, &cfg, &s, &[0.0, 0.0], &[0.5], &[0.5, -0.5]).unwrap();
        assert_eq!(ds.nu_minus, vec![0.0]);
        assert_eq!(ds.nu_plus, vec![0.0]);
    }

    #[test]
    fn smooth_cost_baseline_matches_dppd() {
        let (net, _) = isolated_load();
        let cost = CostModel::new(1, vec![(0, BusCost::quadratic(1.0, -1.5, 1.5))]).unwrap();
        let cfg = DppdConfig::default();
        let mut s = ControllerState::zeros(&net, Mode::ClosedLoop);
        s.d = vec![0.3];
        s.mu = vec![0.2];
        let a = dppd_rhs_closed_loop(&net, &cost, &cfg, &s, &[0.1], &[], &[0.7]).unwrap();
        let b = subgradient_baseline_rhs(&net, &cost, &cfg, &s, &[0.1], &[], &[0.7]).unwrap();
        assert_eq!(a.d, b.d);
        assert_eq!(a.mu, b.mu);
    }

    #[test]
    fn origin_is_pure_opt_equilibrium() {
        let (net, _) = isolated_load();
        let cost = CostModel::new(1, vec![(0, BusCost::quadratic(1.0, -1.5, 1.5))]).unwrap();
        let cfg = DppdConfig {
            mode: Mode::PureOpt,
            ..DppdConfig::default()
        };
        let s = ControllerState::zeros(&net, Mode::PureOpt);
        let ds = dppd_rhs_pure_opt(&net, &cost, &cfg, &s, &[0.0]).unwrap();
        assert_eq!(ds, ControllerState::zeros(&net, Mode::PureOpt));
    }

    #[test]
    fn config_validation() {
        let mut cfg = DppdConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.kappa = 1.0;
        assert!(cfg.validate().is_err());
        cfg.kappa = 0.5;
        cfg.rho.mu = 0.0;
        assert!(cfg.validate().is_err());
        cfg.rho.mu = 0.5;
        cfg.rho.lambda = Rate::Fixed(-1.0);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let (net, cost) = isolated_load();
        let s = ControllerState::zeros(&net, Mode::ClosedLoop);
        let r = dppd_rhs_closed_loop(
            &net,
            &cost,
            &DppdConfig::default(),
            &s,
            &[0.0, 1.0],
            &[],
            &[1.0],
        );
        assert!(matches!(r, Err(Error::DimensionMismatch { .. })));
    }
}
