//! Optimality and convergence diagnostics: KKT residuals, Lyapunov candidates, the
//! `O(1/√t)` rate surrogate, angle-recovery checks and a chatter count.

use serde::{Deserialize, Serialize};

use crate::controller::DppdConfig;
use crate::costs::CostModel;
use crate::error::{Error, Result};
use crate::network::PowerNetwork;
use crate::simulate::{Sample, Trajectory};

/// Default half-width of the window over which `∂f(d)` is taken in the stationarity check.
///
/// A converged `d` sits within integrator error of a kink or box face, never exactly on it.
pub const DEFAULT_KINK_TOLERANCE: f64 = 1e-6;

/// Full primal-dual point. `ω` and `λ` coincide at any equilibrium.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PrimalDualPoint {
    pub eta: Vec<f64>,
    pub d: Vec<f64>,
    pub theta_hat: Vec<f64>,
    pub omega: Vec<f64>,
    pub line_flow: Vec<f64>,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub nu_minus: Vec<f64>,
    pub nu_plus: Vec<f64>,
}

impl PrimalDualPoint {
    /// Point read off a sample. In closed loop `λ` is the measured frequency.
    pub fn from_sample(s: &Sample) -> Self {
        PrimalDualPoint {
            eta: s.ctrl.eta.clone(),
            d: s.ctrl.d.clone(),
            theta_hat: s.ctrl.theta_hat.clone(),
            omega: s.omega.clone(),
            line_flow: s.line_flow.clone(),
            lambda: s.omega.clone(),
            mu: s.ctrl.mu.clone(),
            nu_minus: s.ctrl.nu_minus.clone(),
            nu_plus: s.ctrl.nu_plus.clone(),
        }
    }

    fn check(&self, net: &PowerNetwork) -> Result<()> {
        for (what, len) in [
            ("d", self.d.len()),
            ("theta_hat", self.theta_hat.len()),
            ("omega", self.omega.len()),
            ("lambda", self.lambda.len()),
            ("mu", self.mu.len()),
        ] {
            net.check_bus_len(what, len)?;
        }
        for (what, len) in [
            ("line flow", self.line_flow.len()),
            ("nu_minus", self.nu_minus.len()),
            ("nu_plus", self.nu_plus.len()),
        ] {
            net.check_line_len(what, len)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktOptions {
    pub thermal_limits: bool,
    pub kink_tolerance: f64,
}

impl Default for KktOptions {
    fn default() -> Self {
        KktOptions {
            thermal_limits: false,
            kink_tolerance: DEFAULT_KINK_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KktResidual {
    pub stationarity_d: f64,
    pub freq_lambda: f64,
    pub theta_stationarity: f64,
    pub lambda_consensus: f64,
    pub balance_p: f64,
    pub balance_theta: f64,
    pub comp_slack_minus: f64,
    pub comp_slack_plus: f64,
    pub total: f64,
}

fn norm(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m: f64, x| m.max(x.abs()))
}

/// Residuals of the optimality system at `point` for injection `p_in`.
pub fn kkt_residual(
    net: &PowerNetwork,
    cost: &CostModel,
    p_in: &[f64],
    point: &PrimalDualPoint,
    opts: &KktOptions,
) -> Result<KktResidual> {
    point.check(net)?;
    net.check_bus_len("injection", p_in.len())?;
    let n = net.n_buses();

    let stationarity_d = norm((0..n).map(|i| {
        let v = point.lambda[i] + point.mu[i];
        match cost.subdifferential(i, point.d[i], opts.kink_tolerance) {
            None => f64::INFINITY,
            Some((lo, hi)) => (lo - v).max(v - hi).max(0.0),
        }
    }));
    let freq_lambda = norm((0..n).map(|i| point.omega[i] - point.lambda[i]));

    let (nu_minus, nu_plus): (Vec<f64>, Vec<f64>) = if opts.thermal_limits {
        (point.nu_minus.clone(), point.nu_plus.clone())
    } else {
        (vec![0.0; net.n_lines()], vec![0.0; net.n_lines()])
    };
    let pull: Vec<f64> = net
        .lines()
        .iter()
        .enumerate()
        .map(|(e, l)| l.susceptance * (nu_minus[e] - nu_plus[e]))
        .collect();
    let cpull = net.outflow_unchecked(&pull);
    let lmu = net.laplacian_apply_unchecked(&point.mu);
    let theta_stationarity = norm((0..n).map(|i| cpull[i] + lmu[i]));
    let lambda_consensus = norm(net.differences_unchecked(&point.lambda));

    let out = net.outflow_unchecked(&point.line_flow);
    let damping = net.damping();
    let balance_p =
        norm((0..n).map(|i| p_in[i] - point.d[i] - damping[i] * point.omega[i] - out[i]));
    let lt = net.laplacian_apply_unchecked(&point.theta_hat);
    let balance_theta = norm((0..n).map(|i| p_in[i] - point.d[i] - lt[i]));

    let (mut comp_slack_minus, mut comp_slack_plus) = (0.0, 0.0);
    if opts.thermal_limits {
        let flows = net.flows_unchecked(&point.theta_hat);
        comp_slack_minus = norm(net.lines().iter().enumerate().map(|(e, l)| {
            let slack = flows[e] - l.p_min;
            (-slack).max(0.0) + (-nu_minus[e]).max(0.0) + (nu_minus[e] * slack).abs()
        }));
        comp_slack_plus = norm(net.lines().iter().enumerate().map(|(e, l)| {
            let slack = l.p_max - flows[e];
            (-slack).max(0.0) + (-nu_plus[e]).max(0.0) + (nu_plus[e] * slack).abs()
        }));
    }

    let parts = [
        stationarity_d,
        freq_lambda,
        theta_stationarity,
        lambda_consensus,
        balance_p,
        balance_theta,
        comp_slack_minus,
        comp_slack_plus,
    ];
    let total = parts.iter().fold(0.0, |m: f64, v| m.max(*v));
    Ok(KktResidual {
        stationarity_d,
        freq_lambda,
        theta_stationarity,
        lambda_consensus,
        balance_p,
        balance_theta,
        comp_slack_minus,
        comp_slack_plus,
        total,
    })
}

/// `½ ‖P_Ω(d) - d‖²`.
pub fn lyapunov_va(cost: &CostModel, d: &[f64]) -> f64 {
    0.5 * d
        .iter()
        .enumerate()
        .map(|(i, &x)| (cost.prox_box(i, x) - x).powi(2))
        .sum::<f64>()
}

/// Largest `d` distance from the boxes over all samples.
pub fn max_box_violation(cost: &CostModel, traj: &Trajectory) -> f64 {
    traj.samples
        .iter()
        .flat_map(|s| s.ctrl.d.iter().enumerate())
        .fold(0.0, |m: f64, (i, &x)| {
            m.max((cost.prox_box(i, x) - x).abs())
        })
}

/// How the Bregman-like part `V1` of `V_b` is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum V1Form {
    /// The closed-form cross terms as printed, with the doubled coefficients of the
    /// thermal-limit variant.
    Printed,
    /// `Ψ(x) - Ψ(x*) - ∇Ψ(x*)ᵀ(x - x*)` with exact gradients of `Ψ`.
    Bregman,
}

/// Validated reference point for `V_b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Equilibrium {
    pub point: PrimalDualPoint,
    pub p_in: Vec<f64>,
    pub residual: KktResidual,
}

/// Tolerance on the KKT residual of an equilibrium handed to [`lyapunov_vb`].
pub const EQUILIBRIUM_TOLERANCE: f64 = 1e-5;

impl Equilibrium {
    pub fn new(
        net: &PowerNetwork,
        cost: &CostModel,
        p_in: Vec<f64>,
        point: PrimalDualPoint,
        thermal_limits: bool,
    ) -> Result<Self> {
        let opts = KktOptions {
            thermal_limits,
            ..KktOptions::default()
        };
        let residual = kkt_residual(net, cost, &p_in, &point, &opts)?;
        if !(residual.total < EQUILIBRIUM_TOLERANCE) {
            return Err(Error::BadEquilibrium {
                residual: residual.total,
            });
        }
        Ok(Equilibrium {
            point,
            p_in,
            residual,
        })
    }
}

/// Pieces of `Ψ` and its gradient at one point.
struct PsiEval {
    value: f64,
    grad_d: Vec<f64>,
    grad_omega: Vec<f64>,
    grad_flow: Vec<f64>,
    grad_theta: Vec<f64>,
    grad_mu: Vec<f64>,
    grad_nu_minus: Vec<f64>,
    grad_nu_plus: Vec<f64>,
}

fn psi(
    net: &PowerNetwork,
    cost: &CostModel,
    p_in: &[f64],
    x: &PrimalDualPoint,
    limits: bool,
) -> PsiEval {
    let n = net.n_buses();
    let damping = net.damping();
    let out = net.outflow_unchecked(&x.line_flow);
    let lt = net.laplacian_apply_unchecked(&x.theta_hat);
    // a = ω + u1, b = μ + u2
    let a: Vec<f64> = (0..n)
        .map(|i| x.omega[i] + p_in[i] - x.d[i] - damping[i] * x.omega[i] - out[i])
        .collect();
    let b: Vec<f64> = (0..n).map(|i| x.mu[i] + p_in[i] - x.d[i] - lt[i]).collect();
    let f0 = cost.smooth_cost(&x.d).unwrap_or(f64::NAN);
    let mut value = f0 + 0.5 * dot(&a, &a) + 0.5 * dot(&b, &b);

    let l = net.n_lines();
    let (mut pm, mut pp) = (vec![0.0; l], vec![0.0; l]);
    if limits {
        let flows = net.flows_unchecked(&x.theta_hat);
        for (e, line) in net.lines().iter().enumerate() {
            pm[e] = (x.nu_minus[e] + line.p_min - flows[e]).max(0.0);
            pp[e] = (x.nu_plus[e] + flows[e] - line.p_max).max(0.0);
        }
        value += 0.5 * dot(&pm, &pm) + 0.5 * dot(&pp, &pp);
    }

    let grad_d = (0..n)
        .map(|i| cost.grad_f0_bus(i, x.d[i]) - a[i] - b[i])
        .collect();
    let grad_omega = (0..n).map(|i| (1.0 - damping[i]) * a[i]).collect();
    let grad_flow = net
        .differences_unchecked(&a)
        .into_iter()
        .map(|v| -v)
        .collect();
    let lb = net.laplacian_apply_unchecked(&b);
    let push: Vec<f64> = net
        .lines()
        .iter()
        .enumerate()
        .map(|(e, line)| line.susceptance * (pp[e] - pm[e]))
        .collect();
    let cpush = net.outflow_unchecked(&push);
    let grad_theta = (0..n).map(|i| -lb[i] + cpush[i]).collect();
    PsiEval {
        value,
        grad_d,
        grad_omega,
        grad_flow,
        grad_theta,
        grad_mu: b,
        grad_nu_minus: pm,
        grad_nu_plus: pp,
    }
}

/// Lyapunov candidate `V_b` (or its thermal-limit variant when `cfg.thermal_limits`).
pub fn lyapunov_vb(
    net: &PowerNetwork,
    cost: &CostModel,
    cfg: &DppdConfig,
    state: &PrimalDualPoint,
    eq: &Equilibrium,
    form: V1Form,
) -> Result<f64> {
    state.check(net)?;
    net.check_bus_len("eta", state.eta.len())?;
    let limits = cfg.thermal_limits;
    let s = state;
    let e = &eq.point;
    let p_in = &eq.p_in;

    let dd = diff(&s.d, &e.d);
    let deta = diff(&s.eta, &e.eta);
    let dtheta = diff(&s.theta_hat, &e.theta_hat);
    let domega = diff(&s.omega, &e.omega);
    let dflow = diff(&s.line_flow, &e.line_flow);
    let dmu = diff(&s.mu, &e.mu);
    let dnum = diff(&s.nu_minus, &e.nu_minus);
    let dnup = diff(&s.nu_plus, &e.nu_plus);

    let at_state = psi(net, cost, p_in, s, limits);
    let at_eq = psi(net, cost, p_in, e, limits);

    let v1 = match form {
        V1Form::Bregman => {
            let mut v = at_state.value
                - at_eq.value
                - dot(&at_eq.grad_d, &dd)
                - dot(&at_eq.grad_omega, &domega)
                - dot(&at_eq.grad_flow, &dflow)
                - dot(&at_eq.grad_theta, &dtheta)
                - dot(&at_eq.grad_mu, &dmu);
            if limits {
                v -= dot(&at_eq.grad_nu_minus, &dnum) + dot(&at_eq.grad_nu_plus, &dnup);
            }
            v
        }
        V1Form::Printed => {
            let c = if limits { 2.0 } else { 1.0 };
            let damping = net.damping();
            let w_idw: f64 = (0..net.n_buses())
                .map(|i| e.omega[i] * (1.0 - damping[i]) * domega[i])
                .sum();
            let cdp = net.outflow_unchecked(&dflow);
            let ldt = net.laplacian_apply_unchecked(&dtheta);
            let mut v = at_state.value - at_eq.value - dot(&at_eq.grad_d, &dd)
                + c * (-w_idw - dot(&e.mu, &dmu) + dot(&e.omega, &cdp) + dot(&e.mu, &ldt));
            if limits {
                v -= dot(&e.nu_minus, &dnum) + dot(&e.nu_plus, &dnup);
            }
            v
        }
    };

    let k = cfg.kappa;
    let v2 = 0.5 * (dot(&dd, &dd) - 2.0 * k * dot(&dd, &deta) + k * dot(&deta, &deta));
    let d_weighted: f64 = domega
        .iter()
        .zip(net.damping())
        .map(|(w, dv)| w * dv * w)
        .sum();
    let mut v3 = 0.5 * dot(&dmu, &dmu) + 0.5 * dot(&domega, &domega) + 1.5 * d_weighted;
    if limits {
        v3 += 0.5 * (dot(&dnum, &dnum) + dot(&dnup, &dnup));
    }
    let v4 = 0.5 * (dot(&dtheta, &dtheta) + dot(&dflow, &dflow));
    Ok(v1 + v2 + v3 + v4)
}

/// Largest step-to-step increase `v[k+1] - v[k]`; zero for non-increasing sequences.
pub fn max_increase(values: &[f64]) -> f64 {
    values.windows(2).fold(0.0, |m: f64, w| m.max(w[1] - w[0]))
}

/// Largest step-to-step increase relative to `1 + v[k]`.
pub fn max_relative_increase(values: &[f64]) -> f64 {
    values
        .windows(2)
        .fold(0.0, |m: f64, w| m.max((w[1] - w[0]) / (1.0 + w[0].abs())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub t: Vec<f64>,
    pub g: Vec<f64>,
    pub envelope: Vec<f64>,
    pub bound: Vec<f64>,
    pub t0: f64,
    pub bound_t0: f64,
    pub bound_final: f64,
    pub pass: bool,
}

/// Reference time from which the rate bound is checked.
pub const RATE_T0: f64 = 1.0;
/// Envelope values below this are round-off; the bound counts as met from there on.
pub const RATE_FLOOR: f64 = 1e-12;

/// Rate surrogate from sampled derivative norms `g(t)`.
///
/// `envelope(t) = min_{s ≤ t} g(s)` and `bound(t) = envelope(t) √t`. Passes when
/// `bound(t) ≤ 2 bound(t0)` for every sample with `t ≥ t0`.
pub fn rate_report_from(t: &[f64], g: &[f64], t0: f64) -> Result<RateReport> {
    if t.is_empty() || t.len() != g.len() {
        return Err(Error::EmptyTrajectory);
    }
    let mut envelope = Vec::with_capacity(g.len());
    let mut m = f64::INFINITY;
    for &v in g {
        m = m.min(v);
        envelope.push(m);
    }
    let bound: Vec<f64> = t
        .iter()
        .zip(&envelope)
        .map(|(ti, e)| e * ti.max(0.0).sqrt())
        .collect();
    // first sample at or after t0 (tolerating float drift in sample times)
    let k0 = t
        .iter()
        .position(|&ti| ti >= t0 - 1e-9)
        .unwrap_or(t.len() - 1);
    let bound_t0 = bound[k0];
    let pass = bound[k0..]
        .iter()
        .zip(&envelope[k0..])
        .all(|(&b, &e)| b <= 2.0 * bound_t0 || e <= RATE_FLOOR);
    Ok(RateReport {
        t0: t[k0],
        bound_t0,
        bound_final: *bound.last().unwrap_or(&0.0),
        pass,
        t: t.to_vec(),
        g: g.to_vec(),
        envelope,
        bound,
    })
}

pub fn rate_report(traj: &Trajectory) -> Result<RateReport> {
    let g: Vec<f64> = traj.samples.iter().map(|s| s.g).collect();
    rate_report_from(&traj.times(), &g, RATE_T0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lemma2Report {
    /// `‖Cᵀθ - Cᵀθ̂‖∞`
    pub angle_residual: f64,
    /// `‖B Cᵀθ - P‖∞`
    pub flow_residual: f64,
    pub omega_inf: f64,
    /// Best constant `ε` in `θ ≈ θ̂ + ε 1`.
    pub shift: f64,
    /// `min_ε ‖θ - θ̂ - ε 1‖∞`.
    pub shift_spread: f64,
}

/// Default convergence threshold on `g` before angle recovery is assessed.
pub const LEMMA2_G_TOLERANCE: f64 = 1e-5;

/// Compares plant angles with virtual angles at a converged point.
pub fn lemma2_check(
    net: &PowerNetwork,
    theta: &[f64],
    theta_hat: &[f64],
    line_flow: &[f64],
    omega: &[f64],
    g: f64,
    g_tolerance: f64,
) -> Result<Lemma2Report> {
    net.check_bus_len("theta", theta.len())?;
    net.check_bus_len("theta_hat", theta_hat.len())?;
    net.check_bus_len("omega", omega.len())?;
    net.check_line_len("line flow", line_flow.len())?;
    if !(g < g_tolerance) {
        return Err(Error::NotConverged { g });
    }
    let gap = diff(theta, theta_hat);
    let angle_residual = inf_norm(&net.differences_unchecked(&gap));
    let flow_residual = inf_norm(&diff(&net.flows_unchecked(theta), line_flow));
    let hi = gap.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = gap.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(Lemma2Report {
        angle_residual,
        flow_residual,
        omega_inf: inf_norm(omega),
        shift: 0.5 * (hi + lo),
        shift_spread: 0.5 * (hi - lo),
    })
}

/// Magnitude below which a derivative sample is treated as zero by the chatter count.
pub const CHATTER_FLOOR: f64 = 1e-9;

/// Sign changes of `values` over the last quarter of the sampled time span.
pub fn count_sign_changes(t: &[f64], values: &[f64]) -> Result<usize> {
    let (Some(&first), Some(&last)) = (t.first(), t.last()) else {
        return Err(Error::EmptyTrajectory);
    };
    let start = last - 0.25 * (last - first);
    let mut prev = 0.0f64;
    let mut count = 0;
    for (&ti, &v) in t.iter().zip(values) {
        if ti < start || v.abs() < CHATTER_FLOOR {
            continue;
        }
        if prev != 0.0 && v.signum() != prev {
            count += 1;
        }
        prev = v.signum();
    }
    Ok(count)
}

/// Chatter count of `ḋ` on a 0-based bus.
pub fn chatter_metric(traj: &Trajectory, bus: usize) -> Result<usize> {
    if traj.samples.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    let v: Vec<f64> = traj
        .samples
        .iter()
        .map(|s| s.ctrl_dot.d.get(bus).copied().unwrap_or(0.0))
        .collect();
    count_sign_changes(&traj.times(), &v)
}
