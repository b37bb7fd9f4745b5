//! Fixed-step integration of the plant and controller into a sampled [`Trajectory`].

use serde::{Deserialize, Serialize};

use crate::controller::{
    dppd_rhs_closed_loop, dppd_rhs_pure_opt, effective_lambda, subgradient_baseline_rhs,
    ControllerState, DppdConfig, Mode,
};
use crate::costs::CostModel;
use crate::diagnostics::{kkt_residual, KktOptions, PrimalDualPoint, EQUILIBRIUM_TOLERANCE};
use crate::dynamics::{plant_rhs_unchecked, rk4_step, OdeState, PlantState};
use crate::error::{Error, Result};
use crate::injection::InjectionProfile;
use crate::network::PowerNetwork;
use crate::scenarios::{apply_measurement_noise, InitialCondition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlLaw {
    Dppd,
    Baseline,
    /// Loads stay at their initial commands.
    None,
}

/// Which model carries the damping error `k1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DampingSide {
    /// The controller believes `k1 D`, the plant keeps `D`.
    #[default]
    Controller,
    /// The plant runs with `k1 D`, the controller keeps the nominal `D`.
    Plant,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Uncertainty {
    pub k1: Option<f64>,
    pub side: DampingSide,
    pub k2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub h: f64,
    pub t_end: f64,
    pub sample_every: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            h: 1e-3,
            t_end: 60.0,
            sample_every: 0.01,
        }
    }
}

impl SimOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::Validation("h must be positive".into()));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::Validation("T must be positive".into()));
        }
        if !(self.sample_every >= self.h) {
            return Err(Error::Validation(
                "sample interval must be at least the step size".into(),
            ));
        }
        Ok(())
    }
}

/// Everything needed to integrate one run.
#[derive(Debug, Clone)]
pub struct Simulation<'a> {
    pub net: &'a PowerNetwork,
    pub cost: &'a CostModel,
    pub cfg: DppdConfig,
    pub law: ControlLaw,
    pub injection: &'a InjectionProfile,
    pub uncertainty: Uncertainty,
}

/// Combined integrator state. The plant part is empty in pure-optimization mode.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SystemState {
    pub plant: PlantState,
    pub ctrl: ControllerState,
}

impl OdeState for SystemState {
    fn scaled_add(&mut self, h: f64, k: &Self) {
        self.plant.scaled_add(h, &k.plant);
        self.ctrl.scaled_add(h, &k.ctrl);
    }

    fn all_finite(&self) -> bool {
        self.plant.all_finite() && self.ctrl.all_finite()
    }
}

/// One stored sample. Derivatives come from the first RK4 stage at `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    /// Physical frequency on every bus (pure-optimization: the `λ` in use).
    pub omega: Vec<f64>,
    pub line_flow: Vec<f64>,
    /// Plant angles; empty in pure-optimization mode.
    pub theta: Vec<f64>,
    pub p_in: Vec<f64>,
    pub ctrl: ControllerState,
    pub ctrl_dot: ControllerState,
    /// Generator-bus `ω̇` in closed loop, all-bus `λ̇` in pure-optimization mode.
    pub omega_dot: Vec<f64>,
    pub line_flow_dot: Vec<f64>,
    pub g: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub mode: Mode,
    pub law: ControlLaw,
    pub thermal_limits: bool,
    pub h: f64,
    pub samples: Vec<Sample>,
    pub final_state: SystemState,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Sum of derivative norms used by the rate diagnostic.
pub(crate) fn derivative_norm_sum(
    ctrl_dot: &ControllerState,
    omega_dot: &[f64],
    line_flow_dot: &[f64],
    limits: bool,
) -> f64 {
    let mut g = norm(&ctrl_dot.d)
        + norm(&ctrl_dot.eta)
        + norm(&ctrl_dot.theta_hat)
        + norm(line_flow_dot)
        + norm(&ctrl_dot.mu)
        + norm(omega_dot);
    if limits {
        g += norm(&ctrl_dot.nu_minus) + norm(&ctrl_dot.nu_plus);
    }
    g
}

/// Uncontrolled synchronous operating point for net injection `r = P_in - d`.
///
/// All buses share `ω = Σr / ΣD`; flows solve `C B Cᵀ θ = r - D ω` with `θ_1 = 0`.
/// For a balanced `r` this is the usual DC power flow at nominal frequency.
pub fn steady_plant_state(net: &PowerNetwork, r: &[f64]) -> Result<PlantState> {
    net.check_bus_len("injection", r.len())?;
    let w = r.iter().sum::<f64>() / net.damping().iter().sum::<f64>();
    let rhs: Vec<f64> = r
        .iter()
        .zip(net.damping())
        .map(|(ri, di)| ri - di * w)
        .collect();
    let theta = net.grounded_angles(&rhs)?;
    Ok(PlantState {
        line_flow: net.line_flows_from_angles(&theta)?,
        theta,
        omega_gen: vec![w; net.generator_buses().len()],
    })
}

impl<'a> Simulation<'a> {
    fn networks(&self) -> Result<(PowerNetwork, PowerNetwork)> {
        match self.uncertainty.k1 {
            None => Ok((self.net.clone(), self.net.clone())),
            Some(k1) => {
                let scaled = self.net.with_damping_scaled(k1)?;
                Ok(match self.uncertainty.side {
                    DampingSide::Controller => (self.net.clone(), scaled),
                    DampingSide::Plant => (scaled, self.net.clone()),
                })
            }
        }
    }

    /// Default initial state: plant at its synchronous operating point for the `t = 0`
    /// injection, virtual angles copied from the plant angles, other controller variables
    /// at zero with `d` projected into the boxes.
    pub fn default_initial_state(&self) -> Result<SystemState> {
        let mut ctrl = ControllerState::zeros(self.net, self.cfg.mode);
        ctrl.make_feasible(self.cost);
        let plant = match self.cfg.mode {
            Mode::ClosedLoop => {
                let p = self.injection.eval(0.0);
                let r: Vec<f64> = p.iter().zip(&ctrl.d).map(|(a, b)| a - b).collect();
                let (plant_net, _) = self.networks()?;
                let plant = steady_plant_state(&plant_net, &r)?;
                ctrl.theta_hat = plant.theta.clone();
                plant
            }
            Mode::PureOpt => PlantState::default(),
        };
        Ok(SystemState { plant, ctrl })
    }

    /// Initial state of the given kind. `Flat` puts the plant at rest with zero angles and
    /// flows; `Equilibrium` also places the controller at the optimum of the base
    /// injection (see [`Simulation::equilibrium_initial_state`]).
    pub fn initial_state(&self, kind: InitialCondition) -> Result<SystemState> {
        match kind {
            InitialCondition::Steady => self.default_initial_state(),
            InitialCondition::Flat => {
                let mut s = self.default_initial_state()?;
                if self.cfg.mode == Mode::ClosedLoop {
                    s.plant = PlantState::zeros(self.net);
                    s.ctrl.theta_hat = vec![0.0; self.net.n_buses()];
                }
                Ok(s)
            }
            InitialCondition::Equilibrium => self.equilibrium_initial_state(),
        }
    }

    /// Controller at the optimal operating point of the base injection, plant at its
    /// synchronous state for the `t = 0` injection.
    ///
    /// The optimum comes from price bisection, so line limits must not bind there. Any
    /// imbalance present at `t = 0` (a step scheduled at time zero) shows up as a nonzero
    /// initial frequency.
    pub fn equilibrium_initial_state(&self) -> Result<SystemState> {
        let net = self.net;
        let n = net.n_buses();
        let base = self.injection.base();
        let (d, mu) = self.cost.dispatch(base.iter().sum())?;
        let r: Vec<f64> = base.iter().zip(&d).map(|(p, x)| p - x).collect();
        let theta_hat = net.grounded_angles(&r)?;
        let flows = net.flows_unchecked(&theta_hat);
        if self.cfg.thermal_limits
            && net
                .lines()
                .iter()
                .zip(&flows)
                .any(|(l, f)| *f < l.p_min || *f > l.p_max)
        {
            return Err(Error::Validation(
                "equilibrium start needs an optimum with slack on every line".into(),
            ));
        }
        let kappa = self.cfg.kappa;
        let eta = (0..n)
            .map(|i| match self.cost.subdifferential(i, d[i], 0.0) {
                Some(_) if self.cost.is_controllable(i) => {
                    let smooth = self.cost.grad_f0_bus(i, d[i]);
                    let b = self.cost.bus(i).unwrap();
                    let kb = self.cost.k() * b.b;
                    let s = if d[i] + b.c > 0.0 {
                        kb
                    } else if d[i] + b.c < 0.0 {
                        -kb
                    } else {
                        (mu - smooth).clamp(-kb, kb)
                    };
                    -s / kappa
                }
                _ => 0.0,
            })
            .collect();
        let mut ctrl = ControllerState::zeros(net, self.cfg.mode);
        ctrl.eta = eta;
        ctrl.d = d.clone();
        ctrl.mu = vec![mu; n];
        ctrl.theta_hat = theta_hat;
        if self.cfg.mode == Mode::PureOpt {
            ctrl.line_flow = flows;
        }
        let point = PrimalDualPoint {
            eta: ctrl.eta.clone(),
            d,
            theta_hat: ctrl.theta_hat.clone(),
            omega: vec![0.0; n],
            line_flow: net.flows_unchecked(&ctrl.theta_hat),
            lambda: vec![0.0; n],
            mu: ctrl.mu.clone(),
            nu_minus: ctrl.nu_minus.clone(),
            nu_plus: ctrl.nu_plus.clone(),
        };
        let kkt = kkt_residual(
            net,
            self.cost,
            base,
            &point,
            &KktOptions {
                thermal_limits: self.cfg.thermal_limits,
                ..KktOptions::default()
            },
        )?;
        if !(kkt.total < EQUILIBRIUM_TOLERANCE) {
            return Err(Error::BadEquilibrium {
                residual: kkt.total,
            });
        }
        let plant = match self.cfg.mode {
            Mode::ClosedLoop => {
                let p0 = self.injection.eval(0.0);
                let r0: Vec<f64> = p0.iter().zip(&ctrl.d).map(|(p, x)| p - x).collect();
                let (plant_net, _) = self.networks()?;
                steady_plant_state(&plant_net, &r0)?
            }
            Mode::PureOpt => PlantState::default(),
        };
        Ok(SystemState { plant, ctrl })
    }

    /// Integrates from `init` and returns the sampled trajectory.
    pub fn run(&self, init: SystemState, opts: &SimOptions) -> Result<Trajectory> {
        opts.validate()?;
        self.cfg.validate()?;
        if self.injection.len() != self.net.n_buses() {
            return Err(Error::DimensionMismatch {
                what: "injection",
                expected: self.net.n_buses(),
                got: self.injection.len(),
            });
        }
        if self.law == ControlLaw::Baseline && self.cfg.mode == Mode::PureOpt {
            return Err(Error::Validation(
                "the baseline controller only runs in closed loop".into(),
            ));
        }
        let (plant_net, ctrl_net) = self.networks()?;
        let controllable = self.cost.controllable_buses();
        let mut init = init;
        init.ctrl.make_feasible(self.cost);

        let eval = |t: f64, s: &SystemState| -> Result<(SystemState, Sample)> {
            let p_in = self.injection.eval(t);
            match self.cfg.mode {
                Mode::ClosedLoop => {
                    let (plant_dot, omega) =
                        plant_rhs_unchecked(&plant_net, &s.plant, &s.ctrl.d, &p_in);
                    let measured =
                        apply_measurement_noise(&omega, t, self.uncertainty.k2, &controllable);
                    let args = (&ctrl_net, self.cost, &self.cfg, &s.ctrl);
                    let ctrl_dot = match self.law {
                        ControlLaw::Dppd => dppd_rhs_closed_loop(
                            args.0,
                            args.1,
                            args.2,
                            args.3,
                            &measured,
                            &s.plant.line_flow,
                            &p_in,
                        )?,
                        ControlLaw::Baseline => subgradient_baseline_rhs(
                            args.0,
                            args.1,
                            args.2,
                            args.3,
                            &measured,
                            &s.plant.line_flow,
                            &p_in,
                        )?,
                        ControlLaw::None => ControllerState::zeros(self.net, Mode::ClosedLoop),
                    };
                    let sample = Sample {
                        t,
                        omega,
                        line_flow: s.plant.line_flow.clone(),
                        theta: s.plant.theta.clone(),
                        p_in,
                        ctrl: s.ctrl.clone(),
                        ctrl_dot: ctrl_dot.clone(),
                        omega_dot: plant_dot.omega_gen.clone(),
                        line_flow_dot: plant_dot.line_flow.clone(),
                        g: 0.0,
                    };
                    Ok((
                        SystemState {
                            plant: plant_dot,
                            ctrl: ctrl_dot,
                        },
                        sample,
                    ))
                }
                Mode::PureOpt => {
                    let ctrl_dot = match self.law {
                        ControlLaw::None => ControllerState::zeros(self.net, Mode::PureOpt),
                        _ => dppd_rhs_pure_opt(&ctrl_net, self.cost, &self.cfg, &s.ctrl, &p_in)?,
                    };
                    let sample = Sample {
                        t,
                        omega: effective_lambda(&ctrl_net, &self.cfg, &s.ctrl, &p_in),
                        line_flow: s.ctrl.line_flow.clone(),
                        theta: Vec::new(),
                        p_in,
                        ctrl: s.ctrl.clone(),
                        ctrl_dot: ctrl_dot.clone(),
                        omega_dot: ctrl_dot.lambda.clone(),
                        line_flow_dot: ctrl_dot.line_flow.clone(),
                        g: 0.0,
                    };
                    Ok((
                        SystemState {
                            plant: PlantState::default(),
                            ctrl: ctrl_dot,
                        },
                        sample,
                    ))
                }
            }
        };
        let limits = self.cfg.thermal_limits;
        let finish = |mut s: Sample| {
            s.g = derivative_norm_sum(&s.ctrl_dot, &s.omega_dot, &s.line_flow_dot, limits);
            s
        };
        let tag_time = |t: f64| {
            move |e: Error| match e {
                Error::NonFiniteState { .. } => Error::NonFiniteState { t },
                other => other,
            }
        };

        let n_steps = (opts.t_end / opts.h).round().max(1.0) as usize;
        let stride = ((opts.sample_every / opts.h).round() as usize).max(1);
        let mut samples = Vec::with_capacity(n_steps / stride + 2);
        let mut state = init;
        for step in 0..n_steps {
            let t = step as f64 * opts.h;
            let record = step % stride == 0;
            let mut first: Option<Sample> = None;
            let (next, _) = rk4_step(
                |tt, s: &SystemState| {
                    let (ds, sample) = eval(tt, s).map_err(tag_time(tt))?;
                    if record && first.is_none() {
                        first = Some(sample);
                    }
                    Ok(ds)
                },
                &state,
                t,
                opts.h,
            )?;
            if let Some(s) = first {
                samples.push(finish(s));
            }
            state = next;
        }
        let t_final = n_steps as f64 * opts.h;
        let (_, last) = eval(t_final, &state).map_err(tag_time(t_final))?;
        samples.push(finish(last));

        Ok(Trajectory {
            mode: self.cfg.mode,
            law: self.law,
            thermal_limits: limits,
            h: opts.h,
            samples,
            final_state: state,
        })
    }
}

impl Trajectory {
    pub fn last(&self) -> Result<&Sample> {
        self.samples.last().ok_or(Error::EmptyTrajectory)
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    /// `max_t ‖ω(t)‖∞` over all samples.
    pub fn max_frequency_deviation(&self) -> f64 {
        self.samples
            .iter()
            .flat_map(|s| s.omega.iter())
            .fold(0.0, |m: f64, w| m.max(w.abs()))
    }
}
