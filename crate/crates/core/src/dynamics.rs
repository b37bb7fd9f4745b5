//! Linearized swing dynamics with algebraic load buses, plus a fixed-step RK4 integrator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::PowerNetwork;

/// State that RK4 can advance: supports `self += h * k` and a finiteness check.
pub trait OdeState: Clone {
    fn scaled_add(&mut self, h: f64, k: &Self);
    fn all_finite(&self) -> bool;
}

impl OdeState for Vec<f64> {
    fn scaled_add(&mut self, h: f64, k: &Self) {
        for (x, dx) in self.iter_mut().zip(k) {
            *x += h * dx;
        }
    }

    fn all_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

/// Implements [`OdeState`] for a struct whose fields are all `Vec<f64>`.
macro_rules! ode_state_fields {
    ($ty:ty { $($f:ident),+ }) => {
        impl $crate::dynamics::OdeState for $ty {
            fn scaled_add(&mut self, h: f64, k: &Self) {
                $( self.$f.scaled_add(h, &k.$f); )+
            }
            fn all_finite(&self) -> bool {
                true $( && self.$f.all_finite() )+
            }
        }
    };
}
pub(crate) use ode_state_fields;

/// Physical state. Load-bus frequencies are algebraic and not stored.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PlantState {
    pub theta: Vec<f64>,
    /// Frequency deviation on generator buses, in `generator_buses()` order.
    pub omega_gen: Vec<f64>,
    pub line_flow: Vec<f64>,
}

ode_state_fields!(PlantState {
    theta,
    omega_gen,
    line_flow
});

impl PlantState {
    pub fn zeros(net: &PowerNetwork) -> Self {
        PlantState {
            theta: vec![0.0; net.n_buses()],
            omega_gen: vec![0.0; net.generator_buses().len()],
            line_flow: vec![0.0; net.n_lines()],
        }
    }

    fn check(&self, net: &PowerNetwork) -> Result<()> {
        net.check_bus_len("theta", self.theta.len())?;
        net.check_line_len("line flow", self.line_flow.len())?;
        if self.omega_gen.len() != net.generator_buses().len() {
            return Err(Error::DimensionMismatch {
                what: "generator frequency",
                expected: net.generator_buses().len(),
                got: self.omega_gen.len(),
            });
        }
        Ok(())
    }
}

/// Bus imbalance `P_in - d - C P` (injection minus load minus net outflow).
pub(crate) fn net_injection(
    net: &PowerNetwork,
    d: &[f64],
    line_flow: &[f64],
    p_in: &[f64],
) -> Vec<f64> {
    let out = net.outflow_unchecked(line_flow);
    (0..net.n_buses())
        .map(|i| p_in[i] - d[i] - out[i])
        .collect()
}

/// Frequency on load buses from the algebraic balance `0 = P_in - D ω - d + inflow - outflow`.
pub fn load_bus_frequency(
    net: &PowerNetwork,
    d: &[f64],
    line_flow: &[f64],
    p_in: &[f64],
) -> Result<Vec<f64>> {
    net.check_bus_len("load vector", d.len())?;
    net.check_bus_len("injection", p_in.len())?;
    net.check_line_len("line flow", line_flow.len())?;
    let r = net_injection(net, d, line_flow, p_in);
    Ok(net
        .load_buses()
        .iter()
        .map(|&i| r[i] / net.damping()[i])
        .collect())
}

/// Full per-bus frequency: stored values on generators, algebraic values on loads.
pub fn bus_frequencies(
    net: &PowerNetwork,
    omega_gen: &[f64],
    d: &[f64],
    line_flow: &[f64],
    p_in: &[f64],
) -> Vec<f64> {
    let r = net_injection(net, d, line_flow, p_in);
    let mut omega = vec![0.0; net.n_buses()];
    for (k, &i) in net.generator_buses().iter().enumerate() {
        omega[i] = omega_gen[k];
    }
    for &i in net.load_buses() {
        omega[i] = r[i] / net.damping()[i];
    }
    omega
}

/// Time derivative of the plant state given load commands `d` and injection `p_in`.
pub fn plant_rhs(
    net: &PowerNetwork,
    state: &PlantState,
    d: &[f64],
    p_in: &[f64],
) -> Result<PlantState> {
    state.check(net)?;
    net.check_bus_len("load vector", d.len())?;
    net.check_bus_len("injection", p_in.len())?;
    Ok(plant_rhs_unchecked(net, state, d, p_in).0)
}

/// Derivative together with the full bus frequency vector it was computed from.
pub(crate) fn plant_rhs_unchecked(
    net: &PowerNetwork,
    state: &PlantState,
    d: &[f64],
    p_in: &[f64],
) -> (PlantState, Vec<f64>) {
    let r = net_injection(net, d, &state.line_flow, p_in);
    let omega = bus_frequencies(net, &state.omega_gen, d, &state.line_flow, p_in);
    let omega_gen_dot = net
        .generator_buses()
        .iter()
        .map(|&i| (r[i] - net.damping()[i] * omega[i]) / net.inertia()[i])
        .collect();
    let deriv = PlantState {
        theta: omega.clone(),
        omega_gen: omega_gen_dot,
        line_flow: net.flows_unchecked(&omega),
    };
    (deriv, omega)
}

/// One classical RK4 step. Returns the new state and the first-stage derivative at `(t, state)`.
pub fn rk4_step<S, F>(mut rhs: F, state: &S, t: f64, h: f64) -> Result<(S, S)>
where
    S: OdeState,
    F: FnMut(f64, &S) -> Result<S>,
{
    if !(h > 0.0) {
        return Err(Error::Validation("h must be positive".into()));
    }
    let k1 = rhs(t, state)?;
    let mut x = state.clone();
    x.scaled_add(0.5 * h, &k1);
    let k2 = rhs(t + 0.5 * h, &x)?;
    let mut x = state.clone();
    x.scaled_add(0.5 * h, &k2);
    let k3 = rhs(t + 0.5 * h, &x)?;
    let mut x = state.clone();
    x.scaled_add(h, &k3);
    let k4 = rhs(t + h, &x)?;
    let mut next = state.clone();
    next.scaled_add(h / 6.0, &k1);
    next.scaled_add(h / 3.0, &k2);
    next.scaled_add(h / 3.0, &k3);
    next.scaled_add(h / 6.0, &k4);
    if !next.all_finite() || !k1.all_finite() {
        return Err(Error::NonFiniteState { t: t + h });
    }
    Ok((next, k1))
}
