//! Case files, bundled fixtures, injection presets and measurement noise.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controller::{DppdConfig, Mode, Rate, StepSizes};
use crate::costs::{scale_for_strong_convexity, BusCost, CostModel};
use crate::error::{Error, Result};
use crate::injection::{InjectionProfile, SinusoidWindow, StepEvent};
use crate::network::{build_network, BusKind, BusSpec, LineSpec, PowerNetwork};
use crate::simulate::{DampingSide, SimOptions, Uncertainty};

// ---------------------------------------------------------------------------
// File schema. Every struct rejects unknown keys.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<BaseSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
    pub buses: Vec<BusEntry>,
    pub lines: Vec<LineEntry>,
    #[serde(default)]
    pub costs: Vec<CostEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controller: Option<ControllerSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioSpec>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub scenarios: BTreeMap<String, ScenarioSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slater: Option<SlaterPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mva: Option<f64>,
    #[serde(default = "default_nominal_hz")]
    pub nominal_hz: f64,
    #[serde(default = "default_true")]
    pub per_unit_frequency: bool,
}

fn default_nominal_hz() -> f64 {
    60.0
}

fn default_true() -> bool {
    true
}

impl Default for BaseSpec {
    fn default() -> Self {
        BaseSpec {
            mva: None,
            nominal_hz: 60.0,
            per_unit_frequency: true,
        }
    }
}

/// Where randomized fixture values came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub generator: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusEntry {
    pub id: usize,
    #[serde(rename = "type")]
    pub kind: BusKind,
    #[serde(rename = "M", default, skip_serializing_if = "Option::is_none")]
    pub m: Option<f64>,
    #[serde(rename = "D")]
    pub d: f64,
    #[serde(rename = "Pin")]
    pub p_in: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineEntry {
    pub from: usize,
    pub to: usize,
    #[serde(rename = "B")]
    pub b: f64,
    #[serde(rename = "Pmin")]
    pub p_min: f64,
    #[serde(rename = "Pmax")]
    pub p_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostEntry {
    pub bus: usize,
    pub a: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub e: f64,
    pub b: f64,
    pub c: f64,
    pub dmin: f64,
    pub dmax: f64,
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

/// A stepsize given either as a number or as `"physical"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RateSpec {
    Value(f64),
    Named(RateName),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RateName {
    Physical,
}

impl From<&RateSpec> for Rate {
    fn from(r: &RateSpec) -> Self {
        match r {
            RateSpec::Value(v) => Rate::Fixed(*v),
            RateSpec::Named(RateName::Physical) => Rate::Physical,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RhoSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_hat: Option<f64>,
    #[serde(rename = "P", default, skip_serializing_if = "Option::is_none")]
    pub line_flow: Option<RateSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<RateSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu_minus: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu_plus: Option<f64>,
}

impl RhoSpec {
    pub fn apply(&self, base: StepSizes) -> StepSizes {
        StepSizes {
            eta: self.eta.unwrap_or(base.eta),
            d: self.d.unwrap_or(base.d),
            theta_hat: self.theta_hat.unwrap_or(base.theta_hat),
            line_flow: self.line_flow.as_ref().map_or(base.line_flow, Rate::from),
            lambda: self.lambda.as_ref().map_or(base.lambda, Rate::from),
            mu: self.mu.unwrap_or(base.mu),
            nu_minus: self.nu_minus.unwrap_or(base.nu_minus),
            nu_plus: self.nu_plus.unwrap_or(base.nu_plus),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thermal_limits: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<RhoSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum EventSpec {
    /// Sets `bus` (1-based) to `value` at time `t`; a missing value restores the base.
    Step {
        t: f64,
        bus: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        value: Option<f64>,
    },
    Sinusoid {
        buses: Vec<usize>,
        amplitude: f64,
        period: f64,
        start: f64,
        end: f64,
    },
}

/// Plant starting point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialCondition {
    /// Uncontrolled synchronous operating point of the `t = 0` injection.
    #[default]
    Steady,
    /// All angles, frequencies and flows zero.
    Flat,
    /// Loads and multipliers at the optimum of the base injection.
    Equilibrium,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    #[serde(rename = "T", default, skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_every: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<EventSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k1_side: Option<DampingSide>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialCondition>,
}

/// Strictly feasible point shipped with a fixture: interior loads and angles with
/// strict line-limit slack for the base injection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlaterPoint {
    pub d: Vec<f64>,
    pub theta: Vec<f64>,
}

// ---------------------------------------------------------------------------
// Validated in-memory case.

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub injection: InjectionProfile,
    pub options: SimOptions,
    pub uncertainty: Uncertainty,
    pub initial: InitialCondition,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Case {
    pub name: String,
    pub net: PowerNetwork,
    pub cost: CostModel,
    pub cfg: DppdConfig,
    pub baseline: bool,
    pub base: BaseSpec,
    pub scenario: Scenario,
    pub slater: Option<SlaterPoint>,
    pub file: CaseFile,
}

/// Names of the fixtures compiled into the library.
pub const BUNDLED_CASES: &[&str] = &[
    "two_bus_analytic",
    "two_bus_l1",
    "triangle",
    "four_bus_line_limited",
    "ieee39_approx",
];

pub fn bundled_case_json(name: &str) -> Option<&'static str> {
    Some(match name {
        "two_bus_analytic" => include_str!("../cases/two_bus_analytic.json"),
        "two_bus_l1" => include_str!("../cases/two_bus_l1.json"),
        "triangle" => include_str!("../cases/triangle.json"),
        "four_bus_line_limited" => include_str!("../cases/four_bus_line_limited.json"),
        "ieee39_approx" => include_str!("../cases/ieee39_approx.json"),
        _ => return None,
    })
}

fn schema_error(pointer: String, message: String) -> Error {
    Error::Schema { pointer, message }
}

/// Parses a case document, reporting schema problems with a JSON-pointer path.
pub fn parse_case_file(json: &str) -> Result<CaseFile> {
    let de = &mut serde_json::Deserializer::from_str(json);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let mut pointer = String::new();
        for seg in e.path().iter() {
            use serde_path_to_error::Segment;
            match seg {
                Segment::Seq { index } => pointer.push_str(&format!("/{index}")),
                Segment::Map { key } => pointer.push_str(&format!("/{key}")),
                Segment::Enum { variant } => pointer.push_str(&format!("/{variant}")),
                Segment::Unknown => {}
            }
        }
        let message = e.inner().to_string();
        if let Some(field) = message
            .strip_prefix("missing field `")
            .and_then(|rest| rest.split('`').next())
        {
            pointer.push('/');
            pointer.push_str(field);
        }
        if pointer.is_empty() {
            pointer.push('/');
        }
        schema_error(pointer, message)
    })
}

/// Loads a bundled fixture by name or a case file from disk.
pub fn load_case(name_or_path: &str) -> Result<Case> {
    if let Some(json) = bundled_case_json(name_or_path) {
        return case_from_str(name_or_path, json);
    }
    let path = Path::new(name_or_path);
    let json = std::fs::read_to_string(path).map_err(|e| {
        Error::Validation(format!(
            "{name_or_path} is neither a bundled case nor a readable file: {e}"
        ))
    })?;
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("case")
        .to_string();
    case_from_str(&stem, &json)
}

pub fn case_from_str(default_name: &str, json: &str) -> Result<Case> {
    let file = parse_case_file(json)?;
    case_from_file(default_name, file)
}

pub fn case_from_file(default_name: &str, file: CaseFile) -> Result<Case> {
    let n = file.buses.len();
    let buses: Vec<BusSpec> = file
        .buses
        .iter()
        .map(|b| BusSpec {
            id: b.id,
            kind: b.kind,
            inertia: b.m,
            damping: b.d,
        })
        .collect();
    let lines: Vec<LineSpec> = file
        .lines
        .iter()
        .map(|l| LineSpec {
            from: l.from,
            to: l.to,
            susceptance: l.b,
            p_min: l.p_min,
            p_max: l.p_max,
        })
        .collect();
    let net = build_network(&buses, &lines)?;

    let mut entries = Vec::with_capacity(file.costs.len());
    for c in &file.costs {
        if c.bus == 0 || c.bus > n {
            return Err(Error::Validation(format!(
                "cost entry for bus {} outside 1..={n}",
                c.bus
            )));
        }
        entries.push((
            c.bus - 1,
            BusCost {
                a: c.a,
                e: c.e,
                b: c.b,
                c: c.c,
                dmin: c.dmin,
                dmax: c.dmax,
            },
        ));
    }
    let cost = scale_for_strong_convexity(&CostModel::new(n, entries)?)?;

    let ctl = file.controller.clone().unwrap_or_default();
    let cfg = DppdConfig {
        kappa: ctl.kappa.unwrap_or(0.5),
        rho: ctl
            .rho
            .as_ref()
            .map_or(StepSizes::analysis(), |r| r.apply(StepSizes::analysis())),
        mode: ctl.mode.unwrap_or(Mode::ClosedLoop),
        thermal_limits: ctl.thermal_limits.unwrap_or(false),
    };
    cfg.validate()?;

    let mut base_injection = vec![0.0; n];
    for b in &file.buses {
        if !b.p_in.is_finite() {
            return Err(Error::Validation(format!("non-finite Pin at bus {}", b.id)));
        }
        base_injection[b.id - 1] = b.p_in;
    }
    let spec = file.scenario.clone().unwrap_or_default();
    let scenario = build_scenario("default", &base_injection, &spec)?;

    if let Some(s) = &file.slater {
        if s.d.len() != n || s.theta.len() != n {
            return Err(Error::Validation("slater point has wrong length".into()));
        }
    }

    Ok(Case {
        name: file
            .name
            .clone()
            .unwrap_or_else(|| default_name.to_string()),
        net,
        cost,
        cfg,
        baseline: ctl.baseline.unwrap_or(false),
        base: file.base.clone().unwrap_or_default(),
        scenario,
        slater: file.slater.clone(),
        file,
    })
}

fn bus_index(bus: usize, n: usize) -> Result<usize> {
    if bus == 0 || bus > n {
        Err(Error::Validation(format!(
            "scenario targets bus {bus} outside 1..={n}"
        )))
    } else {
        Ok(bus - 1)
    }
}

/// Builds a validated scenario from its file description.
pub fn build_scenario(name: &str, base: &[f64], spec: &ScenarioSpec) -> Result<Scenario> {
    let n = base.len();
    let mut steps = Vec::new();
    let mut profile = InjectionProfile::constant(base.to_vec());
    for ev in &spec.events {
        match ev {
            EventSpec::Step { t, bus, value } => steps.push(StepEvent {
                t: *t,
                bus: bus_index(*bus, n)?,
                value: *value,
            }),
            EventSpec::Sinusoid {
                buses,
                amplitude,
                period,
                start,
                end,
            } => {
                let buses = buses
                    .iter()
                    .map(|&b| bus_index(b, n))
                    .collect::<Result<Vec<_>>>()?;
                profile = profile.with_sinusoid(SinusoidWindow {
                    buses,
                    amplitude: *amplitude,
                    period: *period,
                    start: *start,
                    end: *end,
                })?;
            }
        }
    }
    profile = profile.with_steps(steps)?;

    let defaults = SimOptions::default();
    let options = SimOptions {
        h: spec.h.unwrap_or(defaults.h),
        t_end: spec.t_end.unwrap_or(defaults.t_end),
        sample_every: spec.sample_every.unwrap_or(defaults.sample_every),
    };
    options.validate()?;
    if let Some(k1) = spec.k1 {
        if !(k1 > 0.0 && k1.is_finite()) {
            return Err(Error::Validation("k1 must be positive".into()));
        }
    }
    let k2 = spec.k2.unwrap_or(0.0);
    if !(k2 >= 0.0 && k2.is_finite()) {
        return Err(Error::Validation("k2 must be nonnegative".into()));
    }
    Ok(Scenario {
        name: name.to_string(),
        injection: profile,
        options,
        uncertainty: Uncertainty {
            k1: spec.k1,
            side: spec.k1_side.unwrap_or_default(),
            k2,
        },
        initial: spec.initial.unwrap_or_default(),
    })
}

impl Case {
    /// Swaps in the named scenario from the case's `scenarios` map.
    pub fn select_scenario(&mut self, name: &str) -> Result<()> {
        let spec = self.file.scenarios.get(name).ok_or_else(|| {
            let known: Vec<&str> = self.file.scenarios.keys().map(String::as_str).collect();
            Error::Validation(format!(
                "unknown scenario {name:?}; case {} defines {:?}",
                self.name, known
            ))
        })?;
        self.scenario = build_scenario(name, self.scenario.injection.base(), spec)?;
        Ok(())
    }

    /// Checks the stored strictly feasible point: interior loads, balanced virtual angles and
    /// strict line slack.
    pub fn verify_slater(&self) -> Result<()> {
        let s = self
            .slater
            .as_ref()
            .ok_or_else(|| Error::Validation(format!("case {} has no slater point", self.name)))?;
        let n = self.net.n_buses();
        for i in 0..n {
            let (lo, hi) = self.cost.bounds(i);
            let interior = if self.cost.is_controllable(i) {
                s.d[i] > lo && s.d[i] < hi
            } else {
                s.d[i] == 0.0
            };
            if !interior {
                return Err(Error::Validation(format!(
                    "slater load at bus {} is not interior",
                    i + 1
                )));
            }
        }
        let base = self.scenario.injection.base();
        let lt = self.net.laplacian_apply_unchecked(&s.theta);
        for i in 0..n {
            if (base[i] - s.d[i] - lt[i]).abs() > 1e-9 {
                return Err(Error::Validation(format!(
                    "slater angles do not balance bus {}",
                    i + 1
                )));
            }
        }
        let flows = self.net.flows_unchecked(&s.theta);
        for (l, f) in self.net.lines().iter().zip(flows) {
            if !(f > l.p_min && f < l.p_max) {
                return Err(Error::Validation(format!(
                    "slater flow on line {} lacks strict slack",
                    l.label()
                )));
            }
        }
        Ok(())
    }
}

/// Adds `k2 sin(2πt)` to the frequency seen at controllable buses.
pub fn apply_measurement_noise(omega: &[f64], t: f64, k2: f64, controllable: &[usize]) -> Vec<f64> {
    let mut out = omega.to_vec();
    if k2 != 0.0 {
        let v = k2 * (2.0 * std::f64::consts::PI * t).sin();
        for &i in controllable {
            out[i] += v;
        }
    }
    out
}

/// Trip-and-restore events: `buses` (1-based) drop to zero at `t_off` and return at `t_on`.
pub fn crash_and_recover(buses: &[usize], t_off: f64, t_on: f64) -> Vec<EventSpec> {
    let mut ev: Vec<EventSpec> = buses
        .iter()
        .map(|&bus| EventSpec::Step {
            t: t_off,
            bus,
            value: Some(0.0),
        })
        .collect();
    ev.extend(buses.iter().map(|&bus| EventSpec::Step {
        t: t_on,
        bus,
        value: None,
    }));
    ev
}

/// `(1 + 0.4 sin(πt/3))` on `[5, 65)` for the given buses.
pub fn sinusoid_37_39(buses: &[usize]) -> EventSpec {
    EventSpec::Sinusoid {
        buses: buses.to_vec(),
        amplitude: 0.4,
        period: 6.0,
        start: 5.0,
        end: 65.0,
    }
}

// ---------------------------------------------------------------------------
// Approximate 39-bus fixture.

/// Branch list `(from, to, reactance)` of the standard 39-bus, 10-machine test system.
pub const IEEE39_BRANCHES: [(usize, usize, f64); 46] = [
    (1, 2, 0.0411),
    (1, 39, 0.025),
    (2, 3, 0.0151),
    (2, 25, 0.0086),
    (2, 30, 0.0181),
    (3, 4, 0.0213),
    (3, 18, 0.0133),
    (4, 5, 0.0128),
    (4, 14, 0.0129),
    (5, 6, 0.0026),
    (5, 8, 0.0112),
    (6, 7, 0.0092),
    (6, 11, 0.0082),
    (6, 31, 0.025),
    (7, 8, 0.0046),
    (8, 9, 0.0363),
    (9, 39, 0.025),
    (10, 11, 0.0043),
    (10, 13, 0.0043),
    (10, 32, 0.02),
    (12, 11, 0.0435),
    (12, 13, 0.0435),
    (13, 14, 0.0101),
    (14, 15, 0.0217),
    (15, 16, 0.0094),
    (16, 17, 0.0089),
    (16, 19, 0.0195),
    (16, 21, 0.0135),
    (16, 24, 0.0059),
    (17, 18, 0.0082),
    (17, 27, 0.0173),
    (19, 20, 0.0138),
    (19, 33, 0.0142),
    (20, 34, 0.018),
    (21, 22, 0.014),
    (22, 23, 0.0096),
    (22, 35, 0.0143),
    (23, 24, 0.035),
    (23, 36, 0.0272),
    (25, 26, 0.0323),
    (25, 37, 0.0232),
    (26, 27, 0.0147),
    (26, 28, 0.0474),
    (26, 29, 0.0625),
    (28, 29, 0.0151),
    (29, 38, 0.0156),
];

/// Seed recorded in the bundled 39-bus fixture.
pub const IEEE39_SEED: u64 = 20240917;

/// Reactance divisor and susceptance cap that keep RK4 at `h = 1e-3` well inside its
/// stability region while leaving the grid well connected.
const IEEE39_REACTANCE_SCALE: f64 = 5.0;
const IEEE39_B_CAP: f64 = 6.0;
const IEEE39_TOTAL_LOAD: f64 = 6.0;
const IEEE39_GEN_SHARES: [f64; 10] = [0.6, 0.65, 0.65, 0.63, 0.51, 0.65, 0.56, 0.54, 0.83, 1.0];

/// Rebuilds the approximate 39-bus case from `seed`.
///
/// Buses 30-39 are generators (M = 8, D = 1); every other bus is a load with D = 1.
/// Buses 12-20 carry controllable loads with `|d| <= 1.5`, `c_i = 0.15 j` for the j-th
/// controllable bus, and `a, b` drawn uniformly from the published ranges.
pub fn ieee39_case_file(seed: u64) -> CaseFile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut costs = Vec::new();
    for (j, bus) in (12..=20).enumerate() {
        let (a, b) = if bus <= 17 {
            (rng.gen_range(0.5..2.5), rng.gen_range(1.0..1.5))
        } else {
            (rng.gen_range(2.5..3.0), rng.gen_range(1.5..2.0))
        };
        costs.push(CostEntry {
            bus,
            a,
            e: 0.0,
            b,
            c: 0.15 * (j + 1) as f64,
            dmin: -1.5,
            dmax: 1.5,
        });
    }
    let raw: Vec<f64> = (0..29).map(|_| rng.gen_range(0.1..0.3)).collect();
    let raw_sum: f64 = raw.iter().sum();
    let share_sum: f64 = IEEE39_GEN_SHARES.iter().sum();

    let buses = (1..=39)
        .map(|id| {
            if id >= 30 {
                BusEntry {
                    id,
                    kind: BusKind::Gen,
                    m: Some(8.0),
                    d: 1.0,
                    p_in: IEEE39_TOTAL_LOAD * IEEE39_GEN_SHARES[id - 30] / share_sum,
                }
            } else {
                BusEntry {
                    id,
                    kind: BusKind::Load,
                    m: None,
                    d: 1.0,
                    p_in: -IEEE39_TOTAL_LOAD * raw[id - 1] / raw_sum,
                }
            }
        })
        .collect();
    let lines = IEEE39_BRANCHES
        .iter()
        .map(|&(from, to, x)| LineEntry {
            from,
            to,
            b: (1.0 / (x * IEEE39_REACTANCE_SCALE)).min(IEEE39_B_CAP),
            p_min: -10.0,
            p_max: 10.0,
        })
        .collect();

    let step = ScenarioSpec {
        t_end: Some(60.0),
        sample_every: Some(0.05),
        events: crash_and_recover(&[37, 39], 5.0, 65.0),
        initial: Some(InitialCondition::Equilibrium),
        ..ScenarioSpec::default()
    };
    let mut scenarios = BTreeMap::new();
    scenarios.insert("step37_39".to_string(), step.clone());
    scenarios.insert(
        "sin37_39".to_string(),
        ScenarioSpec {
            t_end: Some(80.0),
            sample_every: Some(0.05),
            events: vec![sinusoid_37_39(&[37, 39])],
            initial: Some(InitialCondition::Equilibrium),
            ..ScenarioSpec::default()
        },
    );
    scenarios.insert(
        "sin37_39_imbalanced".to_string(),
        ScenarioSpec {
            t_end: Some(80.0),
            sample_every: Some(0.05),
            events: vec![
                sinusoid_37_39(&[37, 39]),
                EventSpec::Step {
                    t: 0.0,
                    bus: 30,
                    value: Some(0.0),
                },
            ],
            initial: Some(InitialCondition::Equilibrium),
            ..ScenarioSpec::default()
        },
    );

    let mut file = CaseFile {
        name: Some("ieee39_approx".into()),
        base: Some(BaseSpec {
            mva: Some(100.0),
            nominal_hz: 60.0,
            per_unit_frequency: true,
        }),
        provenance: Some(Provenance {
            generator: "ieee39_case_file".into(),
            seed,
        }),
        buses,
        lines,
        costs,
        controller: Some(ControllerSpec {
            kappa: Some(0.5),
            mode: Some(Mode::ClosedLoop),
            thermal_limits: Some(false),
            rho: Some(RhoSpec {
                mu: Some(2.0),
                ..RhoSpec::default()
            }),
            baseline: None,
        }),
        scenario: Some(step),
        scenarios,
        slater: None,
    };
    file.slater = base_flow_slater_point(&file);
    file
}

/// Base imbalance shared evenly by the controllable loads, with the DC-flow angles of the
/// remaining injection, if that point is strictly feasible.
pub fn base_flow_slater_point(file: &CaseFile) -> Option<SlaterPoint> {
    let case = case_from_file(
        "probe",
        CaseFile {
            slater: None,
            ..file.clone()
        },
    )
    .ok()?;
    let base = case.scenario.injection.base();
    let ctrl = case.cost.controllable_buses();
    if ctrl.is_empty() {
        return None;
    }
    let share = base.iter().sum::<f64>() / ctrl.len() as f64;
    let mut d = vec![0.0; case.net.n_buses()];
    for &i in &ctrl {
        d[i] = share;
    }
    let r: Vec<f64> = base.iter().zip(&d).map(|(p, x)| p - x).collect();
    let theta = case.net.grounded_angles(&r).ok()?;
    let point = SlaterPoint { d, theta };
    let probe = Case {
        slater: Some(point.clone()),
        ..case
    };
    probe.verify_slater().ok().map(|_| point)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_examples() {
        let w = [0.0, 0.0, 0.0];
        assert_eq!(apply_measurement_noise(&w, 0.25, 0.0, &[1]), w.to_vec());
        let noisy = apply_measurement_noise(&w, 0.25, 0.5, &[1, 2]);
        assert_eq!(noisy[0], 0.0);
        assert!((noisy[1] - 0.5).abs() < 1e-15);
        assert!((noisy[2] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn crash_preset() {
        let spec = ScenarioSpec {
            events: crash_and_recover(&[2], 5.0, 65.0),
            ..ScenarioSpec::default()
        };
        let s = build_scenario("x", &[0.5, 0.25], &spec).unwrap();
        assert_eq!(s.injection.eval(30.0), vec![0.5, 0.0]);
        assert_eq!(s.injection.eval(70.0), vec![0.5, 0.25]);
    }

    #[test]
    fn missing_lines_reports_pointer() {
        let err = parse_case_file(r#"{"buses":[]}"#).unwrap_err();
        match err {
            Error::Schema { pointer, .. } => assert_eq!(pointer, "/lines"),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn unknown_key_rejected_with_path() {
        let err = parse_case_file(
            r#"{"buses":[{"id":1,"type":"gen","M":1,"D":1,"Pin":0,"Q":3}],"lines":[]}"#,
        )
        .unwrap_err();
        match err {
            Error::Schema { pointer, message } => {
                assert_eq!(pointer, "/buses/0/Q");
                assert!(message.contains("Q"));
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn rate_spec_parses_both_forms() {
        let r: RhoSpec = serde_json::from_str(r#"{"P":"physical","lambda":0.25}"#).unwrap();
        let s = r.apply(StepSizes::analysis());
        assert_eq!(s.line_flow, Rate::Physical);
        assert_eq!(s.lambda, Rate::Fixed(0.25));
    }
}
