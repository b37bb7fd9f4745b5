//! Reference optima for desk-scale cases: exact two-bus solution and brute-force grid search.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::costs::CostModel;
use crate::diagnostics::{kkt_residual, KktOptions, KktResidual, PrimalDualPoint};
use crate::error::{Error, Result};
use crate::network::PowerNetwork;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Analytic,
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceOptimum {
    pub d_star: Vec<f64>,
    pub omega_star: Vec<f64>,
    pub cost_star: f64,
    /// `(λ*, μ*)` per bus.
    pub multipliers: Option<(Vec<f64>, Vec<f64>)>,
    /// `(ν⁻*, ν⁺*)` per line, when recovered.
    pub line_multipliers: Option<(Vec<f64>, Vec<f64>)>,
    pub method: Method,
    pub resolution: Option<f64>,
}

/// Frozen oracle output as stored next to the tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleFixture {
    pub case: String,
    pub d_star: Vec<f64>,
    pub cost: f64,
    pub method: Method,
    pub resolution: f64,
}

impl ReferenceOptimum {
    pub fn to_fixture(&self, case: &str) -> OracleFixture {
        OracleFixture {
            case: case.to_string(),
            d_star: self.d_star.clone(),
            cost: self.cost_star,
            method: self.method,
            resolution: self.resolution.unwrap_or(0.0),
        }
    }
}

fn intersect(a: (f64, f64), b: (f64, f64)) -> Option<(f64, f64)> {
    let lo = a.0.max(b.0);
    let hi = a.1.min(b.1);
    (lo <= hi + 1e-12).then_some((lo, hi.max(lo)))
}

fn representative(iv: (f64, f64)) -> f64 {
    match (iv.0.is_finite(), iv.1.is_finite()) {
        (true, true) => 0.5 * (iv.0 + iv.1),
        (true, false) => iv.0,
        (false, true) => iv.1,
        (false, false) => 0.0,
    }
}

/// Exact optimum of `min f1(d1) + f2(d2)` s.t. `d1 + d2 = ΣP_in` on a two-bus line.
///
/// The reduced objective is convex and piecewise quadratic in `d1`, with breakpoints at
/// the two l1 kinks. Each smooth piece is minimized in closed form and the best piece wins.
pub fn two_bus_analytic_optimum(
    net: &PowerNetwork,
    cost: &CostModel,
    p_in: &[f64],
) -> Result<ReferenceOptimum> {
    if net.n_buses() != 2 || net.n_lines() != 1 || cost.controllable_buses().len() != 2 {
        return Err(Error::NotTwoBus);
    }
    net.check_bus_len("injection", p_in.len())?;
    let (b1, b2) = (cost.bus(0).unwrap(), cost.bus(1).unwrap());
    let s = p_in[0] + p_in[1];
    let lo = b1.dmin.max(s - b2.dmax);
    let hi = b1.dmax.min(s - b2.dmin);
    if lo > hi {
        return Err(Error::Infeasible);
    }

    let mut points = vec![lo, hi];
    for kink in [-b1.c, s + b2.c] {
        if kink > lo && kink < hi {
            points.push(kink);
        }
    }
    points.sort_by(f64::total_cmp);
    let mut candidates = points.clone();
    for w in points.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        let s1 = (mid + b1.c).signum();
        let s2 = (s - mid + b2.c).signum();
        let x0 = (2.0 * b2.a * s + b2.e + b2.b * s2 - b1.e - b1.b * s1) / (2.0 * (b1.a + b2.a));
        candidates.push(x0.clamp(w[0], w[1]));
    }
    let mut best: Option<(f64, f64)> = None;
    for x in candidates {
        let c = cost.eval_total_cost(&[x, s - x])?;
        let better = match best {
            None => true,
            Some((bx, bc)) => c < bc || (c == bc && x < bx),
        };
        if better {
            best = Some((x, c));
        }
    }
    let (x, cost_star) = best.ok_or(Error::Infeasible)?;
    // `+ 0.0` folds a negative zero into zero
    let d = vec![x + 0.0, s - x + 0.0];

    let line = &net.lines()[0];
    let sent = p_in[line.from] - d[line.from];
    if sent < line.p_min || sent > line.p_max {
        return Err(Error::BindingLimit);
    }

    let i1 = cost
        .subdifferential(0, d[0], 0.0)
        .ok_or(Error::Infeasible)?;
    let i2 = cost
        .subdifferential(1, d[1], 0.0)
        .ok_or(Error::Infeasible)?;
    let mu = intersect(i1, i2).map_or(0.0, representative);
    Ok(ReferenceOptimum {
        d_star: d,
        omega_star: vec![0.0; 2],
        cost_star,
        multipliers: Some((vec![0.0; 2], vec![mu; 2])),
        line_multipliers: Some((vec![0.0], vec![0.0])),
        method: Method::Analytic,
        resolution: None,
    })
}

/// Linear map from load commands to virtual-angle flows, `flows = base - Σ_j d_j G_j`.
struct FlowMap {
    base: Vec<f64>,
    columns: Vec<Vec<f64>>,
}

impl FlowMap {
    fn new(net: &PowerNetwork, p_in: &[f64], buses: &[usize]) -> Result<Self> {
        let base = net.flows_unchecked(&net.grounded_angles(p_in)?);
        let mut columns = Vec::with_capacity(buses.len());
        for &j in buses {
            let mut e = vec![0.0; net.n_buses()];
            e[j] = 1.0;
            columns.push(net.flows_unchecked(&net.grounded_angles(&e)?));
        }
        Ok(FlowMap { base, columns })
    }

    fn flows(&self, d: &[f64]) -> Vec<f64> {
        let mut f = self.base.clone();
        for (col, &dj) in self.columns.iter().zip(d) {
            for (fi, gi) in f.iter_mut().zip(col) {
                *fi -= dj * gi;
            }
        }
        f
    }

    fn gain(&self) -> f64 {
        self.columns
            .iter()
            .flatten()
            .fold(0.0, |m: f64, v| m.max(v.abs()))
    }
}

fn axis(cost: &CostModel, bus: usize, resolution: f64) -> Vec<f64> {
    let (lo, hi) = cost.bounds(bus);
    let steps = ((hi - lo) / resolution + 1e-9).floor() as usize;
    let mut v: Vec<f64> = (0..=steps).map(|j| lo + j as f64 * resolution).collect();
    v.push(hi);
    if let Some(b) = cost.bus(bus) {
        if -b.c > lo && -b.c < hi {
            v.push(-b.c);
        }
    }
    v.sort_by(f64::total_cmp);
    v.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    v
}

/// Exhaustive search over the balanced slice of the box grid.
///
/// The last controllable bus absorbs the balance. Grids are anchored at each lower bound
/// and include the upper bound and the l1 kink. With `thermal_limits`, points whose
/// virtual-angle flows leave the line limits are discarded. Ties go to the
/// lexicographically smallest `d`.
pub fn grid_search_optimum(
    net: &PowerNetwork,
    cost: &CostModel,
    p_in: &[f64],
    resolution: f64,
    thermal_limits: bool,
) -> Result<ReferenceOptimum> {
    net.check_bus_len("injection", p_in.len())?;
    if !(resolution > 0.0) {
        return Err(Error::Validation("resolution must be positive".into()));
    }
    let ctrl = cost.controllable_buses();
    let m = ctrl.len();
    if m > 3 {
        return Err(Error::TooLarge { n: m });
    }
    if m == 0 {
        return Err(Error::Infeasible);
    }
    let n = net.n_buses();
    let total: f64 = p_in.iter().sum();
    let fmap = FlowMap::new(net, p_in, &ctrl)?;
    let axes: Vec<Vec<f64>> = ctrl[..m - 1]
        .iter()
        .map(|&b| axis(cost, b, resolution))
        .collect();
    let last = ctrl[m - 1];
    let (last_lo, last_hi) = cost.bounds(last);

    let mut idx = vec![0usize; m - 1];
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut dc = vec![0.0; m];
    loop {
        for (k, &i) in idx.iter().enumerate() {
            dc[k] = axes[k][i];
        }
        let mut x = total - dc[..m - 1].iter().sum::<f64>();
        if (x - last_lo).abs() < 1e-12 {
            x = last_lo;
        }
        if (x - last_hi).abs() < 1e-12 {
            x = last_hi;
        }
        dc[m - 1] = x;
        if x >= last_lo && x <= last_hi {
            let feasible = !thermal_limits
                || fmap
                    .flows(&dc)
                    .iter()
                    .zip(net.lines())
                    .all(|(f, l)| *f >= l.p_min - 1e-12 && *f <= l.p_max + 1e-12);
            if feasible {
                let mut d = vec![0.0; n];
                for (k, &b) in ctrl.iter().enumerate() {
                    d[b] = dc[k];
                }
                let c = cost.eval_total_cost(&d)?;
                if best.as_ref().is_none_or(|(_, bc)| c < *bc) {
                    best = Some((d, c));
                }
            }
        }
        // odometer over the free coordinates, last axis fastest
        let mut k = m - 1;
        loop {
            if k == 0 {
                let (d_star, cost_star) = best.ok_or(Error::Infeasible)?;
                let (mu, nu) = recover_multipliers(
                    net,
                    cost,
                    &d_star,
                    &fmap.flows(&ctrl.iter().map(|&b| d_star[b]).collect::<Vec<_>>()),
                    resolution,
                    resolution * fmap.gain() * 2.0 + 1e-9,
                    thermal_limits,
                )?;
                return Ok(ReferenceOptimum {
                    d_star,
                    omega_star: vec![0.0; n],
                    cost_star,
                    multipliers: Some((vec![0.0; n], mu)),
                    line_multipliers: Some(nu),
                    method: Method::Grid,
                    resolution: Some(resolution),
                });
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < axes[k].len() {
                break;
            }
            idx[k] = 0;
        }
    }
}

type LineMultipliers = (Vec<f64>, Vec<f64>);

/// Least-squares multipliers consistent with the angle stationarity condition and with
/// `μ_i = f_i'(d_i)` at buses where `f_i` is differentiable.
fn recover_multipliers(
    net: &PowerNetwork,
    cost: &CostModel,
    d: &[f64],
    flows: &[f64],
    resolution: f64,
    active_tol: f64,
    thermal_limits: bool,
) -> Result<(Vec<f64>, LineMultipliers)> {
    let n = net.n_buses();
    let l = net.n_lines();
    let lower: Vec<usize> = (0..l)
        .filter(|&e| thermal_limits && flows[e] - net.lines()[e].p_min <= active_tol)
        .collect();
    let upper: Vec<usize> = (0..l)
        .filter(|&e| thermal_limits && net.lines()[e].p_max - flows[e] <= active_tol)
        .collect();
    let cols = n + lower.len() + upper.len();

    let smooth: Vec<usize> = cost
        .controllable_buses()
        .into_iter()
        .filter(|&i| {
            let b = cost.bus(i).unwrap();
            let off_kink = b.b == 0.0 || (d[i] + b.c).abs() > resolution;
            off_kink && d[i] - b.dmin > resolution && b.dmax - d[i] > resolution
        })
        .collect();
    let rows = n + smooth.len();
    let lap = net.weighted_laplacian();
    let mut a = DMatrix::<f64>::zeros(rows, cols);
    let mut rhs = DVector::<f64>::zeros(rows);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = lap[(i, j)];
        }
    }
    for (k, &e) in lower.iter().enumerate() {
        let line = &net.lines()[e];
        a[(line.from, n + k)] += line.susceptance;
        a[(line.to, n + k)] -= line.susceptance;
    }
    for (k, &e) in upper.iter().enumerate() {
        let line = &net.lines()[e];
        a[(line.from, n + lower.len() + k)] -= line.susceptance;
        a[(line.to, n + lower.len() + k)] += line.susceptance;
    }
    for (r, &i) in smooth.iter().enumerate() {
        a[(n + r, i)] = 1.0;
        rhs[n + r] = cost.grad_f0_bus(i, d[i]) + cost.l1_subgradient_selection(i, d[i]);
    }
    let x = a
        .svd(true, true)
        .solve(&rhs, 1e-12)
        .map_err(|e| Error::Validation(format!("multiplier recovery failed: {e}")))?;
    let mu = x.rows(0, n).iter().copied().collect();
    let mut nu_minus = vec![0.0; l];
    let mut nu_plus = vec![0.0; l];
    for (k, &e) in lower.iter().enumerate() {
        nu_minus[e] = x[n + k].max(0.0);
    }
    for (k, &e) in upper.iter().enumerate() {
        nu_plus[e] = x[n + lower.len() + k].max(0.0);
    }
    Ok((mu, (nu_minus, nu_plus)))
}

/// The oracle optimum as a full primal-dual point (virtual angles from the DC flow).
pub fn optimum_point(
    net: &PowerNetwork,
    p_in: &[f64],
    opt: &ReferenceOptimum,
) -> Result<PrimalDualPoint> {
    let n = net.n_buses();
    let r: Vec<f64> = p_in.iter().zip(&opt.d_star).map(|(p, d)| p - d).collect();
    let theta = net.grounded_angles(&r)?;
    let flows = net.line_flows_from_angles(&theta)?;
    let (lambda, mu) = opt
        .multipliers
        .clone()
        .unwrap_or((vec![0.0; n], vec![0.0; n]));
    let (nu_minus, nu_plus) = opt
        .line_multipliers
        .clone()
        .unwrap_or((vec![0.0; net.n_lines()], vec![0.0; net.n_lines()]));
    Ok(PrimalDualPoint {
        eta: vec![0.0; n],
        d: opt.d_star.clone(),
        theta_hat: theta,
        omega: opt.omega_star.clone(),
        line_flow: flows,
        lambda,
        mu,
        nu_minus,
        nu_plus,
    })
}

/// KKT residual of an oracle optimum, with the kink window widened to the grid resolution.
pub fn oracle_kkt(
    net: &PowerNetwork,
    cost: &CostModel,
    p_in: &[f64],
    opt: &ReferenceOptimum,
    thermal_limits: bool,
) -> Result<KktResidual> {
    let point = optimum_point(net, p_in, opt)?;
    let opts = KktOptions {
        thermal_limits,
        kink_tolerance: opt.resolution.unwrap_or(0.0).max(1e-12),
    };
    kkt_residual(net, cost, p_in, &point, &opts)
}
