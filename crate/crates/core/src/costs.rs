//! Per-bus cost `f_i = f0 + f1 + f2`: smooth quadratic, box indicator and shifted weighted l1.
//!
//! The global scale `k` multiplies `f0` and `f2`. The box is scale-invariant.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusCost {
    pub a: f64,
    #[serde(default)]
    pub e: f64,
    pub b: f64,
    pub c: f64,
    pub dmin: f64,
    pub dmax: f64,
}

impl BusCost {
    pub fn quadratic(a: f64, dmin: f64, dmax: f64) -> Self {
        BusCost {
            a,
            e: 0.0,
            b: 0.0,
            c: 0.0,
            dmin,
            dmax,
        }
    }
}

/// Costs for every bus. Buses without an entry are uncontrollable and pinned at `d = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostModel {
    buses: Vec<Option<BusCost>>,
    k: f64,
}

/// `sign(z) * max(|z| - tau, 0)`, returning exactly 0 on the tie `|z| = tau`.
pub fn soft_threshold(z: f64, tau: f64) -> f64 {
    if z > tau {
        z - tau
    } else if z < -tau {
        z + tau
    } else {
        0.0
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Returns a copy with `k` set to the smallest power of two giving `2 k min a > 1`.
///
/// The minimum runs over controllable buses. Scaling the objective by a positive
/// constant leaves its minimizers unchanged.
pub fn scale_for_strong_convexity(cost: &CostModel) -> Result<CostModel> {
    let mut min_a = f64::INFINITY;
    for (i, bc) in cost.buses.iter().enumerate() {
        if let Some(bc) = bc {
            if bc.a == 0.0 {
                return Err(Error::ZeroCurvature { bus: i + 1 });
            }
            min_a = min_a.min(bc.a);
        }
    }
    let mut k = 1.0;
    if min_a.is_finite() {
        while 2.0 * k * min_a <= 1.0 {
            k *= 2.0;
        }
    }
    Ok(CostModel {
        buses: cost.buses.clone(),
        k,
    })
}

impl CostModel {
    /// Builds an unscaled (`k = 1`) model over `n` buses from 0-based entries.
    pub fn new(n: usize, entries: Vec<(usize, BusCost)>) -> Result<Self> {
        let mut buses = vec![None; n];
        for (i, bc) in entries {
            if i >= n {
                return Err(Error::Validation(format!(
                    "cost entry for bus {} outside 1..={n}",
                    i + 1
                )));
            }
            let finite = [bc.a, bc.e, bc.b, bc.c, bc.dmin, bc.dmax]
                .iter()
                .all(|v| v.is_finite());
            if !finite {
                return Err(Error::Validation(format!(
                    "non-finite cost coefficient at bus {}",
                    i + 1
                )));
            }
            if bc.a < 0.0 || bc.b < 0.0 {
                return Err(Error::Validation(format!(
                    "cost coefficients a and b must be nonnegative at bus {}",
                    i + 1
                )));
            }
            if !(bc.dmin < bc.dmax) {
                return Err(Error::Validation(format!(
                    "cost box at bus {} needs dmin < dmax",
                    i + 1
                )));
            }
            if buses[i].replace(bc).is_some() {
                return Err(Error::Validation(format!(
                    "duplicate cost entry for bus {}",
                    i + 1
                )));
            }
        }
        Ok(CostModel { buses, k: 1.0 })
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn bus(&self, i: usize) -> Option<&BusCost> {
        self.buses[i].as_ref()
    }

    pub fn is_controllable(&self, i: usize) -> bool {
        self.buses[i].is_some()
    }

    pub fn controllable_buses(&self) -> Vec<usize> {
        (0..self.buses.len())
            .filter(|&i| self.buses[i].is_some())
            .collect()
    }

    /// Box `[dmin, dmax]`; `[0, 0]` on uncontrollable buses.
    pub fn bounds(&self, i: usize) -> (f64, f64) {
        self.buses[i]
            .as_ref()
            .map_or((0.0, 0.0), |b| (b.dmin, b.dmax))
    }

    fn check(&self, got: usize) -> Result<()> {
        if got == self.buses.len() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                what: "load vector",
                expected: self.buses.len(),
                got,
            })
        }
    }

    pub fn grad_f0_bus(&self, i: usize, d: f64) -> f64 {
        self.buses[i]
            .as_ref()
            .map_or(0.0, |b| self.k * (2.0 * b.a * d + b.e))
    }

    /// Gradient of the smooth part, `k (2 a d + e)` per bus.
    pub fn grad_f0(&self, d: &[f64]) -> Result<Vec<f64>> {
        self.check(d.len())?;
        Ok((0..d.len()).map(|i| self.grad_f0_bus(i, d[i])).collect())
    }

    /// Projection onto the bus box.
    pub fn prox_box(&self, i: usize, y: f64) -> f64 {
        let (lo, hi) = self.bounds(i);
        y.clamp(lo, hi)
    }

    /// `argmin_x k b |x + c| + (x - y)² / 2`. Identity on uncontrollable buses.
    pub fn prox_l1_shifted(&self, i: usize, y: f64) -> f64 {
        match &self.buses[i] {
            Some(b) => soft_threshold(y + b.c, self.k * b.b) - b.c,
            None => y,
        }
    }

    /// Deterministic element of `∂f2` at `d`: `k b sign(d + c)` with `sign(0) = 0`.
    pub fn l1_subgradient_selection(&self, i: usize, d: f64) -> f64 {
        self.buses[i]
            .as_ref()
            .map_or(0.0, |b| self.k * b.b * sign(d + b.c))
    }

    /// Smooth part `Σ k (a d² + e d)` without feasibility checks.
    pub fn smooth_cost(&self, d: &[f64]) -> Result<f64> {
        self.check(d.len())?;
        Ok(self
            .buses
            .iter()
            .zip(d)
            .map(|(b, &x)| b.as_ref().map_or(0.0, |b| self.k * (b.a * x * x + b.e * x)))
            .sum())
    }

    /// Cost-minimizing load of bus `i` at marginal price `mu`: the box-clamped minimizer of
    /// `f_i(d) - mu d`. Nondecreasing and continuous in `mu`.
    pub fn demand_at_price(&self, i: usize, mu: f64) -> f64 {
        let Some(b) = &self.buses[i] else {
            return 0.0;
        };
        let (k, curv) = (self.k, 2.0 * self.k * b.a);
        let g = mu - k * b.e;
        let kink = -b.c;
        let d = if g - k * b.b > curv * kink {
            (g - k * b.b) / curv
        } else if g + k * b.b < curv * kink {
            (g + k * b.b) / curv
        } else {
            kink
        };
        d.clamp(b.dmin, b.dmax)
    }

    /// Least-cost loads with `Σ d = total`, ignoring the network, and the common price.
    ///
    /// Bisection on the price; every controllable bus needs `a > 0`.
    pub fn dispatch(&self, total: f64) -> Result<(Vec<f64>, f64)> {
        let ctrl = self.controllable_buses();
        let (lo_sum, hi_sum) = ctrl.iter().fold((0.0, 0.0), |(l, h), &i| {
            let (a, b) = self.bounds(i);
            (l + a, h + b)
        });
        if ctrl.is_empty() || total < lo_sum || total > hi_sum {
            return Err(Error::Infeasible);
        }
        for &i in &ctrl {
            let b = self.buses[i].as_ref().unwrap();
            if b.a <= 0.0 {
                return Err(Error::ZeroCurvature { bus: i + 1 });
            }
        }
        let price_range = |d: f64, i: usize| {
            let b = self.buses[i].as_ref().unwrap();
            self.grad_f0_bus(i, d).abs() + self.k * b.b + 1.0
        };
        let span = ctrl
            .iter()
            .map(|&i| {
                let (a, b) = self.bounds(i);
                price_range(a, i).max(price_range(b, i))
            })
            .fold(0.0, f64::max);
        let (mut lo, mut hi) = (-span, span);
        let supply = |mu: f64| {
            ctrl.iter()
                .map(|&i| self.demand_at_price(i, mu))
                .sum::<f64>()
        };
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid == lo || mid == hi {
                break;
            }
            if supply(mid) < total {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mu = 0.5 * (lo + hi);
        let d = (0..self.buses.len())
            .map(|i| self.demand_at_price(i, mu))
            .collect();
        Ok((d, mu))
    }

    /// Total cost, or `f64::INFINITY` when some `d_i` leaves its box.
    pub fn eval_total_cost(&self, d: &[f64]) -> Result<f64> {
        self.check(d.len())?;
        let mut total = 0.0;
        for (i, &x) in d.iter().enumerate() {
            let (lo, hi) = self.bounds(i);
            if x < lo || x > hi {
                return Ok(f64::INFINITY);
            }
            if let Some(b) = &self.buses[i] {
                total += self.k * (b.a * x * x + b.e * x + b.b * (x + b.c).abs());
            }
        }
        Ok(total)
    }

    /// Hull of `∂f_i` over `[d - tol, d + tol]`, or `None` if that window misses the box.
    ///
    /// Unbounded ends are infinite. Uncontrollable buses have the whole real line.
    pub fn subdifferential(&self, i: usize, d: f64, tol: f64) -> Option<(f64, f64)> {
        let Some(b) = &self.buses[i] else {
            return Some((f64::NEG_INFINITY, f64::INFINITY));
        };
        let (left, right) = (d - tol, d + tol);
        if right < b.dmin || left > b.dmax {
            return None;
        }
        let lo = if left <= b.dmin {
            f64::NEG_INFINITY
        } else {
            let s = if left + b.c > 0.0 { 1.0 } else { -1.0 };
            self.k * (2.0 * b.a * left + b.e + b.b * s)
        };
        let hi = if right >= b.dmax {
            f64::INFINITY
        } else {
            let s = if right + b.c >= 0.0 { 1.0 } else { -1.0 };
            self.k * (2.0 * b.a * right + b.e + b.b * s)
        };
        Some((lo, hi))
    }
}
