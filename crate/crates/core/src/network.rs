//! Power network graph: buses, oriented lines, incidence and weighted Laplacian.
//!
//! Bus indices are 0-based here. Files and reports use 1-based numbering and the
//! conversion happens at the I/O boundary.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Gen,
    Load,
}

/// Raw bus description with a 1-based id.
#[derive(Debug, Clone, PartialEq)]
pub struct BusSpec {
    pub id: usize,
    pub kind: BusKind,
    pub inertia: Option<f64>,
    pub damping: f64,
}

/// Raw line description between 1-based bus ids, oriented `from -> to`.
#[derive(Debug, Clone, PartialEq)]
pub struct LineSpec {
    pub from: usize,
    pub to: usize,
    pub susceptance: f64,
    pub p_min: f64,
    pub p_max: f64,
}

/// Validated line between 0-based bus indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    pub susceptance: f64,
    pub p_min: f64,
    pub p_max: f64,
}

impl Line {
    /// Report label such as `1_2`.
    pub fn label(&self) -> String {
        format!("{}_{}", self.from + 1, self.to + 1)
    }
}

/// Immutable, validated network. Safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerNetwork {
    kinds: Vec<BusKind>,
    inertia: Vec<f64>,
    damping: Vec<f64>,
    lines: Vec<Line>,
    generator_buses: Vec<usize>,
    load_buses: Vec<usize>,
    laplacian: DMatrix<f64>,
}

fn positive(what: String, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonpositiveParameter { what, value })
    }
}

/// Validates raw buses and lines and builds the network.
///
/// Bus ids must be exactly `1..=n` in any order. Line order is preserved as given
/// because it fixes the sign convention of every flow.
pub fn build_network(buses: &[BusSpec], lines: &[LineSpec]) -> Result<PowerNetwork> {
    let n = buses.len();
    if n == 0 {
        return Err(Error::Validation("network has no buses".into()));
    }
    let mut slot: Vec<Option<&BusSpec>> = vec![None; n];
    for b in buses {
        if b.id == 0 || b.id > n {
            return Err(Error::Validation(format!(
                "bus id {} outside 1..={n}",
                b.id
            )));
        }
        if slot[b.id - 1].replace(b).is_some() {
            return Err(Error::Validation(format!("duplicate bus id {}", b.id)));
        }
    }

    let mut kinds = Vec::with_capacity(n);
    let mut inertia = Vec::with_capacity(n);
    let mut damping = Vec::with_capacity(n);
    for b in slot.into_iter().flatten() {
        positive(format!("D at bus {}", b.id), b.damping)?;
        let m = match (b.kind, b.inertia) {
            (BusKind::Gen, Some(m)) => {
                positive(format!("M at bus {}", b.id), m)?;
                m
            }
            (BusKind::Gen, None) => {
                return Err(Error::Validation(format!(
                    "generator bus {} has no inertia M",
                    b.id
                )))
            }
            (BusKind::Load, Some(_)) => {
                return Err(Error::Validation(format!(
                    "load bus {} must not declare inertia M",
                    b.id
                )))
            }
            (BusKind::Load, None) => 0.0,
        };
        kinds.push(b.kind);
        inertia.push(m);
        damping.push(b.damping);
    }

    let mut seen = std::collections::HashSet::new();
    let mut out_lines = Vec::with_capacity(lines.len());
    for ls in lines {
        for id in [ls.from, ls.to] {
            if id == 0 || id > n {
                return Err(Error::Validation(format!(
                    "line endpoint {id} outside 1..={n}"
                )));
            }
        }
        if ls.from == ls.to {
            return Err(Error::Validation(format!("self-loop at bus {}", ls.from)));
        }
        let key = (ls.from.min(ls.to), ls.from.max(ls.to));
        if !seen.insert(key) {
            return Err(Error::DuplicateLine {
                from: ls.from,
                to: ls.to,
            });
        }
        positive(format!("B on line {}->{}", ls.from, ls.to), ls.susceptance)?;
        if !(ls.p_min < ls.p_max) {
            return Err(Error::BadThermalLimits {
                from: ls.from,
                to: ls.to,
                min: ls.p_min,
                max: ls.p_max,
            });
        }
        out_lines.push(Line {
            from: ls.from - 1,
            to: ls.to - 1,
            susceptance: ls.susceptance,
            p_min: ls.p_min,
            p_max: ls.p_max,
        });
    }

    if !connected(n, &out_lines) {
        return Err(Error::DisconnectedGraph);
    }

    let generator_buses = (0..n).filter(|&i| kinds[i] == BusKind::Gen).collect();
    let load_buses = (0..n).filter(|&i| kinds[i] == BusKind::Load).collect();
    let laplacian = laplacian_of(n, &out_lines);
    Ok(PowerNetwork {
        kinds,
        inertia,
        damping,
        lines: out_lines,
        generator_buses,
        load_buses,
        laplacian,
    })
}

fn connected(n: usize, lines: &[Line]) -> bool {
    let mut adj = vec![Vec::new(); n];
    for l in lines {
        adj[l.from].push(l.to);
        adj[l.to].push(l.from);
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(i) = stack.pop() {
        for &j in &adj[i] {
            if !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

fn laplacian_of(n: usize, lines: &[Line]) -> DMatrix<f64> {
    let mut lap = DMatrix::zeros(n, n);
    for l in lines {
        let b = l.susceptance;
        lap[(l.from, l.from)] += b;
        lap[(l.to, l.to)] += b;
        lap[(l.from, l.to)] -= b;
        lap[(l.to, l.from)] -= b;
    }
    lap
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            got,
        })
    }
}

impl PowerNetwork {
    pub fn n_buses(&self) -> usize {
        self.kinds.len()
    }

    pub fn n_lines(&self) -> usize {
        self.lines.len()
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn kind(&self, bus: usize) -> BusKind {
        self.kinds[bus]
    }

    pub fn is_generator(&self, bus: usize) -> bool {
        self.kinds[bus] == BusKind::Gen
    }

    pub fn generator_buses(&self) -> &[usize] {
        &self.generator_buses
    }

    pub fn load_buses(&self) -> &[usize] {
        &self.load_buses
    }

    /// Inertia per bus; zero on load buses.
    pub fn inertia(&self) -> &[f64] {
        &self.inertia
    }

    pub fn damping(&self) -> &[f64] {
        &self.damping
    }

    pub fn susceptances(&self) -> Vec<f64> {
        self.lines.iter().map(|l| l.susceptance).collect()
    }

    /// Copy of the network with every damping coefficient multiplied by `factor`.
    pub fn with_damping_scaled(&self, factor: f64) -> Result<PowerNetwork> {
        positive("damping scale".into(), factor)?;
        let mut net = self.clone();
        for d in &mut net.damping {
            *d *= factor;
        }
        Ok(net)
    }

    /// Node-by-line incidence matrix with +1 at the sending bus and -1 at the receiving bus.
    pub fn incidence(&self) -> DMatrix<f64> {
        let mut c = DMatrix::zeros(self.n_buses(), self.n_lines());
        for (e, l) in self.lines.iter().enumerate() {
            c[(l.from, e)] = 1.0;
            c[(l.to, e)] = -1.0;
        }
        c
    }

    /// `C diag(B) Cᵀ`, precomputed at construction.
    pub fn weighted_laplacian(&self) -> &DMatrix<f64> {
        &self.laplacian
    }

    /// Per-line flow `B_ij (θ_i - θ_j)` in line order.
    pub fn line_flows_from_angles(&self, theta: &[f64]) -> Result<Vec<f64>> {
        check_len("bus angles", self.n_buses(), theta.len())?;
        Ok(self.flows_unchecked(theta))
    }

    pub(crate) fn flows_unchecked(&self, theta: &[f64]) -> Vec<f64> {
        self.lines
            .iter()
            .map(|l| l.susceptance * (theta[l.from] - theta[l.to]))
            .collect()
    }

    /// `C v`: for each bus, the sum of `v` over outgoing lines minus incoming lines.
    pub fn net_outflow(&self, line_values: &[f64]) -> Result<Vec<f64>> {
        check_len("line vector", self.n_lines(), line_values.len())?;
        Ok(self.outflow_unchecked(line_values))
    }

    pub(crate) fn outflow_unchecked(&self, line_values: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_buses()];
        for (l, v) in self.lines.iter().zip(line_values) {
            out[l.from] += v;
            out[l.to] -= v;
        }
        out
    }

    /// `Cᵀ x`: per-line difference `x_from - x_to`.
    pub(crate) fn differences_unchecked(&self, x: &[f64]) -> Vec<f64> {
        self.lines.iter().map(|l| x[l.from] - x[l.to]).collect()
    }

    /// `C B Cᵀ x` evaluated line by line.
    pub(crate) fn laplacian_apply_unchecked(&self, x: &[f64]) -> Vec<f64> {
        self.outflow_unchecked(&self.flows_unchecked(x))
    }

    pub(crate) fn check_bus_len(&self, what: &'static str, got: usize) -> Result<()> {
        check_len(what, self.n_buses(), got)
    }

    pub(crate) fn check_line_len(&self, what: &'static str, got: usize) -> Result<()> {
        check_len(what, self.n_lines(), got)
    }

    /// Angles solving `C B Cᵀ θ = r` with θ of the first bus fixed at 0.
    ///
    /// `r` must sum to zero for an exact solution; any residual mass lands on bus 0.
    pub fn grounded_angles(&self, r: &[f64]) -> Result<Vec<f64>> {
        self.check_bus_len("injection", r.len())?;
        let n = self.n_buses();
        if n == 1 {
            return Ok(vec![0.0]);
        }
        let sub = self.laplacian.view((1, 1), (n - 1, n - 1)).into_owned();
        let rhs = nalgebra::DVector::from_iterator(n - 1, r[1..].iter().copied());
        let chol = sub
            .cholesky()
            .ok_or_else(|| Error::Validation("grounded Laplacian is singular".into()))?;
        let sol = chol.solve(&rhs);
        let mut theta = vec![0.0];
        theta.extend(sol.iter());
        Ok(theta)
    }
}
