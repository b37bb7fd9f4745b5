//! Load-side frequency control on a linearized DC power network.
//!
//! The crate simulates swing dynamics coupled with a distributed proximal primal-dual
//! controller, checks optimality of the reached operating point, and ships a handful of
//! desk-scale test networks.
//!
//! ```
//! use gridfreq::{load_case, Simulation, ControlLaw};
//!
//! let case = load_case("two_bus_analytic").unwrap();
//! let sim = Simulation {
//!     net: &case.net,
//!     cost: &case.cost,
//!     cfg: case.cfg.clone(),
//!     law: ControlLaw::Dppd,
//!     injection: &case.scenario.injection,
//!     uncertainty: case.scenario.uncertainty,
//! };
//! let mut opts = case.scenario.options;
//! opts.t_end = 1.0;
//! let traj = sim.run(sim.default_initial_state().unwrap(), &opts).unwrap();
//! assert!(traj.samples.len() > 10);
//! ```

// `!(x < y)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod cli;
pub mod controller;
pub mod costs;
pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod injection;
pub mod network;
pub mod oracle;
pub mod output;
pub mod scenarios;
pub mod simulate;

pub use controller::{ControllerState, DppdConfig, Mode, Rate, StepSizes};
pub use costs::{BusCost, CostModel};
pub use diagnostics::{kkt_residual, KktOptions, KktResidual, PrimalDualPoint};
pub use error::{Error, Result};
pub use injection::InjectionProfile;
pub use network::{build_network, BusKind, BusSpec, LineSpec, PowerNetwork};
pub use oracle::{grid_search_optimum, two_bus_analytic_optimum, ReferenceOptimum};
pub use scenarios::{load_case, Case, Scenario, BUNDLED_CASES};
pub use simulate::{ControlLaw, SimOptions, Simulation, SystemState, Trajectory};
