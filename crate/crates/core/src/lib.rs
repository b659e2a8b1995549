//! Vehicle-level emissions cap-and-trade simulator.
//!
//! Vehicles sample their CO2 emission rate, a ledger-backed allowance book
//! applies penalties and subsidies against a threshold, and vehicles in
//! deficit buy credits from nearby compliant vehicles over V2V links whose
//! contact windows must cover transmission plus ledger confirmation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fmt;

use serde::{Deserialize, Serialize};

pub mod allowance;
pub mod credits;
pub mod emissions;
pub mod engine;
pub mod latency;
pub mod ledger;
pub mod mobility;
pub mod scenario;

pub use credits::Credits;
pub use scenario::{load_scenario, load_scenario_file, ScenarioConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VehicleId(pub u32);

impl VehicleId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for VehicleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}
