//! Discrete-event simulator for collective perception in urban vehicular
//! networks, with application-layer and GeoNetworking multi-hop dissemination.

pub mod config;
pub mod cps;
pub mod dcc;
pub mod engine;
pub mod geonet;
pub mod metrics;
pub mod mobility;
pub mod radio;
pub mod sim;
pub mod sweep;

pub use engine::SimTime;

use serde::{Deserialize, Serialize};

/// Vehicle identifier, unique over a run. Ids are never reused after a
/// vehicle leaves the map.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VehicleId(pub u32);

impl std::fmt::Display for VehicleId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}
