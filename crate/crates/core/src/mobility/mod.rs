//! Manhattan-grid road network with intersection buildings, and vehicle
//! movement along it.

pub mod geometry;
pub mod map;
pub mod traffic;

pub use geometry::{heading_difference, Rect, Vec2};
pub use map::{Axis, Direction, GridMap, Lane, LaneId, MapError, MapParams, Movement};
pub use traffic::{
    advance, spawn_plan, target_count, Advance, Birth, DensityBasis, MobilityParams, StepReport, Traffic,
    VehicleState,
};
