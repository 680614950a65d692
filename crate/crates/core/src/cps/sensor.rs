use super::PerceivedObject;
use crate::mobility::{GridMap, VehicleState};
use crate::SimTime;

/// Every other vehicle within `radius` with an unobstructed line of sight.
pub fn sense(ego: &VehicleState, world: &[VehicleState], map: &GridMap, radius: f64, now: SimTime) -> Vec<PerceivedObject> {
    let r2 = radius * radius;
    world
        .iter()
        .filter(|v| v.id != ego.id)
        .filter(|v| ego.position.distance_sq(v.position) <= r2)
        .filter(|v| map.line_of_sight(ego.position, v.position))
        .map(|v| PerceivedObject {
            object_id: v.id,
            position: v.position,
            speed: v.speed,
            heading: v.heading,
            measured_at: now,
            hop_count: 0,
        })
        .collect()
}
