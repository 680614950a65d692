use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::geometry::Vec2;
use super::map::{GridMap, LaneId, Movement};
use crate::VehicleId;

/// How the configured density maps to a vehicle count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityBasis {
    /// Vehicles per km of road, both directions pooled.
    RoadKm,
    /// Vehicles per km of lane.
    LaneKm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MobilityParams {
    pub desired_speed_mps: f64,
    /// Per-vehicle desired speed is drawn uniformly within this relative spread.
    pub speed_spread: f64,
    pub step_ms: u64,
    /// Car-following target gap to the leader.
    pub min_gap_m: f64,
    /// Free space required on a lane around the insertion point of a turning
    /// or entering vehicle.
    pub insert_clearance_m: f64,
    /// Vehicles that cannot turn yet wait this far before the crossing point.
    pub stop_offset_m: f64,
}

impl Default for MobilityParams {
    fn default() -> Self {
        Self {
            desired_speed_mps: 13.9,
            speed_spread: 0.1,
            step_ms: 100,
            min_gap_m: 2.0,
            insert_clearance_m: 3.0,
            stop_offset_m: 4.0,
        }
    }
}

impl MobilityParams {
    pub fn max_speed(&self) -> f64 {
        self.desired_speed_mps * (1.0 + self.speed_spread)
    }
}

/// Observable state of one vehicle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: VehicleId,
    pub position: Vec2,
    pub speed: f64,
    /// Degrees in `[0, 360)`, counter-clockwise from +x.
    pub heading: f64,
    pub lane: LaneId,
    pub equipped: bool,
}

/// A vehicle to be placed on the map.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Birth {
    pub lane: LaneId,
    pub s: f64,
    pub desired_speed: f64,
    pub equipped: bool,
}

#[derive(Clone, Debug)]
struct Vehicle {
    lane: LaneId,
    s: f64,
    speed: f64,
    desired_speed: f64,
    equipped: bool,
    planned: Option<Movement>,
}

/// Expected vehicle count for a density on a map.
pub fn target_count(map: &GridMap, density: f64, basis: DensityBasis) -> usize {
    let km = match basis {
        DensityBasis::RoadKm => map.road_km(),
        DensityBasis::LaneKm => map.lane_km(),
    };
    (density * km).round() as usize
}

fn draw_speed<R: Rng>(params: &MobilityParams, rng: &mut R) -> f64 {
    if params.speed_spread > 0.0 {
        params.desired_speed_mps * rng.gen_range(1.0 - params.speed_spread..=1.0 + params.speed_spread)
    } else {
        params.desired_speed_mps
    }
}

/// Warm-fill placement of `density x km` vehicles at uniformly random lane
/// positions, each independently equipped with probability `penetration`.
pub fn spawn_plan<R1: Rng, R2: Rng>(
    map: &GridMap,
    density: f64,
    basis: DensityBasis,
    penetration: f64,
    params: &MobilityParams,
    spawn_rng: &mut R1,
    equip_rng: &mut R2,
) -> Vec<Birth> {
    let n = target_count(map, density, basis);
    let mut occupied: BTreeMap<LaneId, Vec<f64>> = BTreeMap::new();
    let mut births = Vec::with_capacity(n);
    let lanes = map.lanes.len() as u32;
    'outer: for _ in 0..n {
        for _attempt in 0..1000 {
            let lane = LaneId(spawn_rng.gen_range(0..lanes));
            let s = spawn_rng.gen_range(0.0..map.extent_m);
            let taken = occupied.entry(lane).or_default();
            if taken.iter().all(|o| (o - s).abs() >= params.insert_clearance_m) {
                taken.push(s);
                births.push(Birth {
                    lane,
                    s,
                    desired_speed: draw_speed(params, spawn_rng),
                    equipped: equip_rng.gen_bool(penetration),
                });
                continue 'outer;
            }
        }
        // Map saturated: fewer vehicles than requested.
        break;
    }
    births
}

/// Outcome of one mobility step.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct StepReport {
    pub despawned: Vec<VehicleId>,
    pub spawned: Vec<VehicleId>,
}

/// Result of advancing one vehicle along its lane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Advance {
    pub distance: f64,
    pub speed: f64,
}

/// Longitudinal car-following rule: drive at the desired speed unless that
/// would leave less than `min_gap` to the leader, in which case stop short.
pub fn advance(desired_speed: f64, dt: f64, gap_to_leader: Option<f64>, min_gap: f64) -> Advance {
    let mut distance = desired_speed * dt;
    if let Some(gap) = gap_to_leader {
        distance = distance.min((gap - min_gap).max(0.0));
    }
    Advance { distance, speed: distance / dt }
}

/// All vehicles on the map with per-lane occupancy.
pub struct Traffic {
    vehicles: BTreeMap<VehicleId, Vehicle>,
    /// Vehicle ids per lane, ascending by arc length.
    lanes: Vec<Vec<VehicleId>>,
    next_id: u32,
    spawned_total: u64,
    equipped_total: u64,
}

impl Traffic {
    pub fn new(map: &GridMap) -> Self {
        Self {
            vehicles: BTreeMap::new(),
            lanes: vec![Vec::new(); map.lanes.len()],
            next_id: 0,
            spawned_total: 0,
            equipped_total: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.vehicles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vehicles.is_empty()
    }

    /// Number of vehicles created so far, and how many of them were equipped.
    pub fn spawn_totals(&self) -> (u64, u64) {
        (self.spawned_total, self.equipped_total)
    }

    pub fn contains(&self, id: VehicleId) -> bool {
        self.vehicles.contains_key(&id)
    }

    pub fn add(&mut self, birth: Birth) -> VehicleId {
        let id = VehicleId(self.next_id);
        self.next_id += 1;
        self.spawned_total += 1;
        if birth.equipped {
            self.equipped_total += 1;
        }
        self.vehicles.insert(
            id,
            Vehicle {
                lane: birth.lane,
                s: birth.s,
                speed: 0.0,
                desired_speed: birth.desired_speed,
                equipped: birth.equipped,
                planned: None,
            },
        );
        self.insert_into_lane(id, birth.lane, birth.s);
        id
    }

    fn insert_into_lane(&mut self, id: VehicleId, lane: LaneId, s: f64) {
        let list = &mut self.lanes[lane.0 as usize];
        let vehicles = &self.vehicles;
        let pos = list.partition_point(|v| vehicles[v].s < s);
        list.insert(pos, id);
    }

    fn remove_from_lane(&mut self, id: VehicleId) {
        let lane = self.vehicles[&id].lane;
        let list = &mut self.lanes[lane.0 as usize];
        let idx = list.iter().position(|v| *v == id).expect("vehicle missing from its lane");
        list.remove(idx);
    }

    pub fn state(&self, map: &GridMap, id: VehicleId) -> Option<VehicleState> {
        self.vehicles.get(&id).map(|v| VehicleState {
            id,
            position: map.lane_point(v.lane, v.s),
            speed: v.speed,
            heading: map.lane_heading(v.lane),
            lane: v.lane,
            equipped: v.equipped,
        })
    }

    /// Snapshot of every vehicle, ordered by id.
    pub fn states(&self, map: &GridMap) -> Vec<VehicleState> {
        self.vehicles.keys().map(|id| self.state(map, *id).expect("present")).collect()
    }

    pub fn ids(&self) -> impl Iterator<Item = VehicleId> + '_ {
        self.vehicles.keys().copied()
    }

    pub fn arc_length(&self, id: VehicleId) -> Option<f64> {
        self.vehicles.get(&id).map(|v| v.s)
    }

    /// Gaps between consecutive vehicles of every lane.
    pub fn lane_gaps(&self) -> impl Iterator<Item = f64> + '_ {
        self.lanes.iter().flat_map(move |list| {
            list.windows(2).map(move |w| self.vehicles[&w[1]].s - self.vehicles[&w[0]].s)
        })
    }

    fn clear_around(&self, lane: LaneId, s: f64, clearance: f64) -> bool {
        self.lanes[lane.0 as usize].iter().all(|v| (self.vehicles[v].s - s).abs() >= clearance)
    }

    /// Nearest vehicle ahead on the lane (by arc length) of a vehicle at `s`.
    fn leader_gap(&self, lane: LaneId, id: VehicleId, s: f64) -> Option<f64> {
        let list = &self.lanes[lane.0 as usize];
        let idx = list.iter().position(|v| *v == id)?;
        list.get(idx + 1).map(|lead| self.vehicles[lead].s - s)
    }

    /// Picks an entry for a replacement vehicle: a lane start with free space,
    /// falling back to any free position on the map.
    fn entry_point<R: Rng>(&self, map: &GridMap, clearance: f64, rng: &mut R) -> (LaneId, f64) {
        let lanes = map.lanes.len() as u32;
        for _ in 0..(4 * lanes) {
            let lane = LaneId(rng.gen_range(0..lanes));
            if self.clear_around(lane, 0.0, clearance) {
                return (lane, 0.0);
            }
        }
        loop {
            let lane = LaneId(rng.gen_range(0..lanes));
            let s = rng.gen_range(0.0..map.extent_m);
            if self.clear_around(lane, s, clearance) {
                return (lane, s);
            }
        }
    }

    /// Advances every vehicle by `dt` seconds.
    ///
    /// Vehicles are processed lane by lane, front to back. Motion is forward
    /// only, so a follower evaluated against its leader's old position keeps
    /// at least `min_gap`. Turning vehicles are inserted into the crossing lane
    /// only when `insert_clearance_m` is free around the crossing point;
    /// otherwise they wait before it. Vehicles leaving the map are replaced by
    /// a fresh vehicle at a random entry in the same step.
    pub fn step<R1: Rng, R2: Rng, R3: Rng>(
        &mut self,
        map: &GridMap,
        params: &MobilityParams,
        penetration: f64,
        dt: f64,
        turn_rng: &mut R1,
        spawn_rng: &mut R2,
        equip_rng: &mut R3,
    ) -> StepReport {
        debug_assert!(dt > 0.0 && dt <= 0.2 + 1e-12);
        let order: Vec<VehicleId> = self.lanes.iter().flat_map(|l| l.iter().rev().copied()).collect();
        let mut moved = std::collections::HashSet::with_capacity(order.len());
        let mut report = StepReport::default();

        for id in order {
            if moved.contains(&id) || !self.vehicles.contains_key(&id) {
                continue;
            }
            moved.insert(id);
            let (lane, s, desired) = {
                let v = &self.vehicles[&id];
                (v.lane, v.s, v.desired_speed)
            };
            let gap = self.leader_gap(lane, id, s);
            let mut step = advance(desired, dt, gap, params.min_gap_m);
            let mut target = s + step.distance;

            if let Some((cross_s, road)) = map.next_crossing(lane, s) {
                if target >= cross_s {
                    let movement = *self.vehicles.get_mut(&id).expect("present").planned.get_or_insert_with(|| {
                        match turn_rng.gen_range(0..3) {
                            0 => Movement::Straight,
                            1 => Movement::Left,
                            _ => Movement::Right,
                        }
                    });
                    if let Some((to_lane, to_s)) = map.turn_target(lane, road, movement) {
                        if self.clear_around(to_lane, to_s, params.insert_clearance_m) {
                            self.remove_from_lane(id);
                            let v = self.vehicles.get_mut(&id).expect("present");
                            v.lane = to_lane;
                            v.s = to_s;
                            v.speed = (cross_s - s) / dt;
                            v.planned = None;
                            self.insert_into_lane(id, to_lane, to_s);
                            continue;
                        }
                        target = s.max(target.min(cross_s - params.stop_offset_m));
                        step = Advance { distance: target - s, speed: (target - s) / dt };
                    } else {
                        self.vehicles.get_mut(&id).expect("present").planned = None;
                    }
                }
            }

            if target > map.extent_m {
                self.remove_from_lane(id);
                self.vehicles.remove(&id);
                report.despawned.push(id);
                let (lane, s) = self.entry_point(map, params.insert_clearance_m, spawn_rng);
                let birth = Birth {
                    lane,
                    s,
                    desired_speed: draw_speed(params, spawn_rng),
                    equipped: equip_rng.gen_bool(penetration),
                };
                let new_id = self.add(birth);
                moved.insert(new_id);
                report.spawned.push(new_id);
                continue;
            }

            let v = self.vehicles.get_mut(&id).expect("present");
            v.s = target;
            v.speed = step.speed;
        }
        report
    }
}
