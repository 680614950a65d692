use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::geometry::{Rect, Vec2};

#[derive(Debug, Error, PartialEq)]
pub enum MapError {
    #[error("grid_n must be at least 1")]
    NoIntersections,
    #[error("extent_m must be positive, got {0}")]
    BadExtent(f64),
    #[error("spacing {spacing} m x ({grid_n} + 1) does not match extent {extent} m")]
    InconsistentSpacing { grid_n: u32, spacing: f64, extent: f64 },
    #[error("lanes_per_direction and lane_width_m must be positive")]
    BadLanes,
    #[error("roads of half-width {half_width} m with setback {setback} m leave no room for buildings at spacing {spacing} m")]
    NoRoomForBuildings { half_width: f64, setback: f64, spacing: f64 },
}

/// Map construction parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MapParams {
    /// Intersections per side.
    pub grid_n: u32,
    pub extent_m: f64,
    /// Derived from `extent_m / (grid_n + 1)` when absent.
    pub spacing_m: Option<f64>,
    pub lanes_per_direction: u32,
    pub lane_width_m: f64,
    /// Clearance between the road edge and the nearest building face.
    pub building_setback_m: f64,
}

impl Default for MapParams {
    fn default() -> Self {
        Self {
            grid_n: 3,
            extent_m: 1000.0,
            spacing_m: None,
            lanes_per_direction: 2,
            lane_width_m: 3.5,
            building_setback_m: 8.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    /// Road parallel to the x axis.
    Horizontal,
    /// Road parallel to the y axis.
    Vertical,
}

impl Axis {
    pub fn other(self) -> Axis {
        match self {
            Axis::Horizontal => Axis::Vertical,
            Axis::Vertical => Axis::Horizontal,
        }
    }
}

/// Travel direction along the road axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Towards increasing coordinate (east or north).
    Forward,
    /// Towards decreasing coordinate (west or south).
    Backward,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LaneId(pub u32);

/// One directed lane. Vehicles are located on it by the arc length `s`,
/// measured from the map boundary where the lane enters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    pub id: LaneId,
    pub axis: Axis,
    /// Index of the road among roads of the same axis, `0..grid_n`.
    pub road: u32,
    pub direction: Direction,
    /// 0 is the lane next to the centre line.
    pub index: u32,
    /// Perpendicular coordinate of the lane centre line.
    pub offset: f64,
}

/// Manhattan grid with `grid_n x grid_n` intersections and one building in
/// each quadrant of every intersection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridMap {
    pub grid_n: u32,
    pub spacing_m: f64,
    pub extent_m: f64,
    pub lanes_per_direction: u32,
    pub lane_width_m: f64,
    pub building_setback_m: f64,
    pub roads: Vec<Rect>,
    pub buildings: Vec<Rect>,
    pub lanes: Vec<Lane>,
}

impl GridMap {
    pub fn build(params: &MapParams) -> Result<GridMap, MapError> {
        if params.grid_n == 0 {
            return Err(MapError::NoIntersections);
        }
        if !(params.extent_m.is_finite() && params.extent_m > 0.0) {
            return Err(MapError::BadExtent(params.extent_m));
        }
        if params.lanes_per_direction == 0 || !(params.lane_width_m > 0.0) {
            return Err(MapError::BadLanes);
        }
        let n = params.grid_n;
        let derived = params.extent_m / f64::from(n + 1);
        let spacing = match params.spacing_m {
            Some(s) if (s * f64::from(n + 1) - params.extent_m).abs() > 1.0 || !(s > 0.0) => {
                return Err(MapError::InconsistentSpacing { grid_n: n, spacing: s, extent: params.extent_m });
            }
            Some(s) => s,
            None => derived,
        };
        let half_width = f64::from(params.lanes_per_direction) * params.lane_width_m;
        let side = spacing / 2.0 - half_width - params.building_setback_m;
        if !(side > 0.0) || params.building_setback_m < 0.0 {
            return Err(MapError::NoRoomForBuildings {
                half_width,
                setback: params.building_setback_m,
                spacing,
            });
        }

        let extent = params.extent_m;
        let centres: Vec<f64> = (1..=n).map(|k| f64::from(k) * spacing).collect();

        let mut roads = Vec::new();
        for &c in &centres {
            roads.push(Rect::from_bounds(0.0, c - half_width, extent, c + half_width));
        }
        for &c in &centres {
            roads.push(Rect::from_bounds(c - half_width, 0.0, c + half_width, extent));
        }

        let near = half_width + params.building_setback_m;
        let mut buildings = Vec::with_capacity((n * n * 4) as usize);
        for &cx in &centres {
            for &cy in &centres {
                for (sx, sy) in [(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)] {
                    buildings.push(Rect::from_bounds(
                        cx + sx * near,
                        cy + sy * near,
                        cx + sx * (near + side),
                        cy + sy * (near + side),
                    ));
                }
            }
        }

        let mut lanes = Vec::new();
        for axis in [Axis::Horizontal, Axis::Vertical] {
            for (road, &c) in centres.iter().enumerate() {
                for direction in [Direction::Forward, Direction::Backward] {
                    for index in 0..params.lanes_per_direction {
                        let lateral = (f64::from(index) + 0.5) * params.lane_width_m;
                        // Right-hand traffic: eastbound south of the centre line,
                        // northbound east of it.
                        let offset = match (axis, direction) {
                            (Axis::Horizontal, Direction::Forward) => c - lateral,
                            (Axis::Horizontal, Direction::Backward) => c + lateral,
                            (Axis::Vertical, Direction::Forward) => c + lateral,
                            (Axis::Vertical, Direction::Backward) => c - lateral,
                        };
                        lanes.push(Lane {
                            id: LaneId(lanes.len() as u32),
                            axis,
                            road: road as u32,
                            direction,
                            index,
                            offset,
                        });
                    }
                }
            }
        }

        Ok(GridMap {
            grid_n: n,
            spacing_m: spacing,
            extent_m: extent,
            lanes_per_direction: params.lanes_per_direction,
            lane_width_m: params.lane_width_m,
            building_setback_m: params.building_setback_m,
            roads,
            buildings,
            lanes,
        })
    }

    pub fn intersection_count(&self) -> usize {
        (self.grid_n * self.grid_n) as usize
    }

    pub fn road_half_width(&self) -> f64 {
        f64::from(self.lanes_per_direction) * self.lane_width_m
    }

    /// Centre-line length of all roads in km, both directions pooled.
    pub fn road_km(&self) -> f64 {
        2.0 * f64::from(self.grid_n) * self.extent_m / 1000.0
    }

    /// Lane length in km summed over every lane.
    pub fn lane_km(&self) -> f64 {
        self.road_km() * 2.0 * f64::from(self.lanes_per_direction)
    }

    pub fn lane(&self, id: LaneId) -> &Lane {
        &self.lanes[id.0 as usize]
    }

    fn road_centre(&self, road: u32) -> f64 {
        f64::from(road + 1) * self.spacing_m
    }

    /// World position of arc length `s` on a lane.
    pub fn lane_point(&self, id: LaneId, s: f64) -> Vec2 {
        let lane = self.lane(id);
        let along = match lane.direction {
            Direction::Forward => s,
            Direction::Backward => self.extent_m - s,
        };
        match lane.axis {
            Axis::Horizontal => Vec2::new(along, lane.offset),
            Axis::Vertical => Vec2::new(lane.offset, along),
        }
    }

    /// Heading in degrees, counter-clockwise from the +x axis.
    pub fn lane_heading(&self, id: LaneId) -> f64 {
        let lane = self.lane(id);
        match (lane.axis, lane.direction) {
            (Axis::Horizontal, Direction::Forward) => 0.0,
            (Axis::Vertical, Direction::Forward) => 90.0,
            (Axis::Horizontal, Direction::Backward) => 180.0,
            (Axis::Vertical, Direction::Backward) => 270.0,
        }
    }

    /// Arc length on `id` where the crossing road `road` is met.
    fn crossing_s(&self, id: LaneId, road: u32) -> f64 {
        let c = self.road_centre(road);
        match self.lane(id).direction {
            Direction::Forward => c,
            Direction::Backward => self.extent_m - c,
        }
    }

    /// First crossing strictly ahead of `s`: `(s_at_crossing, crossing_road)`.
    pub fn next_crossing(&self, id: LaneId, s: f64) -> Option<(f64, u32)> {
        (0..self.grid_n)
            .map(|road| (self.crossing_s(id, road), road))
            .filter(|(at, _)| *at > s + 1e-9)
            .min_by(|a, b| a.0.total_cmp(&b.0))
    }

    /// Target lane and its arc length after turning at the crossing with `road`.
    pub fn turn_target(&self, from: LaneId, crossing_road: u32, movement: Movement) -> Option<(LaneId, f64)> {
        let lane = self.lane(from);
        let direction = match (lane.axis, movement) {
            (_, Movement::Straight) => return None,
            // Left from eastbound is northbound; left from northbound is westbound.
            (Axis::Horizontal, Movement::Left) => lane.direction,
            (Axis::Horizontal, Movement::Right) => flip(lane.direction),
            (Axis::Vertical, Movement::Left) => flip(lane.direction),
            (Axis::Vertical, Movement::Right) => lane.direction,
        };
        let target = self.find_lane(lane.axis.other(), crossing_road, direction, lane.index)?;
        let s = self.crossing_s(target, lane.road);
        Some((target, s))
    }

    pub fn find_lane(&self, axis: Axis, road: u32, direction: Direction, index: u32) -> Option<LaneId> {
        self.lanes
            .iter()
            .find(|l| l.axis == axis && l.road == road && l.direction == direction && l.index == index)
            .map(|l| l.id)
    }

    pub fn on_road(&self, p: Vec2) -> bool {
        self.roads.iter().any(|r| r.contains(p))
    }

    /// Number of buildings the straight segment `a -> b` crosses.
    pub fn obstructions(&self, a: Vec2, b: Vec2) -> usize {
        self.buildings.iter().filter(|r| r.intersects_segment(a, b)).count()
    }

    pub fn line_of_sight(&self, a: Vec2, b: Vec2) -> bool {
        !self.buildings.iter().any(|r| r.intersects_segment(a, b))
    }
}

fn flip(d: Direction) -> Direction {
    match d {
        Direction::Forward => Direction::Backward,
        Direction::Backward => Direction::Forward,
    }
}

/// Movement through an intersection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Movement {
    Straight,
    Left,
    Right,
}
