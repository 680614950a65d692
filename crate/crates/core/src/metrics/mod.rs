//! Evaluation metrics: environmental awareness ratio, age of information,
//! channel busy ratio and CPM container sizes, plus their aggregation.

mod export;
mod summary;

pub use export::{cell_tag, load_cell_samples, write_run, write_summary, RunFiles};
pub use summary::{
    ecdf, histogram_quantile, pool_cells, quantile, summarize_cells, AoiHistogram, AoiStats, BoxStats, CbrStats, CellKey, CellSamples, CellSummary, Stat,
};

use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::dcc::DccState;
use crate::geonet::GeoNetCounters;
use crate::mobility::Vec2;
use crate::radio::MediumCounters;
use crate::{SimTime, VehicleId};

/// Axis-aligned logging region.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Region {
    pub min: Vec2,
    pub max: Vec2,
}

impl Region {
    pub fn from_bounds(b: [f64; 4]) -> Self {
        Self { min: Vec2::new(b[0], b[1]), max: Vec2::new(b[2], b[3]) }
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EarSample {
    pub station: VehicleId,
    pub at: SimTime,
    pub perceived: u32,
    pub in_range: u32,
}

impl EarSample {
    /// `None` when no vehicle is in range.
    pub fn ear(&self) -> Option<f64> {
        (self.in_range > 0).then(|| f64::from(self.perceived) / f64::from(self.in_range))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AoiSample {
    pub receiver: VehicleId,
    pub sender: VehicleId,
    pub object: VehicleId,
    pub measured_at: SimTime,
    pub at: SimTime,
    /// Object hop count after reception.
    pub hop: u8,
    /// Radio hops the carrying packet travelled, this one included.
    pub net_hops: u8,
}

impl AoiSample {
    pub fn aoi(&self) -> SimTime {
        self.at - self.measured_at
    }
}

/// Count of AOI samples sharing one value and hop signature.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AoiBin {
    pub aoi: SimTime,
    pub hop: u8,
    pub net_hops: u8,
    pub count: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CbrSample {
    pub station: VehicleId,
    pub at: SimTime,
    pub cbr: f64,
    pub state: DccState,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectsSample {
    pub station: VehicleId,
    pub at: SimTime,
    /// Triggered candidates before the per-message cap.
    pub potential: u32,
    /// Objects in the generated CPM.
    pub carried: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TxKind {
    Cpm,
    Forward,
}

/// One transmission granted by DCC and handed to the access layer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TxRecord {
    pub station: VehicleId,
    pub at: SimTime,
    pub kind: TxKind,
    pub state: DccState,
    /// CBR measured at the last DCC update before the grant.
    pub cbr: f64,
    pub min_gap: SimTime,
    /// Time since the station's previous grant.
    pub gap: Option<SimTime>,
    pub objects: u32,
    /// Largest object hop count on the wire.
    pub max_object_hop: u8,
    /// Radio hops the packet has travelled before this transmission.
    pub net_hops: u8,
    pub bytes: u32,
    /// Whether the transmission passed the DCC gate.
    pub gated: bool,
    pub in_region: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StationCounters {
    pub station: VehicleId,
    pub joined_at: SimTime,
    pub left_at: Option<SimTime>,
    pub cycles: u64,
    pub cpms_generated: u64,
    pub cpms_sent: u64,
    pub dcc_denials: u64,
    pub forwards_sent: u64,
    pub forwards_expired: u64,
    pub cpms_received: u64,
    pub mac_drops: u64,
    pub dcc_occupancy: [u64; 5],
    pub geonet: GeoNetCounters,
    pub peak_duplicate_entries: u64,
}

/// Per-step ground truth and per-station CPS activity, enough to replay the
/// awareness computation offline.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub steps: Vec<TraceStep>,
    pub cycles: Vec<TraceCycle>,
    pub receptions: Vec<TraceReception>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub at: SimTime,
    /// Dispatch order of the mobility step; `None` for the initial placement.
    pub seq: Option<u64>,
    pub vehicles: Vec<TraceVehicle>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceVehicle {
    pub id: VehicleId,
    pub position: Vec2,
    pub equipped: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceCycle {
    pub station: VehicleId,
    pub at: SimTime,
    /// Global dispatch order.
    pub seq: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceReception {
    pub station: VehicleId,
    pub at: SimTime,
    pub seq: u64,
    /// `(object, measured_at, hop after increment)` in CPM order.
    pub objects: Vec<(VehicleId, SimTime, u8)>,
}

/// Everything one run produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config: ScenarioConfig,
    pub seed: u64,
    pub final_time: SimTime,
    pub events: u64,
    pub ear: Vec<EarSample>,
    /// Every AOI sample, ordered by `(aoi, hop, net_hops)`.
    pub aoi_bins: Vec<AoiBin>,
    /// Raw AOI samples, kept only when enabled in the metrics config.
    pub aoi: Vec<AoiSample>,
    pub cbr: Vec<CbrSample>,
    pub objects: Vec<ObjectsSample>,
    pub transmissions: Vec<TxRecord>,
    pub stations: Vec<StationCounters>,
    pub medium: MediumTotals,
    pub vehicles_spawned: u64,
    pub vehicles_equipped: u64,
    pub trace: Option<Trace>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MediumTotals {
    pub frames_sent: u64,
    pub rx_decoded: u64,
    pub rx_lost: u64,
    pub queue_drops: u64,
}

impl From<MediumCounters> for MediumTotals {
    fn from(c: MediumCounters) -> Self {
        Self { frames_sent: c.frames_sent, rx_decoded: c.rx_decoded, rx_lost: c.rx_lost, queue_drops: c.queue_drops }
    }
}

impl RunResult {
    pub fn cell(&self) -> CellKey {
        CellKey::new(self.config.cps.mode, self.config.scenario.density, self.config.scenario.penetration)
    }

    /// Defined EAR values.
    pub fn ear_values(&self) -> Vec<f64> {
        self.ear.iter().filter_map(EarSample::ear).collect()
    }

    pub fn aoi_histogram(&self) -> AoiHistogram {
        let mut h = AoiHistogram::new();
        for b in &self.aoi_bins {
            *h.entry(b.aoi).or_insert(0) += b.count;
        }
        h
    }

    pub fn aoi_count(&self) -> u64 {
        self.aoi_bins.iter().map(|b| b.count).sum()
    }

    pub fn cbr_values(&self) -> Vec<f64> {
        self.cbr.iter().map(|s| s.cbr).collect()
    }

    pub fn potential_values(&self) -> Vec<f64> {
        self.objects.iter().map(|s| f64::from(s.potential)).collect()
    }

    pub fn carried_values(&self) -> Vec<f64> {
        self.objects.iter().map(|s| f64::from(s.carried)).collect()
    }

    pub fn samples(&self) -> CellSamples {
        CellSamples {
            seeds: vec![self.seed],
            ear: self.ear_values(),
            aoi: self.aoi_histogram(),
            cbr: self.cbr_values(),
            potential: self.potential_values(),
            carried: self.carried_values(),
        }
    }
}
