//! Simplified ITS-G5 physical and MAC layer.
//!
//! Propagation is log-distance path loss anchored at the 1 m free-space loss,
//! with a fixed attenuation per building crossed by the direct path. Medium
//! access is carrier sense with AIFS and a frozen random backoff; frames that
//! overlap at a receiver survive only when they clear the capture margin.

mod ledger;
mod medium;

pub use ledger::BusyLedger;
pub use medium::{FrameId, Medium, MediumCounters, RadioEvent, RadioNotice, Reception};

use serde::{Deserialize, Serialize};

use crate::mobility::{GridMap, Vec2};
use crate::SimTime;

const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadioConfig {
    pub tx_power_dbm: f64,
    pub carrier_hz: f64,
    pub bitrate_bps: u64,
    /// Carrier-sense threshold: weaker frames do not mark the channel busy.
    pub sense_threshold_dbm: f64,
    /// Weakest frame that can be decoded.
    pub decode_floor_dbm: f64,
    /// Interference ceiling: a reception whose summed co-channel interference
    /// reaches this level is lost regardless of capture.
    pub noise_floor_dbm: f64,
    /// Receiver thermal noise used in the capture (SINR) comparison.
    pub thermal_noise_dbm: f64,
    pub capture_margin_db: f64,
    pub preamble_us: u64,
    pub per_wall_loss_db: f64,
    pub pathloss_exponent: f64,
    pub aifs_us: u64,
    pub slot_us: u64,
    pub cw: u32,
    pub queue_capacity: usize,
}

impl Default for RadioConfig {
    fn default() -> Self {
        Self {
            tx_power_dbm: 23.0,
            carrier_hz: 5.9e9,
            bitrate_bps: 6_000_000,
            sense_threshold_dbm: -85.0,
            decode_floor_dbm: -85.0,
            noise_floor_dbm: -65.0,
            thermal_noise_dbm: -99.0,
            capture_margin_db: 10.0,
            preamble_us: 40,
            per_wall_loss_db: 15.0,
            pathloss_exponent: 2.0,
            aifs_us: 58,
            slot_us: 13,
            cw: 15,
            queue_capacity: 4,
        }
    }
}

impl RadioConfig {
    /// Free-space loss at the 1 m reference distance.
    pub fn reference_loss_db(&self) -> f64 {
        let wavelength = SPEED_OF_LIGHT / self.carrier_hz;
        20.0 * (4.0 * std::f64::consts::PI / wavelength).log10()
    }

    /// Line-of-sight received power at distance `d` (clamped to 1 m).
    pub fn los_power_dbm(&self, d: f64) -> f64 {
        let d = d.max(1.0);
        self.tx_power_dbm - self.reference_loss_db() - 10.0 * self.pathloss_exponent * d.log10()
    }

    /// Distance at which line-of-sight power falls to the sense threshold.
    pub fn los_range_m(&self) -> f64 {
        let budget = self.tx_power_dbm - self.reference_loss_db() - self.sense_threshold_dbm;
        10f64.powf(budget / (10.0 * self.pathloss_exponent)).max(1.0)
    }
}

/// Frame airtime: preamble plus payload bits at the configured bit rate,
/// rounded up to the next microsecond.
pub fn airtime(payload_bytes: usize, cfg: &RadioConfig) -> SimTime {
    let bits = payload_bytes as u64 * 8 * 1_000_000;
    SimTime::from_micros(cfg.preamble_us + bits.div_ceil(cfg.bitrate_bps))
}

/// Received power in dBm between two positions, symmetric in its endpoints.
pub fn received_power(tx: Vec2, rx: Vec2, map: &GridMap, cfg: &RadioConfig) -> f64 {
    let walls = map.obstructions(tx, rx) as f64;
    cfg.los_power_dbm(tx.distance(rx)) - cfg.per_wall_loss_db * walls
}

pub(crate) fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub(crate) fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}
