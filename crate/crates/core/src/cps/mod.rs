//! Collective Perception Service: sensing, the local environment model, and
//! CPM generation with kinematic inclusion triggers.

mod lem;
mod sensor;

pub use lem::{lem_update, Lem, LemEntry, LemUpdateMode};
pub use sensor::sense;

use serde::{Deserialize, Serialize};

use crate::mobility::{heading_difference, Vec2};
use crate::{SimTime, VehicleId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CpsMode {
    Baseline,
    AppForwarding,
    GbcForwarding,
}

impl CpsMode {
    pub const ALL: [CpsMode; 3] = [CpsMode::Baseline, CpsMode::AppForwarding, CpsMode::GbcForwarding];

    pub fn name(self) -> &'static str {
        match self {
            CpsMode::Baseline => "baseline",
            CpsMode::AppForwarding => "app-forwarding",
            CpsMode::GbcForwarding => "gbc-forwarding",
        }
    }
}

impl std::fmt::Display for CpsMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for CpsMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" | "etsi" => Ok(CpsMode::Baseline),
            "app-forwarding" | "app" => Ok(CpsMode::AppForwarding),
            "gbc-forwarding" | "gbc" => Ok(CpsMode::GbcForwarding),
            other => Err(format!("unknown mode `{other}` (expected baseline, app-forwarding or gbc-forwarding)")),
        }
    }
}

/// One object as stored in a LEM and carried in a CPM.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerceivedObject {
    pub object_id: VehicleId,
    pub position: Vec2,
    pub speed: f64,
    pub heading: f64,
    /// Sensor measurement instant at the original observer.
    pub measured_at: SimTime,
    pub hop_count: u8,
}

/// Object state at its last inclusion in one of this station's CPMs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Snapshot {
    pub position: Vec2,
    pub speed: f64,
    pub heading: f64,
    pub time: SimTime,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cpm {
    pub sender_id: VehicleId,
    pub sender_position: Vec2,
    pub generated_at: SimTime,
    pub objects: Vec<PerceivedObject>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TriggerConfig {
    pub position_m: f64,
    pub speed_mps: f64,
    pub heading_deg: f64,
    pub lapse_ms: u64,
}

impl Default for TriggerConfig {
    fn default() -> Self {
        Self { position_m: 4.0, speed_mps: 4.0, heading_deg: 4.0, lapse_ms: 1000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CpsConfig {
    pub mode: CpsMode,
    pub max_hop: u8,
    pub sensor_radius_m: f64,
    pub cycle_ms: u64,
    pub max_objects: usize,
    /// LEM entries whose measurement is older than this are dropped.
    pub object_timeout_ms: u64,
    pub lem_update_mode: LemUpdateMode,
    pub triggers: TriggerConfig,
    pub header_bytes: usize,
    pub object_bytes: usize,
}

impl Default for CpsConfig {
    fn default() -> Self {
        Self {
            mode: CpsMode::Baseline,
            max_hop: 2,
            sensor_radius_m: 85.0,
            cycle_ms: 100,
            max_objects: 128,
            object_timeout_ms: 1000,
            lem_update_mode: LemUpdateMode::Literal,
            triggers: TriggerConfig::default(),
            header_bytes: 120,
            object_bytes: 35,
        }
    }
}

impl CpsConfig {
    /// Encoded size of a CPM carrying `objects` perceived objects.
    pub fn frame_bytes(&self, objects: usize) -> usize {
        self.header_bytes + self.object_bytes * objects
    }
}

/// ETSI kinematic inclusion rule.
pub fn kinematic_change_trigger(
    object: &PerceivedObject,
    last_included: Option<&Snapshot>,
    now: SimTime,
    cfg: &TriggerConfig,
) -> bool {
    let Some(last) = last_included else {
        return true;
    };
    object.position.distance(last.position) > cfg.position_m
        || (object.speed - last.speed).abs() > cfg.speed_mps
        || heading_difference(object.heading, last.heading) > cfg.heading_deg
        || now.saturating_sub(last.time) > SimTime::from_millis(cfg.lapse_ms)
}

/// Objects selected for one CPM.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Generation {
    /// Triggered candidates before the per-message cap.
    pub potential: usize,
    pub objects: Vec<PerceivedObject>,
}

/// Selects the objects for this cycle's CPM.
///
/// Locally sensed objects qualify only when measured in this cycle. In
/// application forwarding mode, received objects below `max_hop` qualify as
/// well. Ego objects come first, then ascending id, and the list is cut at
/// `max_objects`.
pub fn generate_cpm(lem: &Lem, cfg: &CpsConfig, now: SimTime) -> Generation {
    let mut local = Vec::new();
    let mut remote = Vec::new();
    for entry in lem.entries() {
        let o = &entry.object;
        let eligible = if o.hop_count == 0 {
            o.measured_at == now
        } else {
            cfg.mode == CpsMode::AppForwarding && o.hop_count < cfg.max_hop
        };
        if eligible && kinematic_change_trigger(o, entry.last_included.as_ref(), now, &cfg.triggers) {
            if o.hop_count == 0 {
                local.push(*o);
            } else {
                remote.push(*o);
            }
        }
    }
    let potential = local.len() + remote.len();
    let mut objects = local;
    objects.extend(remote);
    objects.truncate(cfg.max_objects);
    Generation { potential, objects }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obj(id: u32, hop: u8, t_ms: u64) -> PerceivedObject {
        PerceivedObject {
            object_id: VehicleId(id),
            position: Vec2::new(id as f64, 0.0),
            speed: 10.0,
            heading: 0.0,
            measured_at: SimTime::from_millis(t_ms),
            hop_count: hop,
        }
    }

    fn snap(position: Vec2, speed: f64, heading: f64, t_ms: u64) -> Snapshot {
        Snapshot { position, speed, heading, time: SimTime::from_millis(t_ms) }
    }

    fn trig(o: &PerceivedObject, s: Option<&Snapshot>, now_ms: u64) -> bool {
        kinematic_change_trigger(o, s, SimTime::from_millis(now_ms), &TriggerConfig::default())
    }

    #[test]
    fn first_inclusion_triggers() {
        assert!(trig(&obj(1, 0, 0), None, 0));
    }

    #[test]
    fn position_threshold() {
        let o = obj(1, 0, 500);
        let s = snap(Vec2::new(1.0 - 4.1, 0.0), 10.0, 0.0, 0);
        assert!(trig(&o, Some(&s), 500));
        let s = snap(Vec2::new(1.0 - 3.0, 0.0), 9.0, 2.0, 0);
        assert!(!trig(&o, Some(&s), 500));
    }

    #[test]
    fn speed_and_lapse_thresholds() {
        let o = obj(1, 0, 0);
        assert!(trig(&o, Some(&snap(o.position, 5.9, 0.0, 0)), 0));
        assert!(!trig(&o, Some(&snap(o.position, 6.0, 0.0, 0)), 1000));
        assert!(trig(&o, Some(&snap(o.position, 10.0, 0.0, 0)), 1001));
    }

    #[test]
    fn heading_wraps() {
        let mut o = obj(1, 0, 0);
        o.heading = 2.0;
        assert!(!trig(&o, Some(&snap(o.position, 10.0, 359.0, 0)), 100));
        o.heading = 4.5;
        assert!(trig(&o, Some(&snap(o.position, 10.0, 0.0, 0)), 100));
    }

    fn lem_with(objects: &[PerceivedObject]) -> Lem {
        let mut lem = Lem::default();
        for o in objects {
            lem.put(*o);
        }
        lem
    }

    #[test]
    fn app_forwarding_carries_local_and_remote() {
        let lem = lem_with(&[obj(1, 0, 1000), obj(2, 1, 950)]);
        let cfg = CpsConfig { mode: CpsMode::AppForwarding, ..CpsConfig::default() };
        let g = generate_cpm(&lem, &cfg, SimTime::from_millis(1000));
        let ids: Vec<u32> = g.objects.iter().map(|o| o.object_id.0).collect();
        assert_eq!(ids, vec![1, 2]);
    }

    #[test]
    fn baseline_carries_only_local() {
        let lem = lem_with(&[obj(1, 0, 1000), obj(2, 1, 950)]);
        for mode in [CpsMode::Baseline, CpsMode::GbcForwarding] {
            let cfg = CpsConfig { mode, ..CpsConfig::default() };
            let g = generate_cpm(&lem, &cfg, SimTime::from_millis(1000));
            assert_eq!(g.objects.len(), 1);
            assert_eq!(g.objects[0].hop_count, 0);
        }
    }

    #[test]
    fn hop_limit_excludes_remote() {
        let lem = lem_with(&[obj(2, 2, 950)]);
        let cfg = CpsConfig { mode: CpsMode::AppForwarding, ..CpsConfig::default() };
        let g = generate_cpm(&lem, &cfg, SimTime::from_millis(1000));
        assert!(g.objects.is_empty());
        assert_eq!(g.potential, 0);
    }

    #[test]
    fn stale_local_entries_are_not_resent() {
        let lem = lem_with(&[obj(1, 0, 900)]);
        let g = generate_cpm(&lem, &CpsConfig::default(), SimTime::from_millis(1000));
        assert!(g.objects.is_empty());
    }

    #[test]
    fn cap_applies_after_counting() {
        let objects: Vec<_> = (0..150).map(|i| obj(i, 0, 1000)).collect();
        let lem = lem_with(&objects);
        let g = generate_cpm(&lem, &CpsConfig::default(), SimTime::from_millis(1000));
        assert_eq!(g.potential, 150);
        assert_eq!(g.objects.len(), 128);
    }

    #[test]
    fn frame_size() {
        let cfg = CpsConfig::default();
        assert_eq!(cfg.frame_bytes(10), 470);
    }

    #[test]
    fn mode_names_round_trip() {
        for m in CpsMode::ALL {
            assert_eq!(m.name().parse::<CpsMode>().unwrap(), m);
        }
    }
}
