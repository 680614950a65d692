use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{PerceivedObject, Snapshot};
use crate::{SimTime, VehicleId};

/// Replacement rule for an object that is already in the LEM.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LemUpdateMode {
    /// Replace only with strictly newer data whose hop count is below the limit.
    Literal,
    /// Replace with any strictly newer data.
    Freshest,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LemEntry {
    pub object: PerceivedObject,
    pub last_included: Option<Snapshot>,
}

/// Local environment model keyed by object id.
#[derive(Clone, Debug, Default)]
pub struct Lem {
    entries: BTreeMap<VehicleId, LemEntry>,
}

impl Lem {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: VehicleId) -> Option<&LemEntry> {
        self.entries.get(&id)
    }

    pub fn entries(&self) -> impl Iterator<Item = &LemEntry> {
        self.entries.values()
    }

    /// Overwrites the object data, keeping the inclusion snapshot.
    pub fn put(&mut self, object: PerceivedObject) {
        self.entries
            .entry(object.object_id)
            .and_modify(|e| e.object = object)
            .or_insert(LemEntry { object, last_included: None });
    }

    /// Records that `objects` went out in a CPM generated at `now`.
    pub fn mark_included(&mut self, objects: &[PerceivedObject], now: SimTime) {
        for o in objects {
            if let Some(e) = self.entries.get_mut(&o.object_id) {
                e.last_included =
                    Some(Snapshot { position: o.position, speed: o.speed, heading: o.heading, time: now });
            }
        }
    }

    /// Drops entries measured more than `timeout` before `now`.
    pub fn prune(&mut self, now: SimTime, timeout: SimTime) {
        self.entries.retain(|_, e| now.saturating_sub(e.object.measured_at) <= timeout);
    }

    /// Whether `id` has data no older than `max_age`.
    pub fn is_fresh(&self, id: VehicleId, now: SimTime, max_age: SimTime) -> bool {
        self.entries.get(&id).is_some_and(|e| now.saturating_sub(e.object.measured_at) <= max_age)
    }
}

/// Merges received objects into the LEM in order. Hop counts must already be
/// incremented for the radio hop just travelled.
pub fn lem_update<I>(lem: &mut Lem, incoming: I, max_hop: u8, mode: LemUpdateMode)
where
    I: IntoIterator<Item = PerceivedObject>,
{
    for object in incoming {
        match lem.entries.get_mut(&object.object_id) {
            None => {
                lem.entries.insert(object.object_id, LemEntry { object, last_included: None });
            }
            Some(entry) => {
                let newer = entry.object.measured_at < object.measured_at;
                let replace = match mode {
                    LemUpdateMode::Literal => newer && object.hop_count < max_hop,
                    LemUpdateMode::Freshest => newer,
                };
                if replace {
                    entry.object = object;
                }
            }
        }
    }
}
