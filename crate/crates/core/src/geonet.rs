//! GeoNetworking envelope and forwarding: single-hop broadcast, and
//! geographically scoped broadcast with contention-based forwarding.

use std::collections::HashMap;
use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cps::Cpm;
use crate::engine::{EventHandle, EventQueue};
use crate::mobility::Vec2;
use crate::{SimTime, VehicleId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Transport {
    /// Single-hop broadcast, never forwarded.
    Shb,
    /// Geographically scoped broadcast.
    Gbc,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GbcAlgorithm {
    /// Contention-based forwarding: the timer shrinks with distance from the
    /// previous transmitter; hearing a duplicate cancels it.
    Cbf,
    /// Every first reception inside the area is rebroadcast after jitter only.
    Flood,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GbcConfig {
    pub radius_m: f64,
    pub lifetime_ms: u64,
    pub hop_limit: u8,
    pub algorithm: GbcAlgorithm,
    pub cbf_t_max_ms: u64,
    /// CBF reference distance; 0 derives it from the line-of-sight range at
    /// the carrier-sense threshold.
    pub cbf_d_max_m: f64,
    pub jitter_us: u64,
    /// Forwarded packets wait for the forwarder's DCC gate and take
    /// precedence over its next own CPM.
    pub dcc_gated: bool,
}

impl Default for GbcConfig {
    fn default() -> Self {
        Self {
            radius_m: 200.0,
            lifetime_ms: 1000,
            hop_limit: 2,
            algorithm: GbcAlgorithm::Cbf,
            cbf_t_max_ms: 100,
            cbf_d_max_m: 0.0,
            jitter_us: 1000,
            dcc_gated: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PacketKey {
    pub source: VehicleId,
    pub sequence: u32,
}

#[derive(Clone, Debug)]
pub struct GeoNetPacket {
    pub transport: Transport,
    pub source_id: VehicleId,
    pub source_position: Vec2,
    pub sequence: u32,
    pub created_at: SimTime,
    pub target_center: Option<Vec2>,
    pub target_radius_m: f64,
    pub lifetime: SimTime,
    /// Hop limit at origination.
    pub hop_limit: u8,
    pub remaining_hops: u8,
    pub payload: Rc<Cpm>,
}

impl GeoNetPacket {
    pub fn key(&self) -> PacketKey {
        PacketKey { source: self.source_id, sequence: self.sequence }
    }

    /// Radio hops already travelled.
    pub fn hops_travelled(&self) -> u8 {
        self.hop_limit - self.remaining_hops
    }

    pub fn expires_at(&self) -> SimTime {
        self.created_at + self.lifetime
    }

    pub fn inside_target(&self, p: Vec2) -> bool {
        self.target_center.is_some_and(|c| c.distance(p) <= self.target_radius_m)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GeoNetEvent {
    CbfExpiry { node: VehicleId, key: PacketKey },
}

/// CBF contention delay `t_max * (1 - min(d, d_max) / d_max)`.
pub fn cbf_delay(distance: f64, d_max: f64, t_max: SimTime) -> SimTime {
    let frac = 1.0 - distance.min(d_max) / d_max;
    SimTime::from_micros((t_max.as_micros() as f64 * frac).round() as u64)
}

/// Recently seen GBC packets, each kept for the packet lifetime after first
/// insertion.
#[derive(Debug, Default, Clone)]
pub struct DuplicateTable {
    expiry: HashMap<PacketKey, SimTime>,
}

impl DuplicateTable {
    /// Records `key`; returns false when it was already present and live.
    pub fn insert(&mut self, key: PacketKey, now: SimTime, lifetime: SimTime) -> bool {
        if self.contains(key, now) {
            return false;
        }
        self.expiry.insert(key, now + lifetime);
        true
    }

    pub fn contains(&self, key: PacketKey, now: SimTime) -> bool {
        self.expiry.get(&key).is_some_and(|e| *e > now)
    }

    pub fn expire(&mut self, now: SimTime) {
        self.expiry.retain(|_, e| *e > now);
    }

    pub fn len(&self) -> usize {
        self.expiry.len()
    }

    pub fn is_empty(&self) -> bool {
        self.expiry.is_empty()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeoNetCounters {
    pub sent: u64,
    pub forwarded: u64,
    pub dropped: u64,
    pub duplicates: u64,
    pub delivered: u64,
    pub timers_cancelled: u64,
}

/// What happened to a received packet.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReceiveOutcome {
    pub deliver: bool,
    pub duplicate: bool,
    pub armed: bool,
}

/// Per-station GeoNetworking router.
pub struct Router {
    node: VehicleId,
    next_sequence: u32,
    duplicates: DuplicateTable,
    pending: HashMap<PacketKey, (EventHandle, GeoNetPacket)>,
    counters: GeoNetCounters,
    peak_table: usize,
}

impl Router {
    pub fn new(node: VehicleId) -> Self {
        Self {
            node,
            next_sequence: 0,
            duplicates: DuplicateTable::default(),
            pending: HashMap::new(),
            counters: GeoNetCounters::default(),
            peak_table: 0,
        }
    }

    pub fn counters(&self) -> GeoNetCounters {
        self.counters
    }

    pub fn duplicate_table(&self) -> &DuplicateTable {
        &self.duplicates
    }

    pub fn peak_table_len(&self) -> usize {
        self.peak_table
    }

    pub fn pending_timers(&self) -> usize {
        self.pending.len()
    }

    /// Wraps a CPM for transmission by this station.
    pub fn send(
        &mut self,
        transport: Transport,
        payload: Rc<Cpm>,
        position: Vec2,
        now: SimTime,
        cfg: &GbcConfig,
    ) -> GeoNetPacket {
        let sequence = self.next_sequence;
        self.next_sequence = self.next_sequence.wrapping_add(1);
        self.counters.sent += 1;
        let packet = match transport {
            Transport::Shb => GeoNetPacket {
                transport,
                source_id: self.node,
                source_position: position,
                sequence,
                created_at: now,
                target_center: None,
                target_radius_m: 0.0,
                lifetime: SimTime::from_millis(cfg.lifetime_ms),
                hop_limit: 0,
                remaining_hops: 0,
                payload,
            },
            Transport::Gbc => GeoNetPacket {
                transport,
                source_id: self.node,
                source_position: position,
                sequence,
                created_at: now,
                target_center: Some(position),
                target_radius_m: cfg.radius_m,
                lifetime: SimTime::from_millis(cfg.lifetime_ms),
                hop_limit: cfg.hop_limit,
                remaining_hops: cfg.hop_limit,
                payload,
            },
        };
        if transport == Transport::Gbc {
            self.duplicates.insert(packet.key(), now, packet.lifetime);
        }
        packet
    }

    /// Processes a decoded packet. For GBC, arms or cancels the CBF timer.
    #[allow(clippy::too_many_arguments)]
    pub fn receive<E: From<GeoNetEvent>, R: Rng>(
        &mut self,
        packet: &GeoNetPacket,
        own_position: Vec2,
        previous_hop: Vec2,
        cfg: &GbcConfig,
        d_max: f64,
        queue: &mut EventQueue<E>,
        rng: &mut R,
    ) -> ReceiveOutcome {
        let now = queue.now();
        let mut out = ReceiveOutcome { deliver: false, duplicate: false, armed: false };
        if packet.lifetime == SimTime::ZERO {
            self.counters.dropped += 1;
            return out;
        }
        match packet.transport {
            Transport::Shb => {
                out.deliver = true;
            }
            Transport::Gbc => {
                let key = packet.key();
                if !self.duplicates.insert(key, now, packet.lifetime) {
                    out.duplicate = true;
                    self.counters.duplicates += 1;
                    if let Some((h, _)) = self.pending.remove(&key) {
                        queue.cancel(h);
                        self.counters.timers_cancelled += 1;
                    }
                    return out;
                }
                self.peak_table = self.peak_table.max(self.duplicates.len());
                out.deliver = true;
                // The hop just travelled is consumed on reception; a packet is
                // forwarded only if hops remain after that.
                if now < packet.expires_at() && packet.remaining_hops > 1 && packet.inside_target(own_position) {
                    let base = match cfg.algorithm {
                        GbcAlgorithm::Cbf => cbf_delay(
                            own_position.distance(previous_hop),
                            d_max,
                            SimTime::from_millis(cfg.cbf_t_max_ms),
                        ),
                        GbcAlgorithm::Flood => SimTime::ZERO,
                    };
                    let jitter =
                        if cfg.jitter_us > 0 { SimTime::from_micros(rng.gen_range(0..=cfg.jitter_us)) } else { SimTime::ZERO };
                    let h = queue.schedule(now + base + jitter, GeoNetEvent::CbfExpiry { node: self.node, key }.into());
                    self.pending.insert(key, (h, packet.clone()));
                    out.armed = true;
                }
            }
        }
        if out.deliver {
            self.counters.delivered += 1;
        }
        out
    }

    /// Timer expiry: returns the packet to retransmit with one hop consumed,
    /// or `None` when its lifetime has run out.
    pub fn on_timer(&mut self, key: PacketKey, now: SimTime) -> Option<GeoNetPacket> {
        let (_, mut packet) = self.pending.remove(&key)?;
        if now >= packet.expires_at() || packet.remaining_hops <= 1 {
            self.counters.dropped += 1;
            return None;
        }
        packet.remaining_hops -= 1;
        self.counters.forwarded += 1;
        Some(packet)
    }

    pub fn note_dropped(&mut self) {
        self.counters.dropped += 1;
    }

    pub fn expire_duplicates(&mut self, now: SimTime) {
        self.duplicates.expire(now);
    }

    /// Cancels every armed timer (station leaving the simulation).
    pub fn shutdown<E>(&mut self, queue: &mut EventQueue<E>) {
        for (_, (h, _)) in self.pending.drain() {
            queue.cancel(h);
        }
    }
}
