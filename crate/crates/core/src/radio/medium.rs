use std::collections::{BTreeMap, HashMap, VecDeque};

use rand::Rng;

use super::{airtime, dbm_to_mw, mw_to_dbm, received_power, BusyLedger, RadioConfig};
use crate::engine::{EventHandle, EventQueue};
use crate::mobility::{GridMap, Vec2};
use crate::{SimTime, VehicleId};

/// Frames weaker than this contribute neither busy time nor measurable
/// interference and are not tracked at the receiver.
const NEGLIGIBLE_DBM: f64 = -120.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FrameId(pub u64);

/// Timer events owned by the medium.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RadioEvent {
    /// AIFS plus remaining backoff elapsed on an idle channel.
    AccessTimer(VehicleId),
    TxEnd(FrameId),
}

/// A frame decoded by one receiver.
#[derive(Clone, Debug)]
pub struct Reception<P> {
    pub receiver: VehicleId,
    pub frame: FrameId,
    pub tx_node: VehicleId,
    pub tx_position: Vec2,
    pub power_dbm: f64,
    pub at: SimTime,
    pub payload: P,
}

#[derive(Clone, Debug)]
pub enum RadioNotice<P> {
    TxStarted { node: VehicleId, frame: FrameId, start: SimTime, airtime: SimTime, bytes: usize },
    Delivered(Reception<P>),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MediumCounters {
    pub frames_sent: u64,
    pub rx_decoded: u64,
    /// Frames above the decode floor lost to collision, capture or half-duplex.
    pub rx_lost: u64,
    pub queue_drops: u64,
}

struct Pending<P> {
    payload: P,
    bytes: usize,
}

struct Incoming {
    frame: FrameId,
    power_dbm: f64,
    power_mw: f64,
    interference_mw: f64,
    corrupted: bool,
}

struct Node<P> {
    position: Vec2,
    queue: VecDeque<Pending<P>>,
    /// Remaining backoff slots; `None` means direct access after AIFS.
    backoff: Option<u32>,
    timer: Option<(EventHandle, SimTime)>,
    transmitting: Option<FrameId>,
    /// Frames currently sensed above threshold, own transmission included.
    busy: u32,
    ledger: BusyLedger,
    incoming: Vec<Incoming>,
    counters: MediumCounters,
}

struct OnAir<P> {
    tx_node: VehicleId,
    tx_position: Vec2,
    payload: P,
    /// `(receiver, sensed)` for every receiver tracking the frame.
    receivers: Vec<(VehicleId, bool)>,
}

/// Shared broadcast channel with per-node CSMA state.
pub struct Medium<P> {
    cfg: RadioConfig,
    nodes: BTreeMap<VehicleId, Node<P>>,
    on_air: HashMap<FrameId, OnAir<P>>,
    next_frame: u64,
    retention: SimTime,
    removed_counters: MediumCounters,
}

impl<P: Clone> Medium<P> {
    pub fn new(cfg: RadioConfig) -> Self {
        Self {
            cfg,
            nodes: BTreeMap::new(),
            on_air: HashMap::new(),
            next_frame: 0,
            retention: SimTime::from_millis(1000),
            removed_counters: MediumCounters::default(),
        }
    }

    pub fn config(&self) -> &RadioConfig {
        &self.cfg
    }

    pub fn add_node(&mut self, id: VehicleId, position: Vec2) {
        self.nodes.insert(
            id,
            Node {
                position,
                queue: VecDeque::new(),
                backoff: None,
                timer: None,
                transmitting: None,
                busy: 0,
                ledger: BusyLedger::new(self.retention),
                incoming: Vec::new(),
                counters: MediumCounters::default(),
            },
        );
    }

    /// Removes a node. Its frame on air, if any, still occupies the channel
    /// until its scheduled end.
    pub fn remove_node<E: From<RadioEvent>>(&mut self, id: VehicleId, queue: &mut EventQueue<E>) {
        if let Some(node) = self.nodes.remove(&id) {
            if let Some((h, _)) = node.timer {
                queue.cancel(h);
            }
            let c = node.counters;
            self.removed_counters.frames_sent += c.frames_sent;
            self.removed_counters.rx_decoded += c.rx_decoded;
            self.removed_counters.rx_lost += c.rx_lost;
            self.removed_counters.queue_drops += c.queue_drops;
        }
    }

    pub fn contains(&self, id: VehicleId) -> bool {
        self.nodes.contains_key(&id)
    }

    pub fn set_position(&mut self, id: VehicleId, position: Vec2) {
        if let Some(n) = self.nodes.get_mut(&id) {
            n.position = position;
        }
    }

    pub fn position(&self, id: VehicleId) -> Option<Vec2> {
        self.nodes.get(&id).map(|n| n.position)
    }

    pub fn counters(&self, id: VehicleId) -> Option<MediumCounters> {
        self.nodes.get(&id).map(|n| n.counters)
    }

    pub fn is_transmitting(&self, id: VehicleId) -> bool {
        self.nodes.get(&id).is_some_and(|n| n.transmitting.is_some())
    }

    pub fn channel_busy(&self, id: VehicleId) -> bool {
        self.nodes.get(&id).is_some_and(|n| n.busy > 0)
    }

    /// Channel busy ratio over the trailing `window`.
    pub fn cbr(&self, id: VehicleId, now: SimTime, window: SimTime) -> f64 {
        self.nodes.get(&id).map_or(0.0, |n| n.ledger.cbr(now, window))
    }

    pub fn total_busy(&self, id: VehicleId, now: SimTime) -> SimTime {
        self.nodes.get(&id).map_or(SimTime::ZERO, |n| n.ledger.total_busy(now))
    }

    /// Hands a frame to the node's MAC queue. Returns false when the queue is
    /// full and the new frame is dropped.
    pub fn submit<E: From<RadioEvent>, R: Rng>(
        &mut self,
        id: VehicleId,
        payload: P,
        bytes: usize,
        queue: &mut EventQueue<E>,
        rng: &mut R,
    ) -> bool {
        let cap = self.cfg.queue_capacity;
        let Some(node) = self.nodes.get_mut(&id) else {
            return false;
        };
        if node.queue.len() >= cap {
            node.counters.queue_drops += 1;
            return false;
        }
        node.queue.push_back(Pending { payload, bytes });
        self.try_access(id, queue, rng);
        true
    }

    fn draw_backoff<R: Rng>(&self, rng: &mut R) -> u32 {
        rng.gen_range(0..self.cfg.cw.max(1))
    }

    fn try_access<E: From<RadioEvent>, R: Rng>(&mut self, id: VehicleId, queue: &mut EventQueue<E>, rng: &mut R) {
        let draw = self.draw_backoff(rng);
        let (aifs, slot) = (self.cfg.aifs_us, self.cfg.slot_us);
        let now = queue.now();
        let node = self.nodes.get_mut(&id).expect("node present");
        if node.transmitting.is_some() || node.timer.is_some() || node.queue.is_empty() {
            return;
        }
        if node.busy > 0 {
            node.backoff.get_or_insert(draw);
            return;
        }
        let wait = aifs + u64::from(node.backoff.unwrap_or(0)) * slot;
        let h = queue.schedule(now + SimTime::from_micros(wait), RadioEvent::AccessTimer(id).into());
        node.timer = Some((h, now));
    }

    fn busy_up<E: From<RadioEvent>, R: Rng>(&mut self, id: VehicleId, queue: &mut EventQueue<E>, rng: &mut R) {
        let draw = self.draw_backoff(rng);
        let (aifs, slot) = (self.cfg.aifs_us, self.cfg.slot_us);
        let now = queue.now();
        let node = self.nodes.get_mut(&id).expect("node present");
        node.busy += 1;
        if node.busy > 1 {
            return;
        }
        node.ledger.open(now);
        if let Some((h, started)) = node.timer.take() {
            queue.cancel(h);
            let elapsed = (now - started).as_micros();
            match node.backoff.as_mut() {
                Some(b) => {
                    let done = elapsed.saturating_sub(aifs) / slot;
                    *b -= (done.min(u64::from(*b))) as u32;
                }
                // Interrupted during AIFS of a direct access.
                None => node.backoff = Some(draw),
            }
        }
    }

    fn busy_down<E: From<RadioEvent>, R: Rng>(&mut self, id: VehicleId, queue: &mut EventQueue<E>, rng: &mut R) {
        let now = queue.now();
        let Some(node) = self.nodes.get_mut(&id) else {
            return;
        };
        node.busy -= 1;
        if node.busy == 0 {
            node.ledger.close(now);
            self.try_access(id, queue, rng);
        }
    }

    /// Dispatches a medium event and reports frame starts and deliveries.
    pub fn handle<E: From<RadioEvent>, R: Rng>(
        &mut self,
        event: RadioEvent,
        map: &GridMap,
        queue: &mut EventQueue<E>,
        rng: &mut R,
    ) -> Vec<RadioNotice<P>> {
        match event {
            RadioEvent::AccessTimer(id) => self.start_tx(id, map, queue, rng).into_iter().collect(),
            RadioEvent::TxEnd(frame) => self.end_tx(frame, queue, rng),
        }
    }

    fn start_tx<E: From<RadioEvent>, R: Rng>(
        &mut self,
        id: VehicleId,
        map: &GridMap,
        queue: &mut EventQueue<E>,
        rng: &mut R,
    ) -> Option<RadioNotice<P>> {
        let now = queue.now();
        let frame = FrameId(self.next_frame);
        let (pending, position) = {
            let node = self.nodes.get_mut(&id)?;
            node.timer = None;
            debug_assert_eq!(node.busy, 0);
            let pending = node.queue.pop_front()?;
            node.backoff = None;
            node.transmitting = Some(frame);
            node.counters.frames_sent += 1;
            for inc in &mut node.incoming {
                inc.corrupted = true;
            }
            (pending, node.position)
        };
        self.next_frame += 1;
        let duration = airtime(pending.bytes, &self.cfg);
        self.busy_up(id, queue, rng);

        let mut receivers = Vec::new();
        let ids: Vec<VehicleId> = self.nodes.keys().copied().filter(|r| *r != id).collect();
        for r in ids {
            let node = self.nodes.get_mut(&r).expect("present");
            let p_dbm = received_power(position, node.position, map, &self.cfg);
            if p_dbm < NEGLIGIBLE_DBM {
                continue;
            }
            let p_mw = dbm_to_mw(p_dbm);
            let mut existing = 0.0;
            for inc in &mut node.incoming {
                inc.interference_mw += p_mw;
                existing += inc.power_mw;
            }
            node.incoming.push(Incoming {
                frame,
                power_dbm: p_dbm,
                power_mw: p_mw,
                interference_mw: existing,
                corrupted: node.transmitting.is_some(),
            });
            let sensed = p_dbm >= self.cfg.sense_threshold_dbm;
            receivers.push((r, sensed));
            if sensed {
                self.busy_up(r, queue, rng);
            }
        }
        self.on_air.insert(frame, OnAir { tx_node: id, tx_position: position, payload: pending.payload, receivers });
        queue.schedule(now + duration, RadioEvent::TxEnd(frame).into());
        Some(RadioNotice::TxStarted { node: id, frame, start: now, airtime: duration, bytes: pending.bytes })
    }

    fn end_tx<E: From<RadioEvent>, R: Rng>(
        &mut self,
        frame: FrameId,
        queue: &mut EventQueue<E>,
        rng: &mut R,
    ) -> Vec<RadioNotice<P>> {
        let now = queue.now();
        let air = self.on_air.remove(&frame).expect("frame on air");
        let thermal_mw = dbm_to_mw(self.cfg.thermal_noise_dbm);
        let mut notices = Vec::new();
        for &(r, sensed) in &air.receivers {
            let Some(node) = self.nodes.get_mut(&r) else {
                continue;
            };
            let Some(idx) = node.incoming.iter().position(|i| i.frame == frame) else {
                continue;
            };
            let inc = node.incoming.swap_remove(idx);
            if inc.power_dbm >= self.cfg.decode_floor_dbm {
                let sinr = inc.power_dbm - mw_to_dbm(inc.interference_mw + thermal_mw);
                let below_ceiling =
                    inc.interference_mw == 0.0 || mw_to_dbm(inc.interference_mw) < self.cfg.noise_floor_dbm;
                if !inc.corrupted && sinr >= self.cfg.capture_margin_db && below_ceiling {
                    node.counters.rx_decoded += 1;
                    notices.push(RadioNotice::Delivered(Reception {
                        receiver: r,
                        frame,
                        tx_node: air.tx_node,
                        tx_position: air.tx_position,
                        power_dbm: inc.power_dbm,
                        at: now,
                        payload: air.payload.clone(),
                    }));
                } else {
                    node.counters.rx_lost += 1;
                }
            }
            if sensed {
                self.busy_down(r, queue, rng);
            }
        }
        if let Some(node) = self.nodes.get_mut(&air.tx_node) {
            if node.transmitting == Some(frame) {
                node.transmitting = None;
                if !node.queue.is_empty() {
                    node.backoff = Some(rng.gen_range(0..self.cfg.cw.max(1)));
                }
                self.busy_down(air.tx_node, queue, rng);
            }
        }
        notices
    }

    /// Counters summed over all nodes, including removed ones.
    pub fn totals(&self) -> MediumCounters {
        let mut t = self.removed_counters;
        for n in self.nodes.values() {
            t.frames_sent += n.counters.frames_sent;
            t.rx_decoded += n.counters.rx_decoded;
            t.rx_lost += n.counters.rx_lost;
            t.queue_drops += n.counters.queue_drops;
        }
        t
    }
}
