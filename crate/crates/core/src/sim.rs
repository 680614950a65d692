//! Run orchestration: wires mobility, radio, GeoNetworking, DCC and the CPS
//! together on one event queue and collects the metric samples.

use std::collections::{BTreeMap, VecDeque};
use std::rc::Rc;

use crate::config::ScenarioConfig;
use crate::cps::{generate_cpm, lem_update, sense, Cpm, CpsMode, Lem, PerceivedObject};
use crate::dcc::Dcc;
use crate::engine::{EventHandle, EventQueue, RngStream, StreamId};
use crate::geonet::{GeoNetEvent, GeoNetPacket, Router, Transport};
use crate::metrics::{
    AoiBin, AoiSample, CbrSample, EarSample, ObjectsSample, Region, RunResult, StationCounters, Trace, TraceCycle,
    TraceReception, TraceStep, TraceVehicle, TxKind, TxRecord,
};
use crate::mobility::{spawn_plan, Birth, GridMap, MapError, Traffic, VehicleState};
use crate::radio::{Medium, RadioEvent, RadioNotice, Reception};
use crate::{SimTime, VehicleId};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Event {
    MobilityStep,
    CpsCycle(VehicleId),
    Radio(RadioEvent),
    GeoNet(GeoNetEvent),
    /// A station's DCC gap has elapsed and queued forwards may go out.
    DccRelease(VehicleId),
}

impl From<RadioEvent> for Event {
    fn from(e: RadioEvent) -> Self {
        Event::Radio(e)
    }
}

impl From<GeoNetEvent> for Event {
    fn from(e: GeoNetEvent) -> Self {
        Event::GeoNet(e)
    }
}

type Frame = Rc<GeoNetPacket>;

struct Station {
    lem: Lem,
    /// Received objects since the last cycle, hop counts already incremented.
    buffer: Vec<PerceivedObject>,
    dcc: Dcc,
    router: Router,
    cycle: Option<EventHandle>,
    cycle_index: u64,
    forwards: VecDeque<GeoNetPacket>,
    release: Option<(EventHandle, SimTime)>,
    last_cbr: f64,
    counters: StationCounters,
}

#[derive(Default)]
struct Samples {
    ear: Vec<EarSample>,
    aoi_bins: BTreeMap<(SimTime, u8, u8), u64>,
    aoi: Vec<AoiSample>,
    cbr: Vec<CbrSample>,
    objects: Vec<ObjectsSample>,
    transmissions: Vec<TxRecord>,
}

struct Rngs {
    mobility: RngStream,
    mac: RngStream,
    cbf: RngStream,
    spawn: RngStream,
    equip: RngStream,
}

/// One simulation run.
pub struct Simulation {
    cfg: ScenarioConfig,
    map: GridMap,
    traffic: Traffic,
    /// Vehicle states after the latest mobility step, ordered by id.
    world: Vec<VehicleState>,
    medium: Medium<Frame>,
    queue: EventQueue<Event>,
    stations: BTreeMap<VehicleId, Station>,
    retired: Vec<StationCounters>,
    rng: Rngs,
    region: Region,
    d_max: f64,
    duration: SimTime,
    samples: Samples,
    trace: Option<Trace>,
}

impl Simulation {
    /// Builds a run with the configured density and penetration placed at
    /// random. The configuration is expected to be validated.
    pub fn new(cfg: ScenarioConfig) -> Result<Self, MapError> {
        let map = GridMap::build(&cfg.map)?;
        let seed = cfg.scenario.seed;
        let mut spawn = RngStream::new(seed, StreamId::Spawn);
        let mut equip = RngStream::new(seed, StreamId::Equip);
        let births = spawn_plan(
            &map,
            cfg.scenario.density,
            cfg.scenario.density_basis,
            cfg.scenario.penetration,
            &cfg.mobility,
            &mut spawn,
            &mut equip,
        );
        Ok(Self::assemble(cfg, map, &births, spawn, equip))
    }

    /// Builds a run with an explicit initial population.
    pub fn with_births(cfg: ScenarioConfig, births: &[Birth]) -> Result<Self, MapError> {
        let map = GridMap::build(&cfg.map)?;
        let seed = cfg.scenario.seed;
        let spawn = RngStream::new(seed, StreamId::Spawn);
        let equip = RngStream::new(seed, StreamId::Equip);
        Ok(Self::assemble(cfg, map, births, spawn, equip))
    }

    fn assemble(cfg: ScenarioConfig, map: GridMap, births: &[Birth], spawn: RngStream, equip: RngStream) -> Self {
        let seed = cfg.scenario.seed;
        let mut traffic = Traffic::new(&map);
        for b in births {
            traffic.add(*b);
        }
        let world = traffic.states(&map);
        let mut sim = Self {
            medium: Medium::new(cfg.radio.clone()),
            queue: EventQueue::new(),
            stations: BTreeMap::new(),
            retired: Vec::new(),
            rng: Rngs {
                mobility: RngStream::new(seed, StreamId::Mobility),
                mac: RngStream::new(seed, StreamId::MacBackoff),
                cbf: RngStream::new(seed, StreamId::CbfJitter),
                spawn,
                equip,
            },
            region: Region::from_bounds(cfg.metrics.region),
            d_max: cfg.cbf_d_max(),
            duration: cfg.duration(),
            samples: Samples::default(),
            trace: cfg.metrics.trace.then(Trace::default),
            traffic,
            world,
            map,
            cfg,
        };
        let equipped: Vec<VehicleId> = sim.world.iter().filter(|v| v.equipped).map(|v| v.id).collect();
        for id in equipped {
            sim.add_station(id);
        }
        sim.record_step();
        let dt = SimTime::from_millis(sim.cfg.mobility.step_ms);
        sim.queue.schedule(dt, Event::MobilityStep);
        sim
    }

    pub fn map(&self) -> &GridMap {
        &self.map
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn now(&self) -> SimTime {
        self.queue.now()
    }

    pub fn world(&self) -> &[VehicleState] {
        &self.world
    }

    pub fn lem(&self, id: VehicleId) -> Option<&Lem> {
        self.stations.get(&id).map(|s| &s.lem)
    }

    /// Dispatches every event strictly before `until`, capped at the run
    /// duration, and leaves the clock there.
    pub fn run_until(&mut self, until: SimTime) {
        let horizon = if until < self.duration { until } else { self.duration };
        while let Some((_, event)) = self.queue.pop_before(horizon) {
            self.dispatch(event);
        }
        if self.queue.now() < horizon {
            self.queue.advance_to(horizon);
        }
    }

    /// Runs to the configured duration and returns the collected results.
    pub fn run(mut self) -> RunResult {
        self.run_until(self.duration);
        self.finish()
    }

    pub fn finish(mut self) -> RunResult {
        let now = self.queue.now();
        let mut stations = std::mem::take(&mut self.retired);
        for (_, st) in std::mem::take(&mut self.stations) {
            stations.push(Self::close_counters(st, None, now));
        }
        stations.sort_by_key(|c| (c.station, c.joined_at));
        let (spawned, equipped) = self.traffic.spawn_totals();
        RunResult {
            seed: self.cfg.scenario.seed,
            final_time: now,
            events: self.queue.dispatched(),
            ear: self.samples.ear,
            aoi_bins: self.samples
                .aoi_bins
                .into_iter()
                .map(|((aoi, hop, net_hops), count)| AoiBin { aoi, hop, net_hops, count })
                .collect(),
            aoi: self.samples.aoi,
            cbr: self.samples.cbr,
            objects: self.samples.objects,
            transmissions: self.samples.transmissions,
            stations,
            medium: self.medium.totals().into(),
            vehicles_spawned: spawned,
            vehicles_equipped: equipped,
            trace: self.trace,
            config: self.cfg,
        }
    }

    fn close_counters(st: Station, left: Option<SimTime>, _now: SimTime) -> StationCounters {
        let mut c = st.counters;
        c.left_at = left;
        c.dcc_denials = st.dcc.denials();
        c.dcc_occupancy = st.dcc.occupancy();
        c.geonet = st.router.counters();
        c.peak_duplicate_entries = st.router.peak_table_len() as u64;
        c
    }

    fn dispatch(&mut self, event: Event) {
        match event {
            Event::MobilityStep => self.mobility_step(),
            Event::CpsCycle(id) => self.cps_cycle(id),
            Event::Radio(e) => {
                let notices = self.medium.handle(e, &self.map, &mut self.queue, &mut self.rng.mac);
                for n in notices {
                    if let RadioNotice::Delivered(rec) = n {
                        self.on_reception(rec);
                    }
                }
            }
            Event::GeoNet(GeoNetEvent::CbfExpiry { node, key }) => {
                let now = self.queue.now();
                let Some(st) = self.stations.get_mut(&node) else {
                    return;
                };
                if let Some(packet) = st.router.on_timer(key, now) {
                    st.forwards.push_back(packet);
                    self.release_forwards(node);
                }
            }
            Event::DccRelease(id) => {
                if let Some(st) = self.stations.get_mut(&id) {
                    st.release = None;
                    self.release_forwards(id);
                }
            }
        }
    }

    fn state_of(&self, id: VehicleId) -> Option<&VehicleState> {
        self.world.binary_search_by_key(&id, |v| v.id).ok().map(|i| &self.world[i])
    }

    fn logging(&self, position: crate::mobility::Vec2) -> bool {
        self.queue.now() >= self.cfg.warmup() && self.region.contains(position)
    }

    fn add_station(&mut self, id: VehicleId) {
        let now = self.queue.now();
        let position = self.state_of(id).expect("vehicle exists").position;
        self.medium.add_node(id, position);
        let cycle_us = self.cfg.cps.cycle_ms * 1000;
        let phase = rand::Rng::gen_range(&mut self.rng.spawn, 0..cycle_us);
        let handle = self.queue.schedule(now + SimTime::from_micros(phase), Event::CpsCycle(id));
        self.stations.insert(
            id,
            Station {
                lem: Lem::default(),
                buffer: Vec::new(),
                dcc: Dcc::new(self.cfg.dcc.clone()),
                router: Router::new(id),
                cycle: Some(handle),
                cycle_index: 0,
                forwards: VecDeque::new(),
                release: None,
                last_cbr: 0.0,
                counters: StationCounters { station: id, joined_at: now, ..StationCounters::default() },
            },
        );
    }

    fn remove_station(&mut self, id: VehicleId) {
        let now = self.queue.now();
        let Some(mut st) = self.stations.remove(&id) else {
            return;
        };
        if let Some(h) = st.cycle.take() {
            self.queue.cancel(h);
        }
        if let Some((h, _)) = st.release.take() {
            self.queue.cancel(h);
        }
        st.router.shutdown(&mut self.queue);
        if let Some(c) = self.medium.counters(id) {
            st.counters.mac_drops = c.queue_drops;
        }
        self.medium.remove_node(id, &mut self.queue);
        self.retired.push(Self::close_counters(st, Some(now), now));
    }

    fn record_step(&mut self) {
        let now = self.queue.now();
        let seq = self.queue.current_seq();
        if let Some(trace) = self.trace.as_mut() {
            trace.steps.push(TraceStep {
                at: now,
                seq,
                vehicles: self
                    .world
                    .iter()
                    .map(|v| TraceVehicle { id: v.id, position: v.position, equipped: v.equipped })
                    .collect(),
            });
        }
    }

    fn mobility_step(&mut self) {
        let now = self.queue.now();
        let dt_ms = self.cfg.mobility.step_ms;
        let report = self.traffic.step(
            &self.map,
            &self.cfg.mobility,
            self.cfg.scenario.penetration,
            dt_ms as f64 / 1000.0,
            &mut self.rng.mobility,
            &mut self.rng.spawn,
            &mut self.rng.equip,
        );
        for id in &report.despawned {
            self.remove_station(*id);
        }
        self.world = self.traffic.states(&self.map);
        for v in &self.world {
            if v.equipped {
                self.medium.set_position(v.id, v.position);
            }
        }
        for id in &report.spawned {
            if self.state_of(*id).is_some_and(|v| v.equipped) {
                self.add_station(*id);
            }
        }
        self.record_step();
        self.queue.schedule(now + SimTime::from_millis(dt_ms), Event::MobilityStep);
    }

    fn cps_cycle(&mut self, id: VehicleId) {
        let now = self.queue.now();
        let seq = self.queue.current_seq().expect("dispatching");
        let cycle = SimTime::from_millis(self.cfg.cps.cycle_ms);
        let ego = *self.state_of(id).expect("station has a vehicle");
        let logging = self.logging(ego.position);
        let next = self.queue.schedule(now + cycle, Event::CpsCycle(id));
        if let Some(trace) = self.trace.as_mut() {
            trace.cycles.push(TraceCycle { station: id, at: now, seq });
        }

        let cfg = &self.cfg;
        let st = self.stations.get_mut(&id).expect("station exists");
        st.cycle = Some(next);
        st.counters.cycles += 1;
        let ear_every = cfg.metrics.ear_interval_ms / cfg.cps.cycle_ms;
        let sample_ear = st.cycle_index % ear_every == 0;
        st.cycle_index += 1;

        st.lem.prune(now, SimTime::from_millis(cfg.cps.object_timeout_ms));
        st.router.expire_duplicates(now);
        let buffered = std::mem::take(&mut st.buffer);
        lem_update(&mut st.lem, buffered, cfg.cps.max_hop, cfg.cps.lem_update_mode);
        for o in sense(&ego, &self.world, &self.map, cfg.cps.sensor_radius_m, now) {
            st.lem.put(o);
        }

        if logging && sample_ear {
            let r2 = cfg.metrics.range_of_interest_m * cfg.metrics.range_of_interest_m;
            let max_age = SimTime::from_millis(cfg.metrics.max_aoi_ms);
            let mut in_range = 0;
            let mut perceived = 0;
            for v in &self.world {
                if v.id != id && v.position.distance_sq(ego.position) <= r2 {
                    in_range += 1;
                    if st.lem.is_fresh(v.id, now, max_age) {
                        perceived += 1;
                    }
                }
            }
            self.samples.ear.push(EarSample { station: id, at: now, perceived, in_range });
        }

        let cbr = self.medium.cbr(id, now, SimTime::from_millis(cfg.dcc.cbr_window_ms));
        let state = st.dcc.update(cbr.clamp(0.0, 1.0));
        st.last_cbr = cbr;
        if logging {
            self.samples.cbr.push(CbrSample { station: id, at: now, cbr, state });
        }

        let generation = generate_cpm(&st.lem, &cfg.cps, now);
        if generation.potential > 0 && logging {
            self.samples.objects.push(ObjectsSample {
                station: id,
                at: now,
                potential: generation.potential as u32,
                carried: generation.objects.len() as u32,
            });
        }
        if generation.objects.is_empty() {
            self.release_forwards(id);
            return;
        }
        st.counters.cpms_generated += 1;
        // Queued forwards are older than this cycle's CPM and go first.
        self.release_forwards(id);
        let cfg = &self.cfg;
        let st = self.stations.get_mut(&id).expect("station exists");
        if !st.dcc.send_condition(now) {
            st.dcc.record_denial();
            return;
        }
        st.lem.mark_included(&generation.objects, now);
        let cpm = Rc::new(Cpm { sender_id: id, sender_position: ego.position, generated_at: now, objects: generation.objects });
        let transport = if cfg.cps.mode == CpsMode::GbcForwarding { Transport::Gbc } else { Transport::Shb };
        let packet = st.router.send(transport, cpm, ego.position, now, &cfg.gbc);
        st.counters.cpms_sent += 1;
        self.transmit(id, packet, TxKind::Cpm, true);
    }

    /// Grants a transmission through DCC and hands it to the MAC.
    fn transmit(&mut self, id: VehicleId, packet: GeoNetPacket, kind: TxKind, gated: bool) {
        let now = self.queue.now();
        let position = self.state_of(id).expect("vehicle exists").position;
        let in_region = self.region.contains(position);
        let st = self.stations.get_mut(&id).expect("station exists");
        let gap = st.dcc.last_tx().map(|t| now - t);
        if gated {
            st.dcc.record_grant(now);
        }
        let bytes = self.cfg.cps.frame_bytes(packet.payload.objects.len());
        self.samples.transmissions.push(TxRecord {
            station: id,
            at: now,
            kind,
            state: st.dcc.state(),
            cbr: st.last_cbr,
            min_gap: st.dcc.min_gap(),
            gap,
            objects: packet.payload.objects.len() as u32,
            max_object_hop: packet.payload.objects.iter().map(|o| o.hop_count).max().unwrap_or(0),
            net_hops: packet.hops_travelled() + 1,
            bytes: bytes as u32,
            gated,
            in_region,
        });
        if kind == TxKind::Forward {
            st.counters.forwards_sent += 1;
        }
        if !self.medium.submit(id, Rc::new(packet), bytes, &mut self.queue, &mut self.rng.mac) {
            st.counters.mac_drops += 1;
        }
    }

    /// Sends queued GBC forwards as far as DCC allows, dropping expired ones,
    /// and arms a release timer for the rest.
    fn release_forwards(&mut self, id: VehicleId) {
        let now = self.queue.now();
        loop {
            let st = self.stations.get_mut(&id).expect("station exists");
            while st.forwards.front().is_some_and(|p| now >= p.expires_at()) {
                st.forwards.pop_front();
                st.counters.forwards_expired += 1;
                st.router.note_dropped();
            }
            if st.forwards.is_empty() {
                if let Some((h, _)) = st.release.take() {
                    self.queue.cancel(h);
                }
                return;
            }
            let gated = self.cfg.gbc.dcc_gated;
            if !gated || st.dcc.send_condition(now) {
                let packet = st.forwards.pop_front().expect("non-empty");
                self.transmit(id, packet, TxKind::Forward, gated);
                continue;
            }
            let at = st.dcc.next_allowed();
            match st.release {
                Some((_, t)) if t == at => {}
                _ => {
                    if let Some((h, _)) = st.release.take() {
                        self.queue.cancel(h);
                    }
                    let h = self.queue.schedule(at, Event::DccRelease(id));
                    st.release = Some((h, at));
                }
            }
            return;
        }
    }

    fn on_reception(&mut self, rec: Reception<Frame>) {
        let now = self.queue.now();
        let seq = self.queue.current_seq().expect("dispatching");
        let Some(position) = self.state_of(rec.receiver).map(|v| v.position) else {
            return;
        };
        let logging = self.logging(position);
        let Some(st) = self.stations.get_mut(&rec.receiver) else {
            return;
        };
        let packet = &rec.payload;
        let out =
            st.router.receive(packet, position, rec.tx_position, &self.cfg.gbc, self.d_max, &mut self.queue, &mut self.rng.cbf);
        if !out.deliver {
            return;
        }
        st.counters.cpms_received += 1;
        let net_hops = packet.hops_travelled() + 1;
        let mut traced = Vec::new();
        for o in &packet.payload.objects {
            if o.object_id == rec.receiver {
                continue;
            }
            let mut obj = *o;
            obj.hop_count = o.hop_count.saturating_add(1);
            st.buffer.push(obj);
            if logging {
                let key = (now - obj.measured_at, obj.hop_count, net_hops);
                *self.samples.aoi_bins.entry(key).or_insert(0) += 1;
                if self.cfg.metrics.aoi_samples {
                    self.samples.aoi.push(AoiSample {
                        receiver: rec.receiver,
                        sender: rec.tx_node,
                        object: obj.object_id,
                        measured_at: obj.measured_at,
                        at: now,
                        hop: obj.hop_count,
                        net_hops,
                    });
                }
            }
            if self.trace.is_some() {
                traced.push((obj.object_id, obj.measured_at, obj.hop_count));
            }
        }
        if let Some(trace) = self.trace.as_mut() {
            trace.receptions.push(TraceReception { station: rec.receiver, at: now, seq, objects: traced });
        }
    }
}

/// Validates nothing; runs `cfg` end to end.
pub fn run(cfg: ScenarioConfig) -> Result<RunResult, MapError> {
    Ok(Simulation::new(cfg)?.run())
}
