//! Reactive decentralized congestion control: a CBR-driven state machine
//! that imposes a minimum gap between a station's transmissions.

use serde::{Deserialize, Serialize};

use crate::SimTime;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DccState {
    Relaxed,
    Active1,
    Active2,
    Active3,
    Restrictive,
}

impl DccState {
    pub const ALL: [DccState; 5] =
        [DccState::Relaxed, DccState::Active1, DccState::Active2, DccState::Active3, DccState::Restrictive];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            DccState::Relaxed => "relaxed",
            DccState::Active1 => "active1",
            DccState::Active2 => "active2",
            DccState::Active3 => "active3",
            DccState::Restrictive => "restrictive",
        }
    }
}

/// CBR thresholds and per-state minimum gaps. A CBR at a threshold belongs to
/// the state above it (lower-inclusive intervals).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DccConfig {
    pub enabled: bool,
    /// Upper CBR bounds of Relaxed, Active1, Active2 and Active3.
    pub thresholds: [f64; 4],
    /// Minimum gap in ms for each state, Relaxed first.
    pub gaps_ms: [u64; 5],
    pub cbr_window_ms: u64,
    /// Average the current and previous CBR sample before the state lookup.
    pub two_sample_average: bool,
}

impl Default for DccConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            thresholds: [0.30, 0.40, 0.50, 0.65],
            gaps_ms: [100, 200, 400, 500, 1000],
            cbr_window_ms: 100,
            two_sample_average: false,
        }
    }
}

impl DccConfig {
    pub fn state_for(&self, cbr: f64) -> DccState {
        let idx = self.thresholds.iter().position(|t| cbr < *t).unwrap_or(4);
        DccState::ALL[idx]
    }

    pub fn min_gap(&self, state: DccState) -> SimTime {
        if !self.enabled {
            return SimTime::ZERO;
        }
        SimTime::from_millis(self.gaps_ms[state.index()])
    }

    pub fn validate(&self) -> Result<(), String> {
        let mut prev = 0.0;
        for t in self.thresholds {
            if !(t.is_finite() && t > prev && t <= 1.0) {
                return Err(format!("dcc.thresholds must be increasing within (0, 1], got {:?}", self.thresholds));
            }
            prev = t;
        }
        if self.gaps_ms.windows(2).any(|w| w[0] > w[1]) {
            return Err(format!("dcc.gaps_ms must be non-decreasing, got {:?}", self.gaps_ms));
        }
        if self.cbr_window_ms == 0 {
            return Err("dcc.cbr_window_ms must be positive".into());
        }
        Ok(())
    }
}

/// Per-station DCC gate.
#[derive(Clone, Debug)]
pub struct Dcc {
    cfg: DccConfig,
    state: DccState,
    previous_cbr: Option<f64>,
    last_tx: Option<SimTime>,
    occupancy: [u64; 5],
    denials: u64,
}

impl Dcc {
    pub fn new(cfg: DccConfig) -> Self {
        Self { cfg, state: DccState::Relaxed, previous_cbr: None, last_tx: None, occupancy: [0; 5], denials: 0 }
    }

    pub fn state(&self) -> DccState {
        self.state
    }

    pub fn last_tx(&self) -> Option<SimTime> {
        self.last_tx
    }

    pub fn set_last_tx(&mut self, t: Option<SimTime>) {
        self.last_tx = t;
    }

    pub fn min_gap(&self) -> SimTime {
        self.cfg.min_gap(self.state)
    }

    /// Feeds one CBR measurement and moves to the matching state.
    pub fn update(&mut self, cbr: f64) -> DccState {
        debug_assert!((0.0..=1.0).contains(&cbr));
        let effective = match (self.cfg.two_sample_average, self.previous_cbr) {
            (true, Some(prev)) => 0.5 * (prev + cbr),
            _ => cbr,
        };
        self.previous_cbr = Some(cbr);
        self.state = self.cfg.state_for(effective);
        self.occupancy[self.state.index()] += 1;
        self.state
    }

    /// Whether a transmission may be granted at `now`.
    pub fn send_condition(&self, now: SimTime) -> bool {
        match self.last_tx {
            None => true,
            Some(last) => now.saturating_sub(last) >= self.min_gap() && now >= last,
        }
    }

    /// Earliest instant at which [`Dcc::send_condition`] becomes true in the current state.
    pub fn next_allowed(&self) -> SimTime {
        self.last_tx.map_or(SimTime::ZERO, |t| t + self.min_gap())
    }

    pub fn record_grant(&mut self, now: SimTime) {
        self.last_tx = Some(now);
    }

    pub fn record_denial(&mut self) {
        self.denials += 1;
    }

    pub fn denials(&self) -> u64 {
        self.denials
    }

    /// Number of updates spent in each state, Relaxed first.
    pub fn occupancy(&self) -> [u64; 5] {
        self.occupancy
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn state_table() {
        let c = DccConfig::default();
        assert_eq!(c.state_for(0.10), DccState::Relaxed);
        assert_eq!(c.min_gap(DccState::Relaxed), SimTime::from_millis(100));
        assert_eq!(c.state_for(0.70), DccState::Restrictive);
        assert_eq!(c.min_gap(DccState::Restrictive), SimTime::from_millis(1000));
        assert_eq!(c.state_for(0.30), DccState::Active1);
        assert_eq!(c.state_for(0.399), DccState::Active1);
        assert_eq!(c.state_for(0.40), DccState::Active2);
        assert_eq!(c.state_for(0.50), DccState::Active3);
        assert_eq!(c.state_for(0.65), DccState::Restrictive);
        assert_eq!(c.state_for(1.0), DccState::Restrictive);
        assert_eq!(c.state_for(0.0), DccState::Relaxed);
    }

    #[test]
    fn gaps_increase_with_state() {
        let c = DccConfig::default();
        let gaps: Vec<_> = DccState::ALL.iter().map(|s| c.min_gap(*s)).collect();
        assert!(gaps.windows(2).all(|w| w[0] < w[1]));
        assert!(c.validate().is_ok());
    }

    #[test]
    fn relaxed_gap_boundary() {
        let mut d = Dcc::new(DccConfig::default());
        d.update(0.05);
        d.record_grant(SimTime::ZERO);
        assert!(d.send_condition(SimTime::from_millis(100)));
        assert!(!d.send_condition(SimTime::from_millis(99)));
    }

    #[test]
    fn restrictive_grants_once_per_second() {
        let mut d = Dcc::new(DccConfig::default());
        let mut grants = Vec::new();
        for k in 0..30u64 {
            let now = SimTime::from_millis(100 * k);
            d.update(0.8);
            if d.send_condition(now) {
                d.record_grant(now);
                grants.push(now);
            }
        }
        assert_eq!(grants.len(), 3);
        assert!(grants.windows(2).all(|w| w[1] - w[0] >= SimTime::from_millis(1000)));
    }

    #[test]
    fn averaging_smooths_a_spike() {
        let mut d = Dcc::new(DccConfig { two_sample_average: true, ..DccConfig::default() });
        d.update(0.1);
        assert_eq!(d.update(0.7), DccState::Active1);
        assert_eq!(d.occupancy()[0], 1);
    }

    #[test]
    fn disabled_never_blocks() {
        let mut d = Dcc::new(DccConfig { enabled: false, ..DccConfig::default() });
        d.update(0.9);
        d.record_grant(SimTime::from_millis(5));
        assert!(d.send_condition(SimTime::from_millis(5)));
    }
}
