use std::collections::VecDeque;

use crate::SimTime;

/// Per-node record of channel-busy time (own transmissions plus sensed
/// frames), kept as a union of intervals over a bounded history.
#[derive(Debug, Clone)]
pub struct BusyLedger {
    closed: VecDeque<(SimTime, SimTime)>,
    open_since: Option<SimTime>,
    retention: SimTime,
    total: SimTime,
}

impl BusyLedger {
    pub fn new(retention: SimTime) -> Self {
        Self { closed: VecDeque::new(), open_since: None, retention, total: SimTime::ZERO }
    }

    pub fn is_busy(&self) -> bool {
        self.open_since.is_some()
    }

    pub fn open(&mut self, now: SimTime) {
        if self.open_since.is_none() {
            self.open_since = Some(now);
        }
    }

    pub fn close(&mut self, now: SimTime) {
        if let Some(start) = self.open_since.take() {
            if now > start {
                self.total += now - start;
                match self.closed.back_mut() {
                    Some(last) if last.1 >= start => last.1 = last.1.max(now),
                    _ => self.closed.push_back((start, now)),
                }
            }
            let horizon = now.saturating_sub(self.retention);
            while self.closed.front().is_some_and(|iv| iv.1 <= horizon) {
                self.closed.pop_front();
            }
        }
    }

    /// Busy time inside `[now - window, now]`.
    pub fn busy_in(&self, now: SimTime, window: SimTime) -> SimTime {
        let from = now.saturating_sub(window);
        let mut busy = 0u64;
        for &(a, b) in self.closed.iter().rev() {
            if b <= from {
                break;
            }
            let lo = a.max(from);
            let hi = b.min(now);
            if hi > lo {
                busy += (hi - lo).as_micros();
            }
        }
        if let Some(a) = self.open_since {
            let lo = a.max(from);
            if now > lo {
                busy += (now - lo).as_micros();
            }
        }
        SimTime::from_micros(busy)
    }

    /// Channel busy ratio over the trailing window, in `[0, 1]`.
    pub fn cbr(&self, now: SimTime, window: SimTime) -> f64 {
        let w = window.min(now).as_micros();
        if w == 0 {
            return 0.0;
        }
        (self.busy_in(now, window).as_micros() as f64 / w as f64).clamp(0.0, 1.0)
    }

    pub fn total_busy(&self, now: SimTime) -> SimTime {
        match self.open_since {
            Some(a) if now > a => self.total + (now - a),
            _ => self.total,
        }
    }
}
