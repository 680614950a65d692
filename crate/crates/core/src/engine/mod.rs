//! Discrete-event core: simulation clock, event queue and seeded random streams.

mod queue;
mod rng;
mod time;

pub use queue::{EventHandle, EventQueue, ScheduleError};
pub use rng::{RngStream, StreamId};
pub use time::SimTime;
