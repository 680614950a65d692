use std::fmt;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Purpose label of a random stream. Each concern draws from its own stream so
/// that adding draws in one subsystem leaves every other sequence untouched.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StreamId {
    Mobility,
    MacBackoff,
    CbfJitter,
    Spawn,
    Equip,
}

impl StreamId {
    pub fn label(self) -> &'static str {
        match self {
            StreamId::Mobility => "mobility",
            StreamId::MacBackoff => "mac-backoff",
            StreamId::CbfJitter => "cbf-jitter",
            StreamId::Spawn => "spawn",
            StreamId::Equip => "equip",
        }
    }
}

impl fmt::Display for StreamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Seeded ChaCha8 stream keyed by `(seed, stream_id)`.
///
/// The derived key uses FNV-1a over the label and a splitmix64 finaliser, both
/// fixed algorithms, so sequences are identical across runs and platforms.
pub struct RngStream {
    seed: u64,
    id: StreamId,
    rng: ChaCha8Rng,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64, id: StreamId) -> Self {
        let key = splitmix64(seed ^ fnv1a(id.label().as_bytes()));
        Self { seed, id, rng: ChaCha8Rng::seed_from_u64(key) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn id(&self) -> StreamId {
        self.id
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }
    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}
