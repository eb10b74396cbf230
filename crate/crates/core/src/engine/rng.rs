//! Reproducible random substreams.
//!
//! Every replication gets its own ChaCha8 key derived from the master seed
//! and the replication index; each named source (arrivals of one class,
//! services of one activity, routing coins of one class) is a separate
//! ChaCha stream under that key, so the sources never share draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const ARRIVAL: u64 = 1 << 32;
const SERVICE: u64 = 2 << 32;
const ROUTING: u64 = 3 << 32;
const AUXILIARY: u64 = 4 << 32;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed material identifying one replication.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub struct StreamSeed {
    pub master: u64,
    pub replication: u64,
}

impl StreamSeed {
    pub fn new(master: u64, replication: u64) -> Self {
        StreamSeed { master, replication }
    }

    fn key(&self) -> [u8; 32] {
        let mut key = [0u8; 32];
        let mut state = self.master ^ splitmix64(self.replication.wrapping_add(0xA5A5_A5A5));
        for chunk in key.chunks_mut(8) {
            state = splitmix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        key
    }

    fn stream(&self, id: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.key());
        rng.set_stream(id);
        rng
    }
}

/// Per-source generators for one replication of an `I × J` network.
#[derive(Clone, Debug)]
pub struct RngStreams {
    pub arrival: Vec<ChaCha8Rng>,
    /// Indexed `i * J + j`.
    pub service: Vec<ChaCha8Rng>,
    pub routing: Vec<ChaCha8Rng>,
    pub seed: StreamSeed,
}

impl RngStreams {
    pub fn new(seed: StreamSeed, classes: usize, stations: usize) -> Self {
        RngStreams {
            arrival: (0..classes as u64).map(|i| seed.stream(ARRIVAL | i)).collect(),
            service: (0..(classes * stations) as u64).map(|k| seed.stream(SERVICE | k)).collect(),
            routing: (0..classes as u64).map(|i| seed.stream(ROUTING | i)).collect(),
            seed,
        }
    }

    /// A stream outside the network sources, e.g. for diffusion noise.
    pub fn auxiliary(seed: StreamSeed, id: u32) -> ChaCha8Rng {
        seed.stream(AUXILIARY | u64::from(id))
    }
}
