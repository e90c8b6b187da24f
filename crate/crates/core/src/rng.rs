//! Deterministic random-number streams.
//!
//! Every stochastic input of a simulation run draws from its own ChaCha8
//! stream. Streams share the master seed as key and are told apart by the
//! stream id `(replication << 32) | (route << 8) | purpose`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Interarrival = 0,
    Size = 1,
    Initial = 2,
}

pub fn stream(seed: u64, replication: u32, route: usize, purpose: Purpose) -> ChaCha8Rng {
    assert!(route < 1 << 24, "route index too large for stream id");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((replication as u64) << 32) | ((route as u64) << 8) | purpose as u64);
    rng
}
