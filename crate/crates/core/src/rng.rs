//! Deterministic random-stream derivation.
//!
//! Every chain and every simulated replicate owns an independent ChaCha
//! stream whose seed is a pure function of the master seed and its role, so
//! results do not depend on execution order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub type ChainRng = ChaCha12Rng;

/// Purpose tags keep streams for different roles apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Chain = 1,
    Replicate = 2,
    StudyFit = 3,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for stream `index` of kind `stream` under `master`.
pub fn derive_seed(master: u64, stream: Stream, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ splitmix64(stream as u64)).wrapping_add(index))
}

pub fn stream_rng(master: u64, stream: Stream, index: u64) -> ChainRng {
    ChainRng::seed_from_u64(derive_seed(master, stream, index))
}
