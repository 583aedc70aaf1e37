//! Deterministic RNG streams.
//!
//! Every random draw in a run comes from a ChaCha stream keyed by
//! `(run seed, domain, a, b)`, e.g. `(seed, TRAIN_TASK, iteration, task_index)`,
//! so batches can be generated in any order or in parallel with identical results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub const INIT: u64 = 1;
pub const TRAIN_TASK: u64 = 2;
pub const EVAL_TASK: u64 = 3;
pub const SELFTEST: u64 = 4;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream(seed: u64, domain: u64, a: u64, b: u64) -> StreamRng {
    let mut h = splitmix(seed);
    for part in [domain, a, b] {
        h = splitmix(h ^ part);
    }
    ChaCha8Rng::seed_from_u64(h)
}
