//! Seeded random streams.
//!
//! Every run derives independent streams from one seed so that a control run
//! and a shifted run with the same seed share initialization and batch order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type RunRng = ChaCha8Rng;

pub const STREAM_INIT: u64 = 1;
pub const STREAM_SHIFT: u64 = 2;
pub const STREAM_TRAIN: u64 = 3;
pub const STREAM_REFERENCE: u64 = 4;
pub const STREAM_PROBE: u64 = 5;

pub fn stream(seed: u64, stream: u64) -> RunRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
