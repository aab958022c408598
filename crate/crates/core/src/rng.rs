//! Counter-based random substreams.
//!
//! Every consumer of randomness gets a ChaCha8 generator keyed by the user
//! seed plus a 64-bit stream id. The id packs a purpose tag in the top
//! 16 bits and up to three 16-bit counters below it, so adding a run,
//! domain or trial never shifts the stream any other consumer sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags occupying bits 48..64 of a stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u16)]
pub enum Purpose {
    Data = 1,
    Init = 2,
    Batches = 3,
    Oracle = 4,
    Verify = 5,
}

pub fn stream_id(purpose: Purpose, a: u64, b: u64, c: u64) -> u64 {
    debug_assert!(a < 1 << 16 && b < 1 << 16 && c < 1 << 16);
    ((purpose as u64) << 48) | (a << 32) | (b << 16) | c
}

pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
