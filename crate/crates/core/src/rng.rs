//! Seeded random substreams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream. The key is
//! derived from `(seed, domain)` and the 64-bit ChaCha stream id selects an
//! independent substream inside that key, so any unit of work (one
//! allocation attempt, one chunk of sphere samples) can be replayed in
//! isolation and results never depend on how work is split across threads.
//!
//! Stream layout:
//!
//! | domain          | stream index                                        |
//! |-----------------|-----------------------------------------------------|
//! | `Reference`     | allocation epoch                                    |
//! | `Attempt`       | `epoch * max_attempts_per_candidate + attempt`      |
//! | `UniformSphere` | chunk of [`SAMPLE_CHUNK`] rows                      |
//! | `VmfMeans`      | cluster index                                       |
//! | `VmfRows`       | row index                                           |
//! | `Plant`         | row index                                           |
//! | `Subsample`     | 0                                                   |
//! | `Simulation`    | trial index                                         |

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Rows per substream for chunked samplers.
pub const SAMPLE_CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Reference = 1,
    Attempt = 2,
    UniformSphere = 3,
    VmfMeans = 4,
    VmfRows = 5,
    Plant = 6,
    Subsample = 7,
    Simulation = 8,
}

pub fn substream(seed: u64, domain: Domain, index: u64) -> StreamRng {
    let key = seed ^ (domain as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}

/// `k` distinct indices below `n` (all of them when `k >= n`), in
/// increasing order.
pub fn subsample_indices(n: usize, k: usize, seed: u64) -> Vec<usize> {
    if k >= n {
        return (0..n).collect();
    }
    let mut idx = rand::seq::index::sample(&mut substream(seed, Domain::Subsample, 0), n, k).into_vec();
    idx.sort_unstable();
    idx
}
