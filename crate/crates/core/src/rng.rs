//! Deterministic random-stream derivation.
//!
//! Every random decision in the simulator draws from a ChaCha8 stream derived
//! from `(run seed, purpose tag, extra tags…)` via splitmix64 mixing. Distinct
//! purposes get distinct, statistically independent streams, so e.g. a client's
//! batch order does not change when another client consumes more randomness,
//! and clients trained concurrently produce bit-identical results to a
//! sequential run (scheduling independence).
//!
//! ChaCha8 is used (rather than `StdRng`) because its output is specified and
//! stable across `rand` releases and platforms.

use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

/// Purpose tags. Each call site that needs randomness owns one constant here;
/// extra context (round, client id, attempt counter) is appended as further tags.
pub mod tag {
    /// Synthetic dataset noise draws.
    pub const DATASET: u64 = 0x01;
    /// Client partitioning (inventory shuffles, Dirichlet draws, class rotation).
    pub const PARTITION: u64 = 0x02;
    /// Context-marker row selection.
    pub const MARKER: u64 = 0x03;
    /// Per-round participating-client sampling.
    pub const CLIENT_SAMPLE: u64 = 0x04;
    /// Per-epoch local batch shuffling.
    pub const LOCAL_SHUFFLE: u64 = 0x05;
    /// Mix-up Beta weight draws.
    pub const BETA: u64 = 0x06;
    /// Buffer-batch sampling (uniform with replacement).
    pub const BUFFER_DRAW: u64 = 0x07;
    /// Feature-extraction row selection (post-aggregation sharing).
    pub const EXTRACT: u64 = 0x08;
    /// Merged-buffer shuffle on the server.
    pub const MERGE_SHUFFLE: u64 = 0x09;
    /// Model weight initialization.
    pub const MODEL_INIT: u64 = 0x0A;
    /// Shared-pool construction (FedMix grouping / FedData sampling).
    pub const POOL: u64 = 0x0B;
    /// Batch selection inside mean distance-correlation measurement.
    pub const METRIC_BATCH: u64 = 0x0C;
    /// Privacy-probe attacker training (init, shuffles, subset draws).
    pub const PROBE: u64 = 0x0D;
    /// Test-set generation (same mixture means, independent noise).
    pub const DATASET_TEST: u64 = 0x0E;
}

/// One round of splitmix64 — a well-mixed 64-bit permutation step.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a base seed with context tags into a single 64-bit stream seed.
pub fn mix(seed: u64, tags: &[u64]) -> u64 {
    let mut state = splitmix64(seed);
    for &t in tags {
        state = splitmix64(state ^ t.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    }
    state
}

/// Derive an independent ChaCha8 stream for `(seed, tags…)`.
pub fn derive_rng(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, tags))
}
