//! Mixed human/robot traffic at a single intersection: simulator, Stop/Go
//! environment, DQN controller, metrics and experiment drivers.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod agent;
pub mod dynamics;
pub mod env;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod parallel;
pub mod topology;

/// Mixes a base seed with a stream tag (splitmix64 finalizer), so that runs,
/// iterations and sweep points draw from unrelated generators.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base
        ^ stream
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
