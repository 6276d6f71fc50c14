//! Deterministic random-stream derivation.
//!
//! Every consumer of randomness derives its own generator from the global
//! seed and a structured stream key, so results never depend on scheduling
//! order or thread count. Keys pack (domain, sample, pilot, molecule) into
//! a u64 counter; the counter is mixed through SplitMix64 into a full
//! Xoshiro256++ state.

use rand_xoshiro::rand_core::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

/// Independent top-level randomness domains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    /// Molecule trajectories inside pilot simulations.
    Molecule = 0,
    /// Scenario pose sampling.
    Pose = 1,
    /// Model initialization and epoch shuffling.
    Train = 2,
    /// Channel validation runs.
    Validate = 3,
    /// Miscellaneous exports (deterministic subsampling).
    Export = 4,
}

/// Packs a stream key: [domain:4][sample:32][pilot:4][molecule:24].
pub fn stream_key(domain: Domain, sample: u64, pilot: u64, molecule: u64) -> u64 {
    debug_assert!(sample < (1 << 32));
    debug_assert!(pilot < (1 << 4));
    debug_assert!(molecule < (1 << 24));
    ((domain as u64) << 60) | (sample << 28) | (pilot << 24) | molecule
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent generator for (seed, key).
pub fn derive_rng(seed: u64, key: u64) -> Xoshiro256PlusPlus {
    // absorb seed and key through two mix rounds, then expand to the
    // 256-bit state with the splitmix sequence (the reference seeding
    // scheme for xoshiro generators)
    let mut state = seed;
    let a = splitmix64(&mut state);
    state ^= key.wrapping_mul(0xd605_bbb5_8c8a_bc2d);
    let b = splitmix64(&mut state);
    state = a ^ b.rotate_left(17);
    let mut s = [0u8; 32];
    for chunk in s.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    Xoshiro256PlusPlus::from_seed(s)
}

/// Shorthand for a molecule's trajectory stream.
pub fn molecule_rng(seed: u64, sample: u64, pilot: u64, molecule: u64) -> Xoshiro256PlusPlus {
    derive_rng(seed, stream_key(Domain::Molecule, sample, pilot, molecule))
}

/// Derives a child seed from (seed, tag), e.g. the per-sample scene seed.
pub fn mix_seed(seed: u64, tag: u64) -> u64 {
    let mut state = seed;
    let a = splitmix64(&mut state);
    state ^= tag.wrapping_mul(0xd605_bbb5_8c8a_bc2d);
    a ^ splitmix64(&mut state).rotate_left(23)
}
