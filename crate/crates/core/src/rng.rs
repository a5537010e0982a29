//! Seed derivation. Every randomized operation in the workspace takes an
//! explicit 64-bit seed; compound operations derive per-step seeds with a
//! SplitMix64 mix so that results do not depend on execution order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One SplitMix64 step: mixes the state and returns the next output.
pub fn splitmix64(state: &mut u64) {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
}

fn finalize(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes an arbitrary word sequence into a single 64-bit seed.
pub fn mix(words: &[u64]) -> u64 {
    let mut state = 0x51ed_2701_989d_f625u64;
    let mut out = 0u64;
    for &w in words {
        splitmix64(&mut state);
        out = finalize(out ^ finalize(w.wrapping_add(state)));
    }
    out
}

/// Deterministic RNG for a derived seed.
pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Seed for client `client_id`'s local work at federation round `round`.
pub fn client_round_seed(master: u64, client_id: u64, round: u64) -> u64 {
    mix(&[master, 0xc11e_a7, client_id, round])
}

/// Seed for the server's client-selection draw at `round`.
pub fn selection_seed(master: u64, round: u64) -> u64 {
    mix(&[master, 0x5e1e_c7, round])
}

/// Seed for FedEraser's calibration pass, decoupled from the training stream.
pub fn calibration_seed(master: u64, client_id: u64, round: u64) -> u64 {
    mix(&[master, 0xca11_b8, client_id, round])
}
