//! Counter-based random streams.
//!
//! Every random quantity in the crate is addressed by `(seed, domain, index)`:
//! the ChaCha key is derived from the seed and the domain tag, and the index
//! selects the ChaCha stream. A draw therefore never depends on how many other
//! draws happened before it or on which worker produced it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Separates the key spaces of unrelated consumers sharing one user seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    SkCouplings = 1,
    EaCouplings = 2,
    HopfieldPatterns = 3,
    FactorizedField = 4,
    ConstructiveField = 5,
    PspinAuxiliary = 6,
    PspinCouplings = 7,
    Bootstrap = 8,
    Verify = 9,
    PilotField = 10,
    PspinPilot = 11,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct CounterRng {
    base: ChaCha8Rng,
}

impl CounterRng {
    pub fn new(seed: u64, domain: Domain) -> Self {
        let mut key = [0u8; 32];
        let mut state = seed ^ (domain as u64).rotate_left(32);
        for chunk in key.chunks_exact_mut(8) {
            state = splitmix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        CounterRng {
            base: ChaCha8Rng::from_seed(key),
        }
    }

    /// Independent generator for slot `index`.
    pub fn stream(&self, index: u64) -> ChaCha8Rng {
        let mut rng = self.base.clone();
        rng.set_stream(index);
        rng
    }
}

/// Index of the unordered pair `i < j` that does not depend on the system size.
pub(crate) fn pair_index(i: usize, j: usize) -> u64 {
    debug_assert!(i < j);
    let j = j as u64;
    j * (j - 1) / 2 + i as u64
}
