//! Keyed random streams.
//!
//! Every random draw in a run comes from a ChaCha stream addressed by
//! `(seed, scenario, replicate, role)`. The stream id packs the three
//! counters into disjoint bit ranges, so distinct addresses never share a
//! stream and results do not depend on which worker evaluates a replicate.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SCENARIO_BITS: u32 = 24;
const REP_BITS: u32 = 32;
const ROLE_BITS: u32 = 8;

/// What a stream is used for. Each role gets its own substream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Role {
    VillageSizes = 1,
    VillageCovariates = 2,
    ChildCovariates = 3,
    Baseline = 4,
    OutcomeTuning = 6,
    SelectionTuning = 7,
    OutcomeIntercepts = 8,
    Outcomes = 9,
    SelectionIntercepts = 10,
    Attendance = 11,
    VillageSampling = 12,
    PopulationRedraw = 13,
}

pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Packs `(scenario, rep, role)` into a ChaCha stream id.
///
/// Panics if a counter exceeds its bit budget (2^24 scenarios, 2^32 reps).
pub fn stream_id(scenario: u32, rep: u32, role: Role) -> u64 {
    assert!(
        u64::from(scenario) < (1u64 << SCENARIO_BITS),
        "scenario ordinal {scenario} exceeds {SCENARIO_BITS} bits"
    );
    (u64::from(scenario) << (REP_BITS + ROLE_BITS)) | (u64::from(rep) << ROLE_BITS) | role as u64
}

#[derive(Debug, Clone)]
pub struct Streams {
    key: [u8; 32],
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        let mut state = seed;
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        Streams { key }
    }

    pub fn stream(&self, scenario: u32, rep: u32, role: Role) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(stream_id(scenario, rep, role));
        rng
    }

    /// Derives a fresh 64-bit seed for an addressed child computation.
    pub fn derive_seed(&self, scenario: u32, rep: u32, role: Role) -> u64 {
        use rand::RngCore;
        self.stream(scenario, rep, role).next_u64()
    }
}
