//! Keyed random substreams.
//!
//! Every random draw in a sampling run comes from a generator seeded by
//! `(run seed, domain, step, index)`. Changing the candidate count therefore
//! never perturbs the noise drawn at other steps, and candidate 0 at step `t`
//! is the same draw an unguided run uses at step `t`.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::tensor::Tensor;

pub type StreamRng = Xoshiro256PlusPlus;

/// Purpose of a substream; part of the key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    /// Initial `x_T`.
    Init = 1,
    /// Per-step candidate noise `z^i`.
    Step = 2,
    /// Softmax selection draws.
    Select = 3,
    /// Editing: initial noising of the source.
    EditInit = 4,
    /// Monte-Carlo desirability rollouts.
    Rollout = 5,
    /// Training minibatches.
    Train = 6,
    /// Oracle and verification draws.
    Oracle = 7,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes the key components into a single 64-bit seed.
pub fn stream_seed(seed: u64, domain: Domain, step: u64, index: u64) -> u64 {
    let mut h = splitmix(seed);
    h = splitmix(h ^ domain as u64);
    h = splitmix(h ^ step);
    splitmix(h ^ index)
}

pub fn substream(seed: u64, domain: Domain, step: u64, index: u64) -> StreamRng {
    StreamRng::seed_from_u64(stream_seed(seed, domain, step, index))
}

/// Standard-normal tensor drawn from the keyed substream.
pub fn normal_tensor(shape: &[usize], seed: u64, domain: Domain, step: u64, index: u64) -> Tensor {
    Tensor::randn(shape, &mut substream(seed, domain, step, index))
}
