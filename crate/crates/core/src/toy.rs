//! The toy piano-roll setup: synthetic corpus and a small learned denoiser.

use crate::error::Result;
use crate::music::corpus::toy_corpus;
use crate::music::PianoRoll;
use crate::rng::{substream, Domain};
use crate::schedule::ScheduleSpec;
use crate::score::{train_denoiser, DenoiserConfig, LearnedDenoiser};
use crate::tensor::Tensor;

/// Frames per toy roll (one 1.28 s rule window).
pub const TOY_FRAMES: usize = 128;
pub const TOY_CORPUS_SIZE: usize = 64;

pub fn toy_denoiser_config() -> DenoiserConfig {
    DenoiserConfig {
        hidden: vec![16],
        time_features: 16,
        train_steps: 300,
        batch_size: 16,
        learning_rate: 1e-3,
        variance_floor: 1e-4,
    }
}

/// Training corpus for `seed`.
pub fn toy_rolls(count: usize, seed: u64) -> Vec<PianoRoll> {
    toy_corpus(count, TOY_FRAMES, &mut substream(seed, Domain::Train, u64::MAX - 1, 0))
}

pub fn encode_all(rolls: &[PianoRoll]) -> Vec<Tensor> {
    rolls.iter().map(PianoRoll::encode).collect()
}

/// Trains the toy denoiser on the default 1000-step schedule.
pub fn train_toy_denoiser(seed: u64) -> Result<LearnedDenoiser> {
    let data = encode_all(&toy_rolls(TOY_CORPUS_SIZE, seed));
    train_denoiser(&data, ScheduleSpec::default(), &toy_denoiser_config(), seed)
}
