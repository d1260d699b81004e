//! Training-free guidance for diffusion models with non-differentiable rules.
//!
//! The sampler draws several candidate next states at each reverse step and
//! keeps the one whose clean-sample estimate best satisfies a rule loss, so
//! the rule never has to be differentiated. Around that core sit the noise
//! schedule, two noise-prediction backends (an exact Gaussian mixture and a
//! small learned denoiser), symbolic-music rules on piano rolls, MIDI and
//! piano-roll I/O, and evaluation metrics.

pub mod error;
pub mod evaluation;
pub mod guidance;
pub mod io;
pub mod music;
pub mod rng;
pub mod schedule;
pub mod score;
pub mod tensor;
pub mod toy;
pub mod verify;

pub use error::{Error, Result};
pub use tensor::Tensor;
