//! MIDI and PR01 persistence, and edit masks.

pub mod mask;
pub mod midi;
pub mod pr01;

pub use mask::EditMask;
pub use midi::{midi_to_roll, roll_to_midi};
pub use pr01::{decode_roll, encode_roll, load_roll, save_roll};

use std::path::Path;

use crate::error::{Error, Result};
use crate::music::PianoRoll;

/// Reads a MIDI file into a roll of `frames` frames.
pub fn read_midi(path: impl AsRef<Path>, frames: usize) -> Result<PianoRoll> {
    let path = path.as_ref();
    midi_to_roll(&std::fs::read(path).map_err(|e| Error::io(path, e))?, frames)
}

pub fn write_midi(path: impl AsRef<Path>, roll: &PianoRoll) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, roll_to_midi(roll)).map_err(|e| Error::io(path, e))
}

/// Loads a roll from `.mid`/`.midi` (at `frames` frames) or PR01 (any other extension).
pub fn read_roll_any(path: impl AsRef<Path>, frames: usize) -> Result<PianoRoll> {
    let path = path.as_ref();
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("mid") | Some("midi") => read_midi(path, frames),
        _ => load_roll(path),
    }
}
