//! The PR01 piano-roll file format.
//!
//! ```text
//! offset  size          content
//! 0       4             magic "PR01"
//! 4       4             u32 LE channels (always 3)
//! 8       4             u32 LE pitches (always 128)
//! 12      4             u32 LE frames F
//! 16      3 * 128 * F   u8 cells, channel-major: index c*128*F + p*F + f
//! ```
//! Channels are velocity (0..=127), onset (0/1) and pedal (0/1).

use std::path::Path;

use crate::error::{Error, Result};
use crate::music::{PianoRoll, CHANNELS, PITCHES};

pub const MAGIC: &[u8; 4] = b"PR01";
pub const HEADER_LEN: usize = 16;

pub fn encode_roll(roll: &PianoRoll) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + CHANNELS * PITCHES * roll.frames());
    out.extend_from_slice(MAGIC);
    for v in [CHANNELS as u32, PITCHES as u32, roll.frames() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&roll.to_channels());
    out
}

pub fn decode_roll(bytes: &[u8]) -> Result<PianoRoll> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "PR01 header needs {HEADER_LEN} bytes, got {}",
            bytes.len()
        )));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format("bad magic; not a PR01 file".into()));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (channels, pitches, frames) = (dim(0), dim(1), dim(2));
    if channels != CHANNELS || pitches != PITCHES {
        return Err(Error::Format(format!(
            "expected {CHANNELS} x {PITCHES} grid, header says {channels} x {pitches}"
        )));
    }
    let expected = CHANNELS
        .checked_mul(PITCHES)
        .and_then(|n| n.checked_mul(frames))
        .ok_or_else(|| Error::Format("frame count overflows".into()))?;
    let body = &bytes[HEADER_LEN..];
    if body.len() != expected {
        return Err(Error::Format(format!(
            "{frames} frames need {expected} data bytes, file has {}",
            body.len()
        )));
    }
    PianoRoll::from_channels(frames, body).map_err(|e| Error::Format(format!("invalid roll data: {e}")))
}

pub fn save_roll(path: impl AsRef<Path>, roll: &PianoRoll) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_roll(roll)).map_err(|e| Error::io(path, e))
}

pub fn load_roll(path: impl AsRef<Path>) -> Result<PianoRoll> {
    let path = path.as_ref();
    decode_roll(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
