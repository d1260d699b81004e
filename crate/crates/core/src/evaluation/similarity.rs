//! Chroma and groove similarity between two rolls of equal length.

use crate::error::{Error, Result};
use crate::music::{PianoRoll, DEFAULT_WINDOW, PITCHES};

fn check(a: &PianoRoll, b: &PianoRoll) -> Result<()> {
    if a.frames() != b.frames() {
        return Err(Error::param(format!(
            "rolls differ in length: {} vs {} frames",
            a.frames(),
            b.frames()
        )));
    }
    if a.frames() == 0 {
        return Err(Error::param("cannot compare zero-frame rolls"));
    }
    Ok(())
}

fn chroma(roll: &PianoRoll, start: usize, end: usize) -> [f64; 12] {
    let mut c = [0.0; 12];
    for p in 0..PITCHES {
        let s: u64 = roll.velocity_row(p)[start..end].iter().map(|&v| v as u64).sum();
        c[p % 12] += s as f64;
    }
    c
}

fn windows(frames: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..frames.div_ceil(DEFAULT_WINDOW)).map(move |w| (w * DEFAULT_WINDOW, ((w + 1) * DEFAULT_WINDOW).min(frames)))
}

/// Mean over 128-frame windows of the cosine similarity of velocity-weighted
/// chroma vectors. Two silent windows score 1, one silent window 0.
pub fn chroma_similarity(a: &PianoRoll, b: &PianoRoll) -> Result<f64> {
    check(a, b)?;
    let mut total = 0.0;
    let mut count = 0;
    for (s, e) in windows(a.frames()) {
        let (ca, cb) = (chroma(a, s, e), chroma(b, s, e));
        let na = ca.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb = cb.iter().map(|v| v * v).sum::<f64>().sqrt();
        total += match (na == 0.0, nb == 0.0) {
            (true, true) => 1.0,
            (true, false) | (false, true) => 0.0,
            _ => (ca.iter().zip(&cb).map(|(x, y)| x * y).sum::<f64>() / (na * nb)).min(1.0),
        };
        count += 1;
    }
    Ok(total / count as f64)
}

fn onset_bits(roll: &PianoRoll) -> Vec<bool> {
    let mut bits = vec![false; roll.frames()];
    for p in 0..PITCHES {
        for (b, &o) in bits.iter_mut().zip(roll.onset_row(p)) {
            *b |= o == 1;
        }
    }
    bits
}

/// Mean over 128-frame windows of `1 - hamming(onset bits) / window length`.
pub fn groove_similarity(a: &PianoRoll, b: &PianoRoll) -> Result<f64> {
    check(a, b)?;
    let (ba, bb) = (onset_bits(a), onset_bits(b));
    let mut total = 0.0;
    let mut count = 0;
    for (s, e) in windows(a.frames()) {
        let diff = (s..e).filter(|&f| ba[f] != bb[f]).count();
        total += 1.0 - diff as f64 / (e - s) as f64;
        count += 1;
    }
    Ok(total / count as f64)
}
