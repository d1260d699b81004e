//! Rule extractors: pitch histogram, note density, chord progression.
//!
//! All three are pure functions of a decoded roll and none of them is
//! differentiable, which is why guidance treats them as black boxes.

use serde::{Deserialize, Serialize};

use super::roll::{PianoRoll, PITCHES};
use crate::error::{Error, Result};

/// Default window, in frames, for note density and chord recognition (1.28 s).
pub const DEFAULT_WINDOW: usize = 128;

/// Velocity-weighted pitch-class histogram, normalized to sum 1.
/// A silent roll yields all zeros.
pub fn pitch_histogram(roll: &PianoRoll) -> [f64; 12] {
    let mut h = [0.0; 12];
    for p in 0..PITCHES {
        let s: u64 = roll.velocity_row(p).iter().map(|&v| v as u64).sum();
        h[p % 12] += s as f64;
    }
    let total: f64 = h.iter().sum();
    if total > 0.0 {
        for v in &mut h {
            *v /= total;
        }
    }
    h
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoteDensity {
    /// Vertical densities for every window, then horizontal densities.
    pub values: Vec<f64>,
    pub windows: usize,
    /// Set when the last window was padded with silence.
    pub padded: bool,
}

impl NoteDensity {
    pub fn vertical(&self) -> &[f64] {
        &self.values[..self.windows]
    }

    pub fn horizontal(&self) -> &[f64] {
        &self.values[self.windows..]
    }
}

/// Per window of `window` frames: the mean number of sounding pitches per
/// frame (vertical) and the number of frames carrying at least one onset
/// (horizontal). A short final window is padded with silence.
pub fn note_density(roll: &PianoRoll, window: usize) -> Result<NoteDensity> {
    if window == 0 {
        return Err(Error::param("density window must be positive"));
    }
    let frames = roll.frames();
    if frames == 0 {
        return Err(Error::param("cannot measure density of a zero-frame roll"));
    }
    let windows = frames.div_ceil(window);
    let mut sounding = vec![0u32; frames];
    let mut has_onset = vec![false; frames];
    for p in 0..PITCHES {
        for (f, (&v, &o)) in roll.velocity_row(p).iter().zip(roll.onset_row(p)).enumerate() {
            sounding[f] += (v > 0) as u32;
            has_onset[f] |= o == 1;
        }
    }
    let mut values = vec![0.0; 2 * windows];
    for w in 0..windows {
        let range = w * window..((w + 1) * window).min(frames);
        let s: u32 = sounding[range.clone()].iter().sum();
        values[w] = s as f64 / window as f64;
        values[windows + w] = has_onset[range].iter().filter(|&&b| b).count() as f64;
    }
    Ok(NoteDensity {
        values,
        windows,
        padded: !frames.is_multiple_of(window),
    })
}

/// Chord classes, with their integer ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum ChordClass {
    Major = 0,
    Minor = 1,
    Diminished = 2,
    Augmented = 3,
    Suspended = 4,
    Seventh = 5,
    Other = 6,
}

pub const CHORD_CLASSES: usize = 7;

impl ChordClass {
    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Self> {
        Some(match id {
            0 => Self::Major,
            1 => Self::Minor,
            2 => Self::Diminished,
            3 => Self::Augmented,
            4 => Self::Suspended,
            5 => Self::Seventh,
            6 => Self::Other,
            _ => return None,
        })
    }
}

const TRIADS: [(&[u8], ChordClass); 5] = [
    (&[0, 4, 7], ChordClass::Major),
    (&[0, 3, 7], ChordClass::Minor),
    (&[0, 3, 6], ChordClass::Diminished),
    (&[0, 4, 8], ChordClass::Augmented),
    // Covers sus2 too: a sus2 chord is a sus4 on its fifth.
    (&[0, 5, 7], ChordClass::Suspended),
];

const SEVENTHS: [&[u8]; 6] = [
    &[0, 4, 7, 10],
    &[0, 4, 7, 11],
    &[0, 3, 7, 10],
    &[0, 3, 6, 10],
    &[0, 3, 6, 9],
    &[0, 3, 7, 11],
];

fn mask_of(intervals: &[u8], root: u8) -> u16 {
    intervals.iter().fold(0u16, |m, &i| m | 1 << ((root + i) % 12))
}

/// Classifies a pitch-class set (bit `k` = pitch class `k`) against the
/// templates in every root position.
pub fn classify_pitch_classes(mask: u16) -> ChordClass {
    let mask = mask & 0x0FFF;
    for root in 0..12u8 {
        for (iv, class) in TRIADS {
            if mask_of(iv, root) == mask {
                return class;
            }
        }
        if SEVENTHS.iter().any(|iv| mask_of(iv, root) == mask) {
            return ChordClass::Seventh;
        }
    }
    ChordClass::Other
}

/// Chord class per window of [`DEFAULT_WINDOW`] frames.
pub fn chord_sequence(roll: &PianoRoll) -> Vec<ChordClass> {
    chord_sequence_with(roll, DEFAULT_WINDOW)
}

/// Each window is labelled by the longest run of frames sharing the same
/// sounding pitch-class set (earliest run wins ties). A silent run counts as
/// `Other`, so a mostly silent window is `Other`.
pub fn chord_sequence_with(roll: &PianoRoll, window: usize) -> Vec<ChordClass> {
    let frames = roll.frames();
    if frames == 0 || window == 0 {
        return Vec::new();
    }
    let mut pcs = vec![0u16; frames];
    for p in 0..PITCHES {
        for (f, &v) in roll.velocity_row(p).iter().enumerate() {
            if v > 0 {
                pcs[f] |= 1 << (p % 12);
            }
        }
    }
    pcs.chunks(window)
        .map(|w| {
            let mut best = (0usize, 0u16);
            let mut i = 0;
            while i < w.len() {
                let start = i;
                while i < w.len() && w[i] == w[start] {
                    i += 1;
                }
                if i - start > best.0 {
                    best = (i - start, w[start]);
                }
            }
            classify_pitch_classes(best.1)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_single_pitch() {
        let mut r = PianoRoll::empty(64);
        r.add_note(60, 0, 64, 100);
        let h = pitch_histogram(&r);
        assert_eq!(h[0], 1.0);
        assert!(h[1..].iter().all(|&v| v == 0.0));
        assert_eq!(pitch_histogram(&PianoRoll::empty(64)), [0.0; 12]);
    }

    #[test]
    fn histogram_velocity_weighted() {
        let mut r = PianoRoll::empty(10);
        r.add_note(60, 0, 10, 30);
        r.add_note(62, 0, 10, 90);
        let h = pitch_histogram(&r);
        assert!((h[0] - 0.25).abs() < 1e-12);
        assert!((h[2] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn density_worked_example() {
        // Two notes, both held a full window, onsets at frames 0 and 64.
        let mut r = PianoRoll::empty(128);
        r.add_note(60, 0, 128, 80);
        r.add_note(64, 64, 64, 80);
        let nd = note_density(&r, 128).unwrap();
        assert_eq!(nd.values, vec![1.5, 2.0]);
        assert!(!nd.padded);
    }

    #[test]
    fn density_padding() {
        let mut r = PianoRoll::empty(200);
        r.add_note(60, 0, 200, 80);
        let nd = note_density(&r, 128).unwrap();
        assert_eq!(nd.windows, 2);
        assert!(nd.padded);
        assert!((nd.vertical()[1] - 72.0 / 128.0).abs() < 1e-12);
        assert!(note_density(&PianoRoll::empty(0), 128).is_err());
    }

    #[test]
    fn chord_templates() {
        let set = |pcs: &[u8]| pcs.iter().fold(0u16, |m, &p| m | 1 << p);
        assert_eq!(classify_pitch_classes(set(&[0, 4, 7])), ChordClass::Major);
        assert_eq!(classify_pitch_classes(set(&[9, 0, 4])), ChordClass::Minor);
        assert_eq!(classify_pitch_classes(set(&[11, 2, 5])), ChordClass::Diminished);
        assert_eq!(classify_pitch_classes(set(&[0, 4, 8])), ChordClass::Augmented);
        assert_eq!(classify_pitch_classes(set(&[0, 2, 7])), ChordClass::Suspended);
        assert_eq!(classify_pitch_classes(set(&[0, 5, 7])), ChordClass::Suspended);
        assert_eq!(classify_pitch_classes(set(&[7, 11, 2, 5])), ChordClass::Seventh);
        assert_eq!(classify_pitch_classes(set(&[0, 1])), ChordClass::Other);
        assert_eq!(classify_pitch_classes(0), ChordClass::Other);
    }

    #[test]
    fn chord_window_labels() {
        let mut r = PianoRoll::empty(256);
        for p in [60, 64, 67] {
            r.add_note(p, 0, 128, 70);
        }
        for p in [57, 60, 64] {
            r.add_note(p, 128, 100, 70);
        }
        let seq = chord_sequence(&r);
        assert_eq!(seq, vec![ChordClass::Major, ChordClass::Minor]);
        // Velocity does not matter.
        let mut loud = r.clone();
        for p in [57, 60, 64, 67] {
            for f in 0..256 {
                if loud.velocity(p, f) > 0 {
                    loud.set_velocity(p, f, 127);
                }
            }
        }
        assert_eq!(chord_sequence(&loud), seq);
        assert_eq!(chord_sequence(&PianoRoll::empty(130)), vec![ChordClass::Other; 2]);
    }
}
