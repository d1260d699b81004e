//! The seven per-piece musical attributes compared by overlapping area.

use serde::{Deserialize, Serialize};

use crate::music::{note_density, pitch_histogram, PianoRoll, DEFAULT_WINDOW, FRAME_SECONDS, PITCHES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    UsedPitch,
    Ioi,
    PitchHist,
    PitchRange,
    Velocity,
    NoteDuration,
    NoteDensity,
}

impl Attribute {
    pub const ALL: [Attribute; 7] = [
        Attribute::UsedPitch,
        Attribute::Ioi,
        Attribute::PitchHist,
        Attribute::PitchRange,
        Attribute::Velocity,
        Attribute::NoteDuration,
        Attribute::NoteDensity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Attribute::UsedPitch => "used_pitch",
            Attribute::Ioi => "ioi",
            Attribute::PitchHist => "pitch_hist",
            Attribute::PitchRange => "pitch_range",
            Attribute::Velocity => "velocity",
            Attribute::NoteDuration => "note_duration",
            Attribute::NoteDensity => "note_density",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSet {
    /// Distinct sounding pitches.
    pub used_pitch: f64,
    /// Mean gap between successive onset frames, seconds.
    pub ioi: f64,
    pub pitch_hist: [f64; 12],
    /// Highest minus lowest sounding pitch.
    pub pitch_range: f64,
    /// Mean velocity over sounding cells.
    pub velocity: f64,
    /// Mean note length, seconds.
    pub note_duration: f64,
    /// Mean vertical note density.
    pub note_density: f64,
    /// Set for silent rolls, whose attributes are all zero.
    pub empty: bool,
}

impl AttributeSet {
    fn zero() -> Self {
        Self {
            used_pitch: 0.0,
            ioi: 0.0,
            pitch_hist: [0.0; 12],
            pitch_range: 0.0,
            velocity: 0.0,
            note_duration: 0.0,
            note_density: 0.0,
            empty: true,
        }
    }

    /// The attribute as a vector (length 12 for the histogram, 1 otherwise).
    pub fn get(&self, a: Attribute) -> &[f64] {
        match a {
            Attribute::UsedPitch => std::slice::from_ref(&self.used_pitch),
            Attribute::Ioi => std::slice::from_ref(&self.ioi),
            Attribute::PitchHist => &self.pitch_hist,
            Attribute::PitchRange => std::slice::from_ref(&self.pitch_range),
            Attribute::Velocity => std::slice::from_ref(&self.velocity),
            Attribute::NoteDuration => std::slice::from_ref(&self.note_duration),
            Attribute::NoteDensity => std::slice::from_ref(&self.note_density),
        }
    }
}

pub fn seven_attributes(roll: &PianoRoll) -> AttributeSet {
    if roll.is_silent() {
        return AttributeSet::zero();
    }
    let sounding: Vec<usize> = (0..PITCHES)
        .filter(|&p| roll.velocity_row(p).iter().any(|&v| v > 0))
        .collect();
    let (mut vsum, mut vcount) = (0u64, 0u64);
    for p in &sounding {
        for &v in roll.velocity_row(*p) {
            if v > 0 {
                vsum += v as u64;
                vcount += 1;
            }
        }
    }
    let onset_frames: Vec<usize> = (0..roll.frames())
        .filter(|&f| (0..PITCHES).any(|p| roll.onset(p, f)))
        .collect();
    let ioi = if onset_frames.len() >= 2 {
        (onset_frames[onset_frames.len() - 1] - onset_frames[0]) as f64 / (onset_frames.len() - 1) as f64
            * FRAME_SECONDS
    } else {
        0.0
    };
    let notes = roll.notes();
    let note_duration = notes.iter().map(|n| n.frames()).sum::<usize>() as f64 / notes.len() as f64 * FRAME_SECONDS;
    let nd = note_density(roll, DEFAULT_WINDOW).expect("non-silent roll has frames");
    let vert = nd.vertical();
    AttributeSet {
        used_pitch: sounding.len() as f64,
        ioi,
        pitch_hist: pitch_histogram(roll),
        pitch_range: (sounding[sounding.len() - 1] - sounding[0]) as f64,
        velocity: vsum as f64 / vcount as f64,
        note_duration,
        note_density: vert.iter().sum::<f64>() / vert.len() as f64,
        empty: false,
    }
}
