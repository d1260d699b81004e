//! Three-channel piano roll at 10 ms per frame and its clean-space encoding.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const PITCHES: usize = 128;
pub const CHANNELS: usize = 3;
pub const FRAME_SECONDS: f64 = 0.01;

/// Velocities below this are dropped when decoding model output.
pub const VELOCITY_THRESHOLD: u8 = 8;

/// Channel index in the encoded tensor and the PR01 layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Velocity = 0,
    Onset = 1,
    Pedal = 2,
}

/// Velocity, onset and pedal grids, each `128 x frames`, stored pitch-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PianoRoll {
    frames: usize,
    velocity: Vec<u8>,
    onset: Vec<u8>,
    pedal: Vec<u8>,
}

/// One sounding note: a run of frames at a single pitch and velocity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Note {
    pub pitch: u8,
    pub start: usize,
    /// Exclusive end frame.
    pub end: usize,
    pub velocity: u8,
}

impl Note {
    pub fn frames(&self) -> usize {
        self.end - self.start
    }
}

impl PianoRoll {
    pub fn empty(frames: usize) -> Self {
        Self {
            frames,
            velocity: vec![0; PITCHES * frames],
            onset: vec![0; PITCHES * frames],
            pedal: vec![0; PITCHES * frames],
        }
    }

    /// Builds a roll from channel-major data (`3 x 128 x frames`), validating invariants.
    pub fn from_channels(frames: usize, data: &[u8]) -> Result<Self> {
        let plane = PITCHES * frames;
        if data.len() != CHANNELS * plane {
            return Err(Error::param(format!(
                "expected {} cells, got {}",
                CHANNELS * plane,
                data.len()
            )));
        }
        let roll = Self {
            frames,
            velocity: data[..plane].to_vec(),
            onset: data[plane..2 * plane].to_vec(),
            pedal: data[2 * plane..].to_vec(),
        };
        roll.validate()?;
        Ok(roll)
    }

    /// Channel-major bytes, the inverse of [`PianoRoll::from_channels`].
    pub fn to_channels(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(CHANNELS * self.velocity.len());
        out.extend_from_slice(&self.velocity);
        out.extend_from_slice(&self.onset);
        out.extend_from_slice(&self.pedal);
        out
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(v) = self.velocity.iter().find(|&&v| v > 127) {
            return Err(Error::param(format!("velocity {v} above 127")));
        }
        if self.onset.iter().chain(&self.pedal).any(|&b| b > 1) {
            return Err(Error::param("onset and pedal cells must be 0 or 1"));
        }
        if let Some(i) = (0..self.onset.len()).find(|&i| self.onset[i] == 1 && self.velocity[i] == 0) {
            return Err(Error::param(format!(
                "onset without velocity at pitch {}, frame {}",
                i / self.frames,
                i % self.frames
            )));
        }
        Ok(())
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn duration_seconds(&self) -> f64 {
        self.frames as f64 * FRAME_SECONDS
    }

    fn idx(&self, pitch: usize, frame: usize) -> usize {
        debug_assert!(pitch < PITCHES && frame < self.frames);
        pitch * self.frames + frame
    }

    pub fn velocity(&self, pitch: usize, frame: usize) -> u8 {
        self.velocity[self.idx(pitch, frame)]
    }

    pub fn onset(&self, pitch: usize, frame: usize) -> bool {
        self.onset[self.idx(pitch, frame)] == 1
    }

    pub fn pedal(&self, pitch: usize, frame: usize) -> bool {
        self.pedal[self.idx(pitch, frame)] == 1
    }

    pub fn is_sounding(&self, pitch: usize, frame: usize) -> bool {
        self.velocity(pitch, frame) > 0
    }

    pub fn set_velocity(&mut self, pitch: usize, frame: usize, v: u8) {
        let i = self.idx(pitch, frame);
        self.velocity[i] = v.min(127);
    }

    pub fn set_onset(&mut self, pitch: usize, frame: usize, on: bool) {
        let i = self.idx(pitch, frame);
        self.onset[i] = on as u8;
    }

    /// Marks the pedal down at `frame` across every pitch row.
    pub fn set_pedal_frame(&mut self, frame: usize, down: bool) {
        for p in 0..PITCHES {
            let i = self.idx(p, frame);
            self.pedal[i] = down as u8;
        }
    }

    /// Pedal is treated as down at a frame if any pitch row has it set.
    pub fn pedal_frame(&self, frame: usize) -> bool {
        (0..PITCHES).any(|p| self.pedal(p, frame))
    }

    /// Writes a note with its onset; frames past the end are clipped.
    pub fn add_note(&mut self, pitch: usize, start: usize, len: usize, velocity: u8) {
        let end = (start + len).min(self.frames);
        if start >= end || velocity == 0 {
            return;
        }
        for f in start..end {
            self.set_velocity(pitch, f, velocity);
        }
        self.set_onset(pitch, start, true);
    }

    pub fn velocity_row(&self, pitch: usize) -> &[u8] {
        &self.velocity[pitch * self.frames..(pitch + 1) * self.frames]
    }

    pub fn onset_row(&self, pitch: usize) -> &[u8] {
        &self.onset[pitch * self.frames..(pitch + 1) * self.frames]
    }

    pub fn is_silent(&self) -> bool {
        self.velocity.iter().all(|&v| v == 0)
    }

    /// Frames `start..end` as a new roll.
    pub fn slice_frames(&self, start: usize, end: usize) -> PianoRoll {
        let end = end.min(self.frames);
        let start = start.min(end);
        let mut out = PianoRoll::empty(end - start);
        for p in 0..PITCHES {
            let src = p * self.frames;
            let dst = p * out.frames;
            let len = end - start;
            out.velocity[dst..dst + len].copy_from_slice(&self.velocity[src + start..src + end]);
            out.onset[dst..dst + len].copy_from_slice(&self.onset[src + start..src + end]);
            out.pedal[dst..dst + len].copy_from_slice(&self.pedal[src + start..src + end]);
        }
        out
    }

    /// Notes: maximal runs of one positive velocity at a pitch, split at onsets.
    pub fn notes(&self) -> Vec<Note> {
        let mut notes = Vec::new();
        for p in 0..PITCHES {
            let vel = self.velocity_row(p);
            let ons = self.onset_row(p);
            let mut f = 0;
            while f < self.frames {
                if vel[f] == 0 {
                    f += 1;
                    continue;
                }
                let start = f;
                f += 1;
                while f < self.frames && vel[f] == vel[start] && ons[f] == 0 {
                    f += 1;
                }
                notes.push(Note {
                    pitch: p as u8,
                    start,
                    end: f,
                    velocity: vel[start],
                });
            }
        }
        notes.sort_by_key(|n| (n.start, n.pitch));
        notes
    }

    /// Clean-space encoding: velocity mapped affinely to `[-1, 1]`,
    /// onset and pedal to `{-1, +1}`. Shape `[3, 128, frames]`.
    pub fn encode(&self) -> Tensor {
        let mut data = Vec::with_capacity(CHANNELS * self.velocity.len());
        data.extend(self.velocity.iter().map(|&v| encode_velocity(v)));
        data.extend(self.onset.iter().map(|&b| if b == 1 { 1.0 } else { -1.0 }));
        data.extend(self.pedal.iter().map(|&b| if b == 1 { 1.0 } else { -1.0 }));
        Tensor::new(vec![CHANNELS, PITCHES, self.frames], data).expect("finite by construction")
    }
}

pub fn encode_velocity(v: u8) -> f64 {
    v as f64 / 127.0 * 2.0 - 1.0
}

pub fn decode_velocity(x: f64) -> f64 {
    (x + 1.0) / 2.0 * 127.0
}

/// Encoded value of [`VELOCITY_THRESHOLD`].
pub fn velocity_threshold() -> f64 {
    encode_velocity(VELOCITY_THRESHOLD)
}

/// Clean-space shape for a roll of `frames` frames.
pub fn roll_shape(frames: usize) -> [usize; 3] {
    [CHANNELS, PITCHES, frames]
}

/// Maps raw model output back to a valid roll.
///
/// Velocity cells below the encoded threshold are cleared, the rest are
/// rounded to integers; onset and pedal are binarized at zero, and onsets on
/// silent cells are dropped. Each note (run of sounding frames split at
/// onsets) is then flattened to its median velocity.
pub fn threshold_postprocess(raw: &Tensor) -> Result<PianoRoll> {
    let shape = raw.shape();
    if shape.len() != 3 || shape[0] != CHANNELS || shape[1] != PITCHES {
        return Err(Error::Shape {
            expected: vec![CHANNELS, PITCHES, shape.last().copied().unwrap_or(0)],
            got: shape.to_vec(),
        });
    }
    let frames = shape[2];
    let plane = PITCHES * frames;
    let data = raw.data();
    let theta = velocity_threshold();
    let mut roll = PianoRoll::empty(frames);
    for (i, &x) in data[..plane].iter().enumerate() {
        if x >= theta {
            roll.velocity[i] = decode_velocity(x).round().clamp(1.0, 127.0) as u8;
        }
    }
    for i in 0..plane {
        if data[plane + i] > 0.0 && roll.velocity[i] > 0 {
            roll.onset[i] = 1;
        }
        if data[2 * plane + i] > 0.0 {
            roll.pedal[i] = 1;
        }
    }
    let mut scratch = Vec::new();
    for p in 0..PITCHES {
        let base = p * frames;
        let mut f = 0;
        while f < frames {
            if roll.velocity[base + f] == 0 {
                f += 1;
                continue;
            }
            let start = f;
            f += 1;
            while f < frames && roll.velocity[base + f] > 0 && roll.onset[base + f] == 0 {
                f += 1;
            }
            if f - start > 1 {
                scratch.clear();
                scratch.extend_from_slice(&roll.velocity[base + start..base + f]);
                scratch.sort_unstable();
                let median = scratch[(scratch.len() - 1) / 2];
                roll.velocity[base + start..base + f].fill(median);
            }
        }
    }
    Ok(roll)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_roll() -> PianoRoll {
        let mut r = PianoRoll::empty(64);
        r.add_note(60, 0, 10, 64);
        r.add_note(60, 10, 5, 90);
        r.add_note(64, 3, 20, 8);
        r.add_note(67, 40, 24, 127);
        for f in 5..30 {
            r.set_pedal_frame(f, true);
        }
        r
    }

    #[test]
    fn encode_decode_identity() {
        let r = sample_roll();
        assert_eq!(threshold_postprocess(&r.encode()).unwrap(), r);
    }

    #[test]
    fn background_decodes_empty() {
        let t = Tensor::full(&[3, 128, 32], -1.05);
        let r = threshold_postprocess(&t).unwrap();
        assert!(r.is_silent());
        assert_eq!(r, PianoRoll::empty(32));
    }

    #[test]
    fn threshold_boundary() {
        let theta = velocity_threshold();
        let mut t = Tensor::full(&[3, 128, 16], -1.0);
        let idx = 60 * 16 + 5;
        t.data_mut()[idx] = theta + 1e-9;
        let r = threshold_postprocess(&t).unwrap();
        assert_eq!(r.velocity(60, 5), VELOCITY_THRESHOLD);
        assert_eq!(r.notes().len(), 1);

        t.data_mut()[idx] = theta - 1e-9;
        assert!(threshold_postprocess(&t).unwrap().is_silent());
    }

    #[test]
    fn wrong_channel_count() {
        assert!(matches!(
            threshold_postprocess(&Tensor::zeros(&[2, 128, 8])),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn median_smoothing_and_orphan_onsets() {
        let mut t = Tensor::full(&[3, 128, 8], -1.0);
        let vals = [20u8, 100, 30, 31, 29];
        for (f, v) in vals.iter().enumerate() {
            t.data_mut()[10 * 8 + f] = encode_velocity(*v);
        }
        // Onset on a silent cell must not survive.
        t.data_mut()[128 * 8 + 11 * 8 + 2] = 1.0;
        let r = threshold_postprocess(&t).unwrap();
        for f in 0..5 {
            assert_eq!(r.velocity(10, f), 30);
        }
        assert!(!r.onset(11, 2));
        r.validate().unwrap();
    }

    #[test]
    fn notes_split_at_onsets() {
        let notes = sample_roll().notes();
        let at60: Vec<_> = notes.iter().filter(|n| n.pitch == 60).collect();
        assert_eq!(at60.len(), 2);
        assert_eq!((at60[0].start, at60[0].end, at60[0].velocity), (0, 10, 64));
        assert_eq!((at60[1].start, at60[1].end, at60[1].velocity), (10, 15, 90));
    }

    #[test]
    fn invariants_checked() {
        let mut data = PianoRoll::empty(4).to_channels();
        data[128 * 4] = 1; // onset at pitch 0 frame 0 with no velocity
        assert!(PianoRoll::from_channels(4, &data).is_err());
    }
}
