//! Edit masks: 1 marks cells preserved from the source, 0 cells to regenerate.

use crate::error::{Error, Result};
use crate::music::{CHANNELS, PITCHES};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct EditMask(Tensor);

impl EditMask {
    /// Wraps a tensor after checking every value is 0 or 1.
    pub fn from_tensor(t: Tensor) -> Result<Self> {
        if let Some(v) = t.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::param(format!("mask value {v} is not 0 or 1")));
        }
        Ok(Self(t))
    }

    pub fn preserve_all(frames: usize) -> Self {
        Self(Tensor::full(&[CHANNELS, PITCHES, frames], 1.0))
    }

    pub fn regenerate_all(frames: usize) -> Self {
        Self(Tensor::zeros(&[CHANNELS, PITCHES, frames]))
    }

    fn build(frames: usize, regen: impl Fn(usize, usize) -> bool) -> Self {
        let mut t = Tensor::full(&[CHANNELS, PITCHES, frames], 1.0);
        let d = t.data_mut();
        for c in 0..CHANNELS {
            for p in 0..PITCHES {
                for f in 0..frames {
                    if regen(p, f) {
                        d[(c * PITCHES + p) * frames + f] = 0.0;
                    }
                }
            }
        }
        Self(t)
    }

    /// Regenerates frames `start..end` on every channel and pitch.
    pub fn time_window(frames: usize, start: usize, end: usize) -> Result<Self> {
        if start > end || end > frames {
            return Err(Error::param(format!("window {start}..{end} outside 0..{frames}")));
        }
        Ok(Self::build(frames, |_, f| f >= start && f < end))
    }

    /// Regenerates pitches `low..=high` over the whole roll.
    pub fn pitch_range(frames: usize, low: usize, high: usize) -> Result<Self> {
        if low > high || high >= PITCHES {
            return Err(Error::param(format!("pitch range {low}..={high} outside 0..128")));
        }
        Ok(Self::build(frames, |p, _| p >= low && p <= high))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn preserved(&self, index: usize) -> bool {
        self.0.data()[index] == 1.0
    }

    pub fn preserved_count(&self) -> usize {
        self.0.data().iter().filter(|&&v| v == 1.0).count()
    }
}
