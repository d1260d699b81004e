//! Rule targets, their losses, and the decoded-roll loss used for guidance.

use serde::{Deserialize, Serialize};

use super::roll::{threshold_postprocess, PianoRoll};
use super::rules::{chord_sequence, note_density, pitch_histogram, ChordClass, CHORD_CLASSES, DEFAULT_WINDOW};
use crate::error::{Error, Result};
use crate::guidance::LossFunction;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    PitchHistogram,
    NoteDensity,
    ChordProgression,
}

impl RuleKind {
    pub const ALL: [RuleKind; 3] = [
        RuleKind::PitchHistogram,
        RuleKind::NoteDensity,
        RuleKind::ChordProgression,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            RuleKind::PitchHistogram => "ph",
            RuleKind::NoteDensity => "nd",
            RuleKind::ChordProgression => "cp",
        }
    }
}

/// A target attribute vector for one rule.
#[derive(Debug, Clone, PartialEq)]
pub enum RuleTarget {
    /// 12 pitch-class weights summing to 1 (all zeros for a silent target).
    PitchHistogram(Vec<f64>),
    /// Vertical densities for each window, then horizontal densities.
    NoteDensity(Vec<f64>),
    /// One chord class id per window.
    ChordProgression(Vec<u8>),
}

impl RuleTarget {
    pub fn kind(&self) -> RuleKind {
        match self {
            RuleTarget::PitchHistogram(_) => RuleKind::PitchHistogram,
            RuleTarget::NoteDensity(_) => RuleKind::NoteDensity,
            RuleTarget::ChordProgression(_) => RuleKind::ChordProgression,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            RuleTarget::PitchHistogram(h) => {
                if h.len() != 12 {
                    return Err(Error::param(format!(
                        "pitch histogram needs 12 values, got {}",
                        h.len()
                    )));
                }
                if h.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    return Err(Error::param("pitch histogram values must be non-negative"));
                }
                let s: f64 = h.iter().sum();
                if s != 0.0 && (s - 1.0).abs() > 1e-9 {
                    return Err(Error::param(format!("pitch histogram sums to {s}, not 1")));
                }
            }
            RuleTarget::NoteDensity(v) => {
                if v.is_empty() || v.len() % 2 != 0 {
                    return Err(Error::param("note density target needs an even, non-zero length"));
                }
                if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
                    return Err(Error::param("note density values must be non-negative"));
                }
            }
            RuleTarget::ChordProgression(c) => {
                if let Some(bad) = c.iter().find(|&&id| id as usize >= CHORD_CLASSES) {
                    return Err(Error::param(format!("chord class id {bad} out of range 0..7")));
                }
            }
        }
        Ok(())
    }

    /// The target this roll would satisfy exactly.
    pub fn extract(roll: &PianoRoll, kind: RuleKind) -> Result<Self> {
        Ok(match kind {
            RuleKind::PitchHistogram => RuleTarget::PitchHistogram(pitch_histogram(roll).to_vec()),
            RuleKind::NoteDensity => RuleTarget::NoteDensity(note_density(roll, DEFAULT_WINDOW)?.values),
            RuleKind::ChordProgression => {
                RuleTarget::ChordProgression(chord_sequence(roll).into_iter().map(ChordClass::id).collect())
            }
        })
    }
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// MSE for pitch histogram and note density, mismatch fraction for chords.
pub fn rule_loss(roll: &PianoRoll, target: &RuleTarget) -> Result<f64> {
    match target {
        RuleTarget::PitchHistogram(h) => {
            if h.len() != 12 {
                return Err(Error::param(format!(
                    "pitch histogram needs 12 values, got {}",
                    h.len()
                )));
            }
            Ok(mse(&pitch_histogram(roll), h))
        }
        RuleTarget::NoteDensity(v) => {
            let nd = note_density(roll, DEFAULT_WINDOW)?;
            if nd.values.len() != v.len() {
                return Err(Error::param(format!(
                    "note density target has {} values, roll yields {}",
                    v.len(),
                    nd.values.len()
                )));
            }
            Ok(mse(&nd.values, v))
        }
        RuleTarget::ChordProgression(c) => {
            let seq = chord_sequence(roll);
            if seq.len() != c.len() || c.is_empty() {
                return Err(Error::param(format!(
                    "chord target has {} windows, roll yields {}",
                    c.len(),
                    seq.len()
                )));
            }
            let wrong = seq.iter().zip(c).filter(|(a, &b)| a.id() != b).count();
            Ok(wrong as f64 / c.len() as f64)
        }
    }
}

/// `sum_i w_i rule_loss(roll, target_i)`.
pub fn composite_loss(roll: &PianoRoll, targets: &[RuleTarget], weights: &[f64]) -> Result<f64> {
    if targets.len() != weights.len() {
        return Err(Error::param(format!(
            "{} targets but {} weights",
            targets.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::param("weights must be non-negative"));
    }
    let mut total = 0.0;
    for (t, w) in targets.iter().zip(weights) {
        total += w * rule_loss(roll, t)?;
    }
    Ok(total)
}

/// JSON form `{ "ph": [..12], "nd": [..], "cp": [..] }`; every key optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleTargets {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ph: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nd: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cp: Option<Vec<u8>>,
}

impl RuleTargets {
    pub fn from_json(text: &str) -> Result<Self> {
        let t: Self = serde_json::from_str(text)?;
        t.targets()?;
        Ok(t)
    }

    pub fn from_targets(targets: &[RuleTarget]) -> Self {
        let mut out = Self::default();
        for t in targets {
            match t {
                RuleTarget::PitchHistogram(v) => out.ph = Some(v.clone()),
                RuleTarget::NoteDensity(v) => out.nd = Some(v.clone()),
                RuleTarget::ChordProgression(v) => out.cp = Some(v.clone()),
            }
        }
        out
    }

    /// All targets of a roll.
    pub fn extract(roll: &PianoRoll) -> Result<Self> {
        let t: Vec<RuleTarget> = RuleKind::ALL
            .iter()
            .map(|&k| RuleTarget::extract(roll, k))
            .collect::<Result<_>>()?;
        Ok(Self::from_targets(&t))
    }

    /// Present targets in (PH, ND, CP) order, validated.
    pub fn targets(&self) -> Result<Vec<RuleTarget>> {
        let mut out = Vec::new();
        if let Some(v) = &self.ph {
            out.push(RuleTarget::PitchHistogram(v.clone()));
        }
        if let Some(v) = &self.nd {
            out.push(RuleTarget::NoteDensity(v.clone()));
        }
        if let Some(v) = &self.cp {
            out.push(RuleTarget::ChordProgression(v.clone()));
        }
        for t in &out {
            t.validate()?;
        }
        Ok(out)
    }

    /// Weights for the present targets, picked from a (PH, ND, CP) triple.
    pub fn weights_for(&self, all: &[f64]) -> Result<Vec<f64>> {
        if all.len() != 3 {
            return Err(Error::param(format!("expected 3 rule weights, got {}", all.len())));
        }
        let present = [self.ph.is_some(), self.nd.is_some(), self.cp.is_some()];
        Ok(present.iter().zip(all).filter(|(p, _)| **p).map(|(_, w)| *w).collect())
    }
}

/// Composite rule loss on the decoded roll of a clean-space tensor.
#[derive(Debug, Clone)]
pub struct RollLoss {
    targets: Vec<RuleTarget>,
    weights: Vec<f64>,
}

impl RollLoss {
    pub fn new(targets: Vec<RuleTarget>, weights: Vec<f64>) -> Result<Self> {
        if targets.len() != weights.len() {
            return Err(Error::param(format!(
                "{} targets but {} weights",
                targets.len(),
                weights.len()
            )));
        }
        for t in &targets {
            t.validate()?;
        }
        Ok(Self { targets, weights })
    }

    /// Targets from a JSON document, weighted from a (PH, ND, CP) triple.
    pub fn from_targets(doc: &RuleTargets, weights: &[f64]) -> Result<Self> {
        Self::new(doc.targets()?, doc.weights_for(weights)?)
    }

    pub fn targets(&self) -> &[RuleTarget] {
        &self.targets
    }

    pub fn roll_loss(&self, roll: &PianoRoll) -> Result<f64> {
        composite_loss(roll, &self.targets, &self.weights)
    }
}

impl LossFunction for RollLoss {
    fn loss(&self, x: &Tensor) -> Result<f64> {
        self.roll_loss(&threshold_postprocess(x)?)
    }
}
