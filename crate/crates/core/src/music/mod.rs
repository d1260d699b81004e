//! Piano rolls and the musical rules used as guidance targets.

pub mod corpus;
pub mod roll;
pub mod rules;
pub mod target;

pub use roll::{
    encode_velocity, roll_shape, threshold_postprocess, velocity_threshold, Channel, Note, PianoRoll, CHANNELS,
    FRAME_SECONDS, PITCHES, VELOCITY_THRESHOLD,
};
pub use rules::{
    chord_sequence, chord_sequence_with, classify_pitch_classes, note_density, pitch_histogram, ChordClass,
    NoteDensity, CHORD_CLASSES, DEFAULT_WINDOW,
};
pub use target::{composite_loss, rule_loss, RollLoss, RuleKind, RuleTarget, RuleTargets};
