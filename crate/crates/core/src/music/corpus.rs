//! Synthetic rolls: uniformly random grid-aligned rolls for property tests,
//! and a small structured corpus for training the toy denoiser.

use rand::Rng;

use super::roll::{PianoRoll, PITCHES};

/// A random valid roll whose notes never overlap at a pitch, so every note
/// starts with an onset and MIDI export/import reproduces it exactly.
pub fn random_roll<R: Rng + ?Sized>(frames: usize, rng: &mut R) -> PianoRoll {
    let mut roll = PianoRoll::empty(frames);
    if frames == 0 {
        return roll;
    }
    let active_pitches = rng.random_range(0..=24);
    for _ in 0..active_pitches {
        let p = rng.random_range(0..PITCHES);
        if roll.velocity_row(p).iter().any(|&v| v > 0) {
            continue;
        }
        let mut f = rng.random_range(0..frames);
        while f < frames {
            let len = rng.random_range(1..=frames.min(64));
            roll.add_note(p, f, len, rng.random_range(1..=127));
            f += len;
            if rng.random_bool(0.5) {
                f += rng.random_range(0..frames.min(48));
            }
        }
    }
    let mut f = 0;
    while f < frames {
        let len = rng.random_range(1..=frames.min(80));
        if rng.random_bool(0.4) {
            for k in f..(f + len).min(frames) {
                roll.set_pedal_frame(k, true);
            }
        }
        f += len;
    }
    roll
}

const MAJOR: [usize; 7] = [0, 2, 4, 5, 7, 9, 11];
const PROGRESSION: [[usize; 3]; 4] = [[0, 2, 4], [3, 5, 0], [4, 6, 1], [5, 0, 2]];

/// A short piece in a random major key: block chords in the left hand and a
/// scale melody on top. `density` in `[0, 1]` controls how many notes are
/// struck and how long they ring.
pub fn toy_piece<R: Rng + ?Sized>(frames: usize, density: f64, rng: &mut R) -> PianoRoll {
    let mut roll = PianoRoll::empty(frames);
    let key = rng.random_range(0..12);
    let span = 32;
    let chord_idx = rng.random_range(0..PROGRESSION.len());
    let mut start = 0;
    let mut bar = 0;
    while start < frames {
        let chord = PROGRESSION[(chord_idx + bar) % PROGRESSION.len()];
        let hold = if density > 0.5 { span } else { span / 2 };
        let vel = rng.random_range(40..=100);
        for &deg in &chord {
            roll.add_note(48 + key + MAJOR[deg], start, hold, vel);
        }
        // Melody: denser pieces strike more and shorter notes.
        let strikes = 1 + (density * 6.0).round() as usize;
        let step = span / strikes;
        for k in 0..strikes {
            if rng.random_bool(0.2 + 0.7 * density) {
                let deg = rng.random_range(0..7);
                let octave = rng.random_range(0..2) * 12;
                let len = (step as f64 * rng.random_range(0.5..=1.0)).max(1.0) as usize;
                roll.add_note(
                    60 + key + MAJOR[deg] + octave,
                    start + k * step,
                    len,
                    rng.random_range(50..=110),
                );
            }
        }
        start += span;
        bar += 1;
    }
    if rng.random_bool(0.5) {
        for f in 0..frames / 2 {
            roll.set_pedal_frame(f, true);
        }
    }
    roll
}

/// `count` pieces with densities spread evenly over `[0, 1]`.
pub fn toy_corpus<R: Rng + ?Sized>(count: usize, frames: usize, rng: &mut R) -> Vec<PianoRoll> {
    (0..count)
        .map(|i| {
            let density = if count > 1 { i as f64 / (count - 1) as f64 } else { 0.5 };
            toy_piece(frames, density, rng)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::music::rules::note_density;
    use rand::SeedableRng;
    use rand_xoshiro::Xoshiro256PlusPlus;

    #[test]
    fn random_rolls_are_valid() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(1);
        for _ in 0..50 {
            let r = random_roll(200, &mut rng);
            r.validate().unwrap();
            for n in r.notes() {
                assert!(r.onset(n.pitch as usize, n.start));
            }
        }
    }

    #[test]
    fn corpus_density_spread() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(2);
        let c = toy_corpus(20, 128, &mut rng);
        let nd = |r: &PianoRoll| note_density(r, 128).unwrap().values[1];
        assert!(nd(&c[19]) > nd(&c[0]));
        for r in &c {
            r.validate().unwrap();
        }
    }
}
