//! Deliberately naive reference implementations of the rule extractors,
//! written cell by cell without sharing code with `music::rules`.

use crate::music::{PianoRoll, PITCHES};

pub fn pitch_histogram(roll: &PianoRoll) -> Vec<f64> {
    let mut counts = [0u64; 12];
    for f in 0..roll.frames() {
        for p in 0..PITCHES {
            counts[p % 12] += roll.velocity(p, f) as u64;
        }
    }
    let total: u64 = counts.iter().sum();
    counts
        .iter()
        .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
        .collect()
}

pub fn note_density(roll: &PianoRoll, window: usize) -> Vec<f64> {
    let windows = roll.frames().div_ceil(window);
    let mut vertical = Vec::new();
    let mut horizontal = Vec::new();
    for w in 0..windows {
        let mut on = 0u64;
        let mut starts = 0u64;
        for f in w * window..(w + 1) * window {
            if f >= roll.frames() {
                break;
            }
            let mut any_start = false;
            for p in 0..PITCHES {
                if roll.velocity(p, f) > 0 {
                    on += 1;
                }
                if roll.onset(p, f) {
                    any_start = true;
                }
            }
            if any_start {
                starts += 1;
            }
        }
        vertical.push(on as f64 / window as f64);
        horizontal.push(starts as f64);
    }
    vertical.extend(horizontal);
    vertical
}

const TEMPLATES: &[(&[u8], u8)] = &[
    (&[0, 4, 7], 0),
    (&[0, 3, 7], 1),
    (&[0, 3, 6], 2),
    (&[0, 4, 8], 3),
    (&[0, 5, 7], 4),
    (&[0, 2, 7], 4),
    (&[0, 4, 7, 10], 5),
    (&[0, 4, 7, 11], 5),
    (&[0, 3, 7, 10], 5),
    (&[0, 3, 6, 10], 5),
    (&[0, 3, 6, 9], 5),
    (&[0, 3, 7, 11], 5),
];

fn classify(set: &[u8]) -> u8 {
    for &root in set {
        let mut intervals: Vec<u8> = set.iter().map(|&pc| (pc + 12 - root) % 12).collect();
        intervals.sort();
        for (template, id) in TEMPLATES {
            if intervals == *template {
                return *id;
            }
        }
    }
    6
}

pub fn chord_sequence(roll: &PianoRoll, window: usize) -> Vec<u8> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < roll.frames() {
        let end = (start + window).min(roll.frames());
        let sets: Vec<Vec<u8>> = (start..end)
            .map(|f| {
                let mut s: Vec<u8> = (0..PITCHES)
                    .filter(|&p| roll.velocity(p, f) > 0)
                    .map(|p| (p % 12) as u8)
                    .collect();
                s.sort();
                s.dedup();
                s
            })
            .collect();
        // Enumerate maximal runs and keep the first longest.
        let mut best: Option<(usize, &Vec<u8>)> = None;
        let mut i = 0;
        while i < sets.len() {
            let mut j = i;
            while j < sets.len() && sets[j] == sets[i] {
                j += 1;
            }
            if best.is_none_or(|(len, _)| j - i > len) {
                best = Some((j - i, &sets[i]));
            }
            i = j;
        }
        let set = best.map(|b| b.1.clone()).unwrap_or_default();
        out.push(if set.is_empty() { 6 } else { classify(&set) });
        start = end;
    }
    out
}
