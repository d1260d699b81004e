//! Metric properties: similarity symmetry, OA bounds, attribute oracles and
//! the rejection sampler's moments.

use proptest::prelude::*;
use scg_core::evaluation::{
    chroma_similarity, groove_similarity, overlapping_area, quartile_clusters, rejection_oracle, seven_attributes,
    tilted_gaussian, AttributeSet,
};
use scg_core::guidance::{ConstantLoss, QuadraticLoss};
use scg_core::music::corpus::{random_roll, toy_piece};
use scg_core::music::{PianoRoll, PITCHES};
use scg_core::rng::{substream, Domain};
use scg_core::score::GmmSpec;
use scg_core::Tensor;

fn roll(seed: u64, frames: usize) -> PianoRoll {
    random_roll(frames, &mut substream(seed, Domain::Oracle, 300, 0))
}

/// Cell-by-cell re-derivation of the seven attributes.
fn naive_attributes(r: &PianoRoll) -> AttributeSet {
    let (frames, mut used, mut lo, mut hi) = (r.frames(), 0, usize::MAX, 0);
    let (mut vsum, mut cells, mut notes) = (0.0, 0usize, 0usize);
    let mut hist = [0.0; 12];
    for p in 0..PITCHES {
        let mut any = false;
        for f in 0..frames {
            let v = r.velocity(p, f);
            if v == 0 {
                continue;
            }
            any = true;
            vsum += v as f64;
            cells += 1;
            hist[p % 12] += v as f64;
            let fresh = f == 0 || r.velocity(p, f - 1) != v || r.onset(p, f);
            notes += fresh as usize;
        }
        if any {
            used += 1;
            lo = lo.min(p);
            hi = hi.max(p);
        }
    }
    let onsets: Vec<usize> = (0..frames).filter(|&f| (0..PITCHES).any(|p| r.onset(p, f))).collect();
    let ioi = if onsets.len() > 1 {
        (onsets[onsets.len() - 1] - onsets[0]) as f64 * 0.01 / (onsets.len() - 1) as f64
    } else {
        0.0
    };
    let windows = frames.div_ceil(128);
    let total: f64 = hist.iter().sum();
    AttributeSet {
        used_pitch: used as f64,
        ioi,
        pitch_hist: hist.map(|h| h / total),
        pitch_range: (hi - lo) as f64,
        velocity: vsum / cells as f64,
        note_duration: cells as f64 * 0.01 / notes as f64,
        // Mean of per-window sounding counts / 128.
        note_density: cells as f64 / 128.0 / windows as f64,
        empty: false,
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn similarities_symmetric(a in any::<u64>(), b in any::<u64>(), frames in 1usize..700) {
        let (ra, rb) = (roll(a, frames), roll(b, frames));
        for f in [chroma_similarity, groove_similarity] {
            let ab = f(&ra, &rb).unwrap();
            prop_assert_eq!(ab, f(&rb, &ra).unwrap());
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert!(close(f(&ra, &ra).unwrap(), 1.0));
        }
    }

    #[test]
    fn attributes_match_cell_scan(seed in any::<u64>(), frames in 1usize..700) {
        let r = roll(seed, frames);
        prop_assume!(!r.is_silent());
        let (a, b) = (seven_attributes(&r), naive_attributes(&r));
        prop_assert_eq!(a.used_pitch, b.used_pitch);
        prop_assert_eq!(a.pitch_range, b.pitch_range);
        prop_assert!(close(a.ioi, b.ioi));
        prop_assert!(close(a.velocity, b.velocity));
        prop_assert!(close(a.note_duration, b.note_duration), "{} vs {}", a.note_duration, b.note_duration);
        prop_assert!(close(a.note_density, b.note_density));
        for (x, y) in a.pitch_hist.iter().zip(&b.pitch_hist) {
            prop_assert!(close(*x, *y));
        }
    }

    #[test]
    fn oa_bounded_and_self_beats_shift(seed in any::<u64>(), shift in 0.5f64..50.0) {
        let mut rng = substream(seed, Domain::Oracle, 301, 0);
        let a: Vec<AttributeSet> = (0..12).map(|i| seven_attributes(&toy_piece(256, i as f64 / 11.0, &mut rng))).collect();
        let shifted: Vec<AttributeSet> = a
            .iter()
            .map(|s| AttributeSet { used_pitch: s.used_pitch + shift, velocity: s.velocity + shift, ..s.clone() })
            .collect();
        let own = overlapping_area(&a, &a).unwrap();
        let moved = overlapping_area(&a, &shifted).unwrap();
        for r in [&own, &moved] {
            prop_assert!((0.0..=1.0 + 1e-12).contains(&r.average));
            prop_assert!(r.attributes.values().all(|e| (0.0..=1.0 + 1e-12).contains(&e.oa)));
        }
        prop_assert!(own.average >= moved.average);
    }
}

#[test]
fn octave_and_groove_examples() {
    let mut a = PianoRoll::empty(256);
    a.add_note(60, 0, 200, 90);
    a.add_note(64, 10, 100, 40);
    let mut up = PianoRoll::empty(256);
    up.add_note(72, 0, 200, 90);
    up.add_note(76, 10, 100, 40);
    assert!(close(chroma_similarity(&a, &up).unwrap(), 1.0));

    // k onsets on even frames vs k on odd frames: 2k differing frames out of 128.
    let k = 20;
    let (mut even, mut odd) = (PianoRoll::empty(128), PianoRoll::empty(128));
    for i in 0..k {
        even.add_note(60, 2 * i, 1, 80);
        odd.add_note(60, 2 * i + 1, 1, 80);
    }
    assert!(close(
        groove_similarity(&even, &odd).unwrap(),
        1.0 - 2.0 * k as f64 / 128.0
    ));
    assert!(groove_similarity(&even, &PianoRoll::empty(64)).is_err());
}

#[test]
fn attribute_examples() {
    let mut r = PianoRoll::empty(128);
    r.add_note(60, 0, 10, 64);
    r.add_note(67, 0, 10, 64);
    let a = seven_attributes(&r);
    assert_eq!((a.used_pitch, a.pitch_range), (2.0, 7.0));
    let e = seven_attributes(&PianoRoll::empty(128));
    assert!(e.empty && e.used_pitch == 0.0 && e.velocity == 0.0);
}

#[test]
fn quartiles_by_rank() {
    let v = [5.0, 1.0, 3.0, 7.0, 2.0, 8.0, 4.0, 6.0];
    assert_eq!(quartile_clusters(&v), vec![2, 0, 1, 3, 0, 3, 1, 2]);
}

#[test]
fn rejection_oracle_moments() {
    // Zero loss: the oracle returns the mixture itself.
    let g = GmmSpec::new(vec![0.3, 0.7], vec![vec![-1.0], vec![2.0]], vec![vec![0.5], vec![1.5]]).unwrap();
    let n = 20_000;
    let out = rejection_oracle(&g, &ConstantLoss(0.0), n, 4).unwrap();
    assert_eq!(out.samples.len(), n);
    assert_eq!(out.acceptance_rate, 1.0);
    let (mean, var) = g.moments();
    let xs: Vec<f64> = out.samples.iter().map(|s| s[0]).collect();
    let m = xs.iter().sum::<f64>() / n as f64;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    assert!((m - mean[0]).abs() <= 3.0 * (var[0] / n as f64).sqrt());
    let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n as f64;
    assert!((v - var[0]).abs() <= 3.0 * ((m4 - v * v) / n as f64).sqrt());

    // Quadratic tilt of a Gaussian: conjugate closed form.
    let g = GmmSpec::gaussian(vec![0.0], vec![1.0]).unwrap();
    let out = rejection_oracle(&g, &QuadraticLoss::new(Tensor::scalar(2.0)), n, 5).unwrap();
    let (tm, tv) = tilted_gaussian(0.0, 1.0, 2.0, 1.0);
    let xs: Vec<f64> = out.samples.iter().map(|s| s[0]).collect();
    let m = xs.iter().sum::<f64>() / n as f64;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    assert!((m - tm).abs() <= 3.0 * (tv / n as f64).sqrt(), "{m} vs {tm}");
    assert!((v - tv).abs() <= 3.0 * tv * (2.0 / n as f64).sqrt(), "{v} vs {tv}");
    assert!((out.is_mean[0] - tm).abs() < 0.05);
}
