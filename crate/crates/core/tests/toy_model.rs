//! End-to-end checks on the trained toy piano-roll denoiser.

use scg_core::evaluation::{overlapping_area, seven_attributes, AttributeSet};
use scg_core::guidance::{ddpm_sample, edit_sample, GuidanceConfig};
use scg_core::music::corpus::toy_corpus;
use scg_core::music::{roll_shape, threshold_postprocess, PianoRoll};
use scg_core::rng::{substream, Domain};
use scg_core::score::{LearnedDenoiser, NoisePredictor, ScoreProvider};
use scg_core::toy::{train_toy_denoiser, TOY_FRAMES};
use scg_core::Tensor;

fn attrs(rolls: &[PianoRoll]) -> Vec<AttributeSet> {
    rolls.iter().map(seven_attributes).collect()
}

#[test]
fn toy_denoiser_end_to_end() {
    let model = train_toy_denoiser(0).unwrap();
    assert!(model.meta().final_loss.is_finite());
    let back = LearnedDenoiser::from_bytes(&model.to_bytes()).unwrap();
    assert_eq!(back.to_bytes(), model.to_bytes());
    let p = ScoreProvider::learned(model).unwrap();
    let shape = roll_shape(TOY_FRAMES);
    let eps = p.eps(&Tensor::zeros(&shape), 500).unwrap();
    assert_eq!(eps.shape(), shape);
    assert!(eps.is_finite());

    // Fresh pieces from the corpus distribution, held out from training.
    let count = 16;
    let fresh = toy_corpus(count, TOY_FRAMES, &mut substream(77, Domain::Oracle, 0, 0));
    let sources = toy_corpus(count, TOY_FRAMES, &mut substream(78, Domain::Oracle, 0, 0));

    let cfg = GuidanceConfig {
        n: 1,
        ..GuidanceConfig::default()
    };
    let regenerate = Tensor::zeros(&shape);
    let edited: Vec<PianoRoll> = sources
        .iter()
        .enumerate()
        .map(|(i, src)| {
            let out = edit_sample(&p, &src.encode(), &regenerate, 500, None, &cfg, i as u64).unwrap();
            threshold_postprocess(&out).unwrap()
        })
        .collect();
    assert!(edited.iter().zip(&sources).any(|(e, s)| e != s));

    let unguided: Vec<PianoRoll> = (0..count as u64)
        .map(|s| threshold_postprocess(&ddpm_sample(&p, 500 + s).unwrap()).unwrap())
        .collect();
    let oa_edit = overlapping_area(&attrs(&fresh), &attrs(&edited)).unwrap().average;
    let oa_plain = overlapping_area(&attrs(&fresh), &attrs(&unguided)).unwrap().average;
    assert!(oa_edit >= oa_plain, "regenerated {oa_edit} vs unguided {oa_plain}");
}
