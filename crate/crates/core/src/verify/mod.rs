//! The acceptance battery: twelve end-to-end checks against analytic
//! oracles, brute-force scans and qualitative trends.
//!
//! Shared by the `verify` command and the `acceptance` test target. Every
//! check runs at full size and fixed seeds; nothing here is tuned to pass.

pub mod brute;

use std::sync::OnceLock;
use std::time::Instant;

use serde::Serialize;

use crate::error::Result;
use crate::evaluation::{
    chroma_similarity, histogram, histogram_overlap, overlapping_area, rejection_oracle, seven_attributes,
    step_posterior_histogram, step_posterior_mass, tilted_gaussian, total_variation, AttributeSet,
};
use crate::guidance::{
    ddpm_sample, desirability_mc, edit_sample, hybrid_gradient_scg_sample, scg_ddpm_sample, scg_sddim_sample,
    sddim_sample, uniform_taus, GuidanceConfig, LossFunction, QuadraticLoss, Selection, StepLoss, WeightedLoss,
};
use crate::io::{decode_roll, encode_roll, midi_to_roll, roll_to_midi, EditMask};
use crate::music::corpus::{random_roll, toy_piece};
use crate::music::{
    chord_sequence, note_density, pitch_histogram, threshold_postprocess, RollLoss, RuleTarget, DEFAULT_WINDOW, PITCHES,
};
use crate::rng::{substream, Domain};
use crate::schedule::{NoiseSchedule, ScheduleSpec};
use crate::score::{GmmSpec, LearnedDenoiser, NoisePredictor, ScoreProvider};
use crate::tensor::Tensor;
use crate::toy::{train_toy_denoiser, TOY_FRAMES};
use rand::Rng;

#[derive(Debug, Clone, Serialize)]
pub struct CriterionReport {
    pub id: u8,
    pub title: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl CriterionReport {
    pub fn line(&self) -> String {
        format!(
            "[{}] criterion {:>2}: {} -- {} ({:.1}s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.title,
            self.detail,
            self.seconds
        )
    }
}

pub const TITLES: [&str; 12] = [
    "posterior sampling, differentiable loss",
    "posterior sampling, non-differentiable loss",
    "rule loss decreases with candidate count",
    "hybrid gradient + selection beats selection alone",
    "desirability tracks the rule likelihood",
    "score and Tweedie correctness",
    "n = 1 equals unguided sampling bitwise",
    "stochastic DDIM with S = T matches DDPM",
    "rule extractors match brute-force scans",
    "editing preserves the mask and trades resemblance for noise",
    "overlapping-area sanity",
    "MIDI and PR01 round trips",
];

/// Lazily trained toy denoiser shared by the piano-roll criteria.
#[derive(Default)]
pub struct VerifyContext {
    toy: OnceLock<std::result::Result<ScoreProvider, String>>,
}

impl VerifyContext {
    pub fn new() -> Self {
        Self::default()
    }

    /// Uses an already trained model instead of training one.
    pub fn with_model(model: LearnedDenoiser) -> Result<Self> {
        let ctx = Self::default();
        let _ = ctx.toy.set(Ok(ScoreProvider::learned(model)?));
        Ok(ctx)
    }

    fn toy(&self) -> std::result::Result<&ScoreProvider, String> {
        self.toy
            .get_or_init(|| {
                log::info!("training toy piano-roll denoiser");
                train_toy_denoiser(0)
                    .and_then(ScoreProvider::learned)
                    .map_err(|e| e.to_string())
            })
            .as_ref()
            .map_err(Clone::clone)
    }
}

/// Runs one criterion by id (1..=12).
pub fn run_criterion(id: u8, ctx: &VerifyContext) -> CriterionReport {
    let start = Instant::now();
    let outcome = match id {
        1 => c1_tilted_gaussian(),
        2 => c2_step_posterior(),
        3 => ctx.toy().map_err(crate::Error::State).and_then(c3_candidate_trend),
        4 => c4_hybrid(),
        5 => c5_desirability(),
        6 => c6_score(),
        7 => c7_degenerate_n(),
        8 => c8_sddim(),
        9 => c9_rule_oracles(),
        10 => ctx.toy().map_err(crate::Error::State).and_then(c10_editing),
        11 => c11_oa(),
        12 => c12_io(),
        _ => Err(crate::Error::Parameter(format!("no criterion {id}"))),
    };
    let (passed, detail) = match outcome {
        Ok(v) => v,
        Err(e) => (false, format!("error: {e}")),
    };
    CriterionReport {
        id,
        title: TITLES.get(id.wrapping_sub(1) as usize).copied().unwrap_or("unknown"),
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Runs the given criteria (all when empty), reporting each as it finishes.
pub fn run_all(ids: &[u8], ctx: &VerifyContext, mut on_report: impl FnMut(&CriterionReport)) -> Vec<CriterionReport> {
    let ids: Vec<u8> = if ids.is_empty() {
        (1..=12).collect()
    } else {
        ids.to_vec()
    };
    ids.iter()
        .map(|&id| {
            let r = run_criterion(id, ctx);
            on_report(&r);
            r
        })
        .collect()
}

type Outcome = Result<(bool, String)>;

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0))
}

fn default_schedule() -> Result<NoiseSchedule> {
    ScheduleSpec::default().build()
}

fn bimodal() -> Result<GmmSpec> {
    GmmSpec::new(vec![0.5, 0.5], vec![vec![-2.0], vec![2.0]], vec![vec![1.0], vec![1.0]])
}

/// Terminal first coordinates of guided runs over seeds `0..count`.
fn guided_samples(p: &ScoreProvider, loss: &dyn LossFunction, cfg: &GuidanceConfig, count: u64) -> Result<Vec<f64>> {
    (0..count)
        .map(|seed| Ok(scg_ddpm_sample(p, loss, cfg, seed)?.0.data()[0]))
        .collect()
}

fn c1_tilted_gaussian() -> Outcome {
    let sched = default_schedule()?;
    let p = ScoreProvider::gmm(GmmSpec::standard_normal(1), sched)?;
    let loss = QuadraticLoss::new(Tensor::scalar(2.0));
    // Sampling exp(-l) p requires the path-integral (softmax) weighting at temperature 1.
    let cfg = GuidanceConfig {
        selection: Selection::Softmax { temperature: 1.0 },
        ..GuidanceConfig::full_window(16, 1000)
    };
    let start = Instant::now();
    let xs = guided_samples(&p, &loss, &cfg, 2000)?;
    let secs = start.elapsed().as_secs_f64();
    let (m, v) = mean_var(&xs);
    let (tm, tv) = tilted_gaussian(0.0, 1.0, 2.0, 1.0);
    let ok = (m - tm).abs() <= 0.1 && ((v - tv) / tv).abs() <= 0.15 && secs <= 300.0;
    Ok((
        ok,
        format!("mean {m:.4} (target {tm}, tol 0.1), var {v:.4} (target {tv}, tol 15%), 2000 samples in {secs:.0}s"),
    ))
}

fn c2_step_posterior() -> Outcome {
    let g = bimodal()?;
    let p = ScoreProvider::gmm(g.clone(), default_schedule()?)?;
    let loss = StepLoss::new(0.0, 5.0);
    let cfg = GuidanceConfig::full_window(16, 1000);
    let xs = guided_samples(&p, &loss, &cfg, 2000)?;
    let frac = xs.iter().filter(|&&x| x > 0.0).count() as f64 / xs.len() as f64;
    let oracle = rejection_oracle(&g, &loss, 100_000, 2)?;
    let oracle_x: Vec<f64> = oracle.samples.iter().map(|s| s[0]).collect();
    let h = histogram(&xs, -6.0, 6.0, 20);
    let tv = total_variation(&h, &histogram(&oracle_x, -6.0, 6.0, 20));
    let tv_exact = total_variation(&h, &step_posterior_histogram(&g, 0.0, 5.0, -6.0, 6.0, 20)?);
    let exact = step_posterior_mass(&g, 0.0, 5.0)?;
    Ok((
        frac >= 0.9 && tv <= 0.15,
        format!(
            "P(x>0) = {frac:.4} (>= 0.9; exact {exact:.4}), TV to rejection oracle {tv:.4} (<= 0.15; to exact bins {tv_exact:.4})"
        ),
    ))
}

/// Note-density target for the toy task: a dense piece's statistics.
pub fn toy_density_target() -> Result<RuleTarget> {
    let piece = toy_piece(TOY_FRAMES, 0.9, &mut substream(11, Domain::Oracle, 3, 0));
    Ok(RuleTarget::NoteDensity(note_density(&piece, DEFAULT_WINDOW)?.values))
}

fn c3_candidate_trend(p: &ScoreProvider) -> Outcome {
    let loss = RollLoss::new(vec![toy_density_target()?], vec![1.0])?;
    let taus = uniform_taus(p.schedule().steps(), 100)?;
    let mut means = Vec::new();
    for n in [1usize, 4, 16] {
        let cfg = GuidanceConfig {
            n,
            ..GuidanceConfig::default()
        };
        let mut total = 0.0;
        for seed in 0..20 {
            let (x, _) = scg_sddim_sample(p, &loss, &cfg, 1.0, &taus, seed)?;
            total += loss.loss(&x)?;
        }
        means.push(total / 20.0);
    }
    Ok((
        means[2] < means[1] && means[1] < means[0],
        format!(
            "mean ND loss over 20 samples: n=1 {:.4}, n=4 {:.4}, n=16 {:.4} (need strictly decreasing)",
            means[0], means[1], means[2]
        ),
    ))
}

fn c4_hybrid() -> Outcome {
    let p = ScoreProvider::gmm(bimodal()?, default_schedule()?)?;
    let quad = QuadraticLoss::new(Tensor::scalar(1.0));
    let loss = WeightedLoss::new()
        .with(1.0, quad.clone())
        .with(1.0, StepLoss::new(0.0, 5.0));
    let cfg = GuidanceConfig {
        gradient_scale: Some(0.002),
        n: 4,
        ..GuidanceConfig::default()
    };
    let runs = 200u64;
    let mut diffs = Vec::with_capacity(runs as usize);
    let (mut hybrid, mut pure) = (0.0, 0.0);
    for seed in 0..runs {
        let (xh, _) = hybrid_gradient_scg_sample(&p, &loss, Some(&quad), &cfg, seed)?;
        let (xp, _) = scg_ddpm_sample(&p, &loss, &cfg, seed)?;
        let (lh, lp) = (loss.loss(&xh)?, loss.loss(&xp)?);
        hybrid += lh / runs as f64;
        pure += lp / runs as f64;
        diffs.push(lh - lp);
    }
    let (_, var) = mean_var(&diffs);
    let se = (var / runs as f64).sqrt();
    Ok((
        hybrid <= pure,
        format!(
            "mean composite loss over {runs} paired seeds: hybrid {hybrid:.4e}, selection only {pure:.4e} (paired difference {:.2} SE)",
            (hybrid - pure) / se
        ),
    ))
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let (ma, _) = mean_var(a);
    let (mb, _) = mean_var(b);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn c5_desirability() -> Outcome {
    // Default betas rescaled to 50 steps.
    let sched = NoiseSchedule::linear(50, 2e-3, 0.4)?;
    let t = 25;
    let ab = sched.alpha_bar(t);
    let p = ScoreProvider::gmm(GmmSpec::standard_normal(1), sched)?;
    let c = 2.0;
    let loss = QuadraticLoss::new(Tensor::scalar(c));
    let (mut est, mut exact) = (Vec::new(), Vec::new());
    for k in 0..21 {
        let x = -3.0 + 8.0 * k as f64 / 20.0;
        est.push(desirability_mc(&p, &loss, &Tensor::scalar(x), t, 10_000, k as u64)?);
        // x0 | x_t ~ N(sqrt(abar) x, 1 - abar); E exp(-(x0 - c)^2 / 2) in closed form.
        let (m, v) = (ab.sqrt() * x, 1.0 - ab);
        exact.push((-(m - c).powi(2) / (2.0 * (1.0 + v))).exp() / (1.0 + v).sqrt());
    }
    let r = pearson(&est, &exact);
    Ok((r >= 0.99, format!("Pearson r = {r:.5} over 21 grid points (>= 0.99)")))
}

fn c6_score() -> Outcome {
    let sched = default_schedule()?;
    let g = GmmSpec::new(
        vec![0.2, 0.5, 0.3],
        vec![vec![-2.0, 1.0], vec![0.5, -0.5], vec![3.0, 2.0]],
        vec![vec![0.3, 1.2], vec![1.0, 0.5], vec![2.0, 0.8]],
    )?;
    let p = ScoreProvider::gmm(g.clone(), sched.clone())?;
    let mut rng = substream(6, Domain::Oracle, 0, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let t = rng.random_range(1..=1000);
        let x = vec![rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)];
        let ab = sched.alpha_bar(t);
        let marginal = g.marginal_at(ab);
        let eps = p.eps(&Tensor::vector(x.clone()), t)?;
        let mut fd = vec![0.0; 2];
        for i in 0..2 {
            let h = 1e-5 * (1.0 + x[i].abs());
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[i] += h;
            xm[i] -= h;
            let grad = (marginal.log_density(&xp) - marginal.log_density(&xm)) / (2.0 * h);
            fd[i] = -(1.0 - ab).sqrt() * grad;
        }
        let err: f64 = eps
            .data()
            .iter()
            .zip(&fd)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
        worst = worst.max(err / norm.max(1e-12));
    }
    // Tweedie on standard-normal data is sqrt(abar) x_t.
    let pn = ScoreProvider::gmm(GmmSpec::standard_normal(3), sched.clone())?;
    let mut tweedie_err: f64 = 0.0;
    for _ in 0..100 {
        let t = rng.random_range(1..=1000);
        let x = Tensor::vector((0..3).map(|_| rng.random_range(-5.0..5.0)).collect());
        let x0 = crate::schedule::tweedie_x0(&x, t, &pn.eps(&x, t)?, &sched)?;
        let ab = sched.alpha_bar(t);
        for (a, b) in x0.data().iter().zip(x.data()) {
            tweedie_err = tweedie_err.max((a - ab.sqrt() * b).abs());
        }
    }
    Ok((
        worst <= 1e-4 && tweedie_err <= 1e-8,
        format!("max relative eps error vs finite differences {worst:.2e} (<= 1e-4); max Tweedie error {tweedie_err:.2e} (<= 1e-8)"),
    ))
}

fn c7_degenerate_n() -> Outcome {
    let sched = default_schedule()?;
    let p1 = ScoreProvider::gmm(bimodal()?, sched.clone())?;
    let p2 = ScoreProvider::gmm(
        GmmSpec::new(
            vec![0.3, 0.7],
            vec![vec![1.0, -1.0], vec![-2.0, 0.5]],
            vec![vec![0.5, 1.0], vec![1.0, 2.0]],
        )?,
        sched,
    )?;
    let cfg = GuidanceConfig::full_window(1, 1000);
    let mut equal = 0;
    for seed in 0..10 {
        let (p, loss): (&ScoreProvider, Box<dyn LossFunction>) = if seed % 2 == 0 {
            (&p1, Box::new(StepLoss::new(0.0, 5.0)))
        } else {
            (&p2, Box::new(QuadraticLoss::new(Tensor::vector(vec![1.0, 1.0]))))
        };
        let (g, _) = scg_ddpm_sample(p, loss.as_ref(), &cfg, seed)?;
        let u = ddpm_sample(p, seed)?;
        if g.data().iter().zip(u.data()).all(|(a, b)| a.to_bits() == b.to_bits()) {
            equal += 1;
        }
    }
    Ok((equal == 10, format!("{equal}/10 seeds bitwise identical")))
}

fn c8_sddim() -> Outcome {
    let sched = default_schedule()?;
    let p = ScoreProvider::gmm(GmmSpec::gaussian(vec![0.5], vec![2.0])?, sched)?;
    let taus: Vec<usize> = (1..=1000).collect();
    let n = 5000u64;
    let a: Vec<f64> = (0..n)
        .map(|s| Ok(sddim_sample(&p, 1.0, &taus, s)?.data()[0]))
        .collect::<Result<_>>()?;
    let b: Vec<f64> = (0..n)
        .map(|s| Ok(ddpm_sample(&p, n + s)?.data()[0]))
        .collect::<Result<_>>()?;
    let (ma, va) = mean_var(&a);
    let (mb, vb) = mean_var(&b);
    let nf = n as f64;
    let m4 = |xs: &[f64], m: f64| xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / nf;
    let se_mean = (va / nf + vb / nf).sqrt();
    let se_var = ((m4(&a, ma) - va * va) / nf + (m4(&b, mb) - vb * vb) / nf).sqrt();
    let ok = (ma - mb).abs() <= 3.0 * se_mean && (va - vb).abs() <= 3.0 * se_var;
    Ok((
        ok,
        format!(
            "sDDIM mean {ma:.4} var {va:.4}; DDPM mean {mb:.4} var {vb:.4}; |dmean| = {:.2} SE, |dvar| = {:.2} SE (<= 3)",
            (ma - mb).abs() / se_mean,
            (va - vb).abs() / se_var
        ),
    ))
}

fn c9_rule_oracles() -> Outcome {
    let mut rng = substream(9, Domain::Oracle, 0, 0);
    let (mut ph, mut nd, mut cp) = (0, 0, 0);
    for _ in 0..500 {
        let roll = random_roll(1024, &mut rng);
        if pitch_histogram(&roll).to_vec() == brute::pitch_histogram(&roll) {
            ph += 1;
        }
        if note_density(&roll, DEFAULT_WINDOW)?.values == brute::note_density(&roll, DEFAULT_WINDOW) {
            nd += 1;
        }
        let ids: Vec<u8> = chord_sequence(&roll).iter().map(|c| c.id()).collect();
        if ids == brute::chord_sequence(&roll, DEFAULT_WINDOW) {
            cp += 1;
        }
    }
    Ok((
        ph == 500 && nd == 500 && cp == 500,
        format!("exact agreement on 500 random rolls: pitch histogram {ph}, note density {nd}, chords {cp}"),
    ))
}

fn c10_editing(p: &ScoreProvider) -> Outcome {
    let frames = TOY_FRAMES;
    let cfg = GuidanceConfig {
        n: 1,
        ..GuidanceConfig::default()
    };
    let (lo, hi) = (32, 96);
    let window = EditMask::time_window(frames, lo, hi)?;
    let mut rng = substream(10, Domain::Oracle, 0, 0);
    let mut random_mask = Tensor::zeros(&[3, PITCHES, frames]);
    random_mask
        .data_mut()
        .iter_mut()
        .for_each(|m| *m = rng.random_range(0..2) as f64);
    let masks = [
        window.clone(),
        EditMask::pitch_range(frames, 55, 80)?,
        EditMask::from_tensor(random_mask)?,
        EditMask::preserve_all(frames),
        EditMask::regenerate_all(frames),
    ];
    let levels = [200usize, 400, 600];
    let mut sims = [0.0f64; 3];
    let mut preserved_ok = true;
    let seeds = 20u64;
    for seed in 0..seeds {
        let density = seed as f64 / (seeds - 1) as f64;
        let source_roll = toy_piece(frames, density, &mut substream(seed, Domain::Oracle, 10, 1));
        let source = source_roll.encode();
        for (k, &level) in levels.iter().enumerate() {
            let out = edit_sample(p, &source, window.tensor(), level, None, &cfg, seed)?;
            preserved_ok &= preserved_exactly(&out, &source, &window);
            let edited = threshold_postprocess(&out)?.slice_frames(lo, hi);
            sims[k] += chroma_similarity(&edited, &source_roll.slice_frames(lo, hi))? / seeds as f64;
        }
        if seed < 4 {
            for mask in &masks {
                let out = edit_sample(p, &source, mask.tensor(), 400, None, &cfg, seed)?;
                preserved_ok &= preserved_exactly(&out, &source, mask);
            }
        }
    }
    Ok((
        preserved_ok && sims[0] > sims[1] && sims[1] > sims[2],
        format!(
            "preserved region bit-exact: {preserved_ok}; mean edited-region chroma similarity K=200 {:.4}, K=400 {:.4}, K=600 {:.4} (need strictly decreasing)",
            sims[0], sims[1], sims[2]
        ),
    ))
}

fn preserved_exactly(out: &Tensor, source: &Tensor, mask: &EditMask) -> bool {
    out.data()
        .iter()
        .zip(source.data())
        .enumerate()
        .all(|(i, (a, b))| !mask.preserved(i) || a.to_bits() == b.to_bits())
}

fn c11_oa() -> Outcome {
    let sets = |seed: u64| -> Vec<AttributeSet> {
        let mut rng = substream(seed, Domain::Oracle, 11, 0);
        (0..200)
            .map(|_| {
                let density = rng.random_range(0.0..1.0);
                seven_attributes(&toy_piece(256, density, &mut rng))
            })
            .collect()
    };
    let a = sets(1);
    let b = sets(2);
    let same = overlapping_area(&a, &b)?.average;
    let shifted: Vec<AttributeSet> = b
        .iter()
        .map(|s| {
            let mut s = s.clone();
            s.used_pitch += 1e4;
            s.ioi += 1e4;
            s.pitch_hist.iter_mut().for_each(|v| *v += 1e4);
            s.pitch_range += 1e4;
            s.velocity += 1e4;
            s.note_duration += 1e4;
            s.note_density += 1e4;
            s
        })
        .collect();
    let disjoint = overlapping_area(&a, &shifted)?.average;
    let half = histogram_overlap(&[0.0, 1.0, 2.0, 3.0], &[2.0, 3.0, 4.0, 5.0], 50)?;
    Ok((
        same >= 0.9 && disjoint <= 0.05 && half == 0.5,
        format!("same distribution {same:.4} (>= 0.9), disjoint {disjoint:.4} (<= 0.05), hand-built {half} (= 0.5)"),
    ))
}

fn c12_io() -> Outcome {
    let mut rng = substream(12, Domain::Oracle, 0, 0);
    let (mut midi_ok, mut pr01_ok) = (0, 0);
    for _ in 0..100 {
        let frames = rng.random_range(1..=1024);
        let roll = random_roll(frames, &mut rng);
        if midi_to_roll(&roll_to_midi(&roll), frames)? == roll {
            midi_ok += 1;
        }
        if decode_roll(&encode_roll(&roll))? == roll {
            pr01_ok += 1;
        }
    }
    Ok((
        midi_ok == 100 && pr01_ok == 100,
        format!("identical after round trip: MIDI {midi_ok}/100, PR01 {pr01_ok}/100"),
    ))
}
