//! Command implementations.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::Serialize;

use scg_core::evaluation::{chroma_similarity, groove_similarity, overlapping_area, seven_attributes, OaReport};
use scg_core::guidance::{
    edit_sample, hybrid_gradient_scg_sample, scg_ddpm_sample, scg_sddim_sample, uniform_taus, ConstantLoss,
    GuidedSample, LossFunction, StepDiagnostics,
};
use scg_core::io::{read_roll_any, save_roll, write_midi, EditMask};
use scg_core::music::{threshold_postprocess, PianoRoll, RollLoss, RuleTargets, CHANNELS, PITCHES};
use scg_core::score::{train_denoiser, DenoiserConfig, LearnedDenoiser, NoisePredictor, ScoreProvider};
use scg_core::toy::{encode_all, toy_denoiser_config, toy_rolls};
use scg_core::verify::{run_all, VerifyContext};
use scg_core::Tensor;

use crate::config::{parse_gmm_loss, RunConfig};
use crate::{EvalArgs, RulesArgs, TrainArgs, VerifyArgs};

fn load_backend(cfg: &RunConfig) -> Result<ScoreProvider> {
    let path = cfg.backend.as_ref().context("--backend is required")?;
    let is_gmm = path.extension().is_some_and(|e| e == "json");
    if !is_gmm && cfg.schedule.is_some() {
        log::warn!("--schedule ignored: the denoiser carries its training schedule");
    }
    Ok(ScoreProvider::from_path(path, cfg.schedule_spec().build()?)?)
}

/// Frame count when the backend produces piano rolls.
fn roll_frames(p: &ScoreProvider) -> Option<usize> {
    match p.sample_shape() {
        [c, pitches, f] if *c == CHANNELS && *pitches == PITCHES => Some(*f),
        _ => None,
    }
}

fn build_loss(cfg: &RunConfig, p: &ScoreProvider) -> Result<Option<Box<dyn LossFunction>>> {
    match (&cfg.rules, &cfg.loss) {
        (Some(_), Some(_)) => bail!("give either --rules or --loss, not both"),
        (Some(path), None) => {
            ensure!(roll_frames(p).is_some(), "--rules needs a piano-roll backend");
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let doc = RuleTargets::from_json(&text)?;
            Ok(Some(Box::new(RollLoss::from_targets(&doc, &cfg.guidance.weights)?)))
        }
        (None, Some(spec)) => {
            ensure!(
                p.as_gmm().is_some(),
                "--loss applies to mixture backends; use --rules for rolls"
            );
            Ok(Some(parse_gmm_loss(spec, p.dim())?))
        }
        (None, None) => Ok(None),
    }
}

/// One sample. Without a loss the guided samplers run with a constant loss
/// and `n = 1`, which is exactly the unguided chain.
fn draw(
    p: &ScoreProvider,
    loss: Option<&dyn LossFunction>,
    cfg: &RunConfig,
    taus: Option<&[usize]>,
    seed: u64,
) -> Result<GuidedSample> {
    let g = &cfg.guidance;
    let (loss, guided) = match loss {
        Some(l) => (l, true),
        None => (&ConstantLoss(0.0) as &dyn LossFunction, false),
    };
    let (x, diags) = match taus {
        Some(t) => scg_sddim_sample(p, loss, g, cfg.eta.unwrap_or(1.0), t, seed)?,
        None if g.gradient_scale.is_some() => {
            let diff = loss.differentiable().then_some(loss);
            hybrid_gradient_scg_sample(p, loss, diff, g, seed)?
        }
        None => scg_ddpm_sample(p, loss, g, seed)?,
    };
    Ok((x, if guided { diags } else { Vec::new() }))
}

#[derive(Serialize)]
struct DiagRecord<'a> {
    sample: usize,
    #[serde(flatten)]
    step: &'a StepDiagnostics,
}

fn write_diagnostics(path: &Path, per_sample: &[Vec<StepDiagnostics>]) -> Result<()> {
    let mut out = String::new();
    for (sample, diags) in per_sample.iter().enumerate() {
        for step in diags {
            out += &serde_json::to_string(&DiagRecord { sample, step })?;
            out.push('\n');
        }
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

#[derive(Serialize)]
struct SampleMetrics {
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    chroma_similarity: Option<f64>,
}

#[derive(Serialize)]
struct Metrics {
    samples: Vec<SampleMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mean_loss: Option<f64>,
}

impl Metrics {
    fn new(samples: Vec<SampleMetrics>) -> Self {
        let losses: Vec<f64> = samples.iter().filter_map(|s| s.loss).collect();
        let mean_loss = (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64);
        Self { samples, mean_loss }
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

fn write_roll(dir: &Path, stem: &str, roll: &PianoRoll) -> Result<()> {
    write_midi(dir.join(format!("{stem}.mid")), roll)?;
    save_roll(dir.join(format!("{stem}.pr01")), roll)?;
    Ok(())
}

/// One row per sample: `sample,x0,x1,...`, shortest round-trip formatting.
fn samples_csv(samples: &[Tensor]) -> String {
    let dim = samples.first().map_or(0, Tensor::len);
    let mut out = String::from("sample");
    for j in 0..dim {
        let _ = write!(out, ",x{j}");
    }
    out.push('\n');
    for (i, s) in samples.iter().enumerate() {
        let _ = write!(out, "{i}");
        for v in s.data() {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

fn diagnostics_path(cfg: &RunConfig, dir: &Path) -> PathBuf {
    cfg.diagnostics.clone().unwrap_or_else(|| dir.join("diagnostics.jsonl"))
}

pub fn sample(cfg: &RunConfig) -> Result<()> {
    let seed = cfg.seed()?;
    let p = load_backend(cfg)?;
    let t_max = p.schedule().steps();
    cfg.guidance.validate(t_max)?;
    ensure!(cfg.num_samples > 0, "--num-samples must be at least 1");
    let loss = build_loss(cfg, &p)?;
    if loss.is_none() && cfg.guidance.n > 1 {
        bail!(
            "invalid parameter: n = {} needs a loss; pass --rules or --loss",
            cfg.guidance.n
        );
    }
    let taus = cfg.steps.map(|s| uniform_taus(t_max, s)).transpose()?;
    let dir = cfg.out_dir();
    cfg.echo()?;

    let frames = roll_frames(&p);
    let mut samples = Vec::new();
    let mut diags = Vec::new();
    let mut metrics = Vec::new();
    for i in 0..cfg.num_samples {
        let s = seed.wrapping_add(i as u64);
        log::info!("sample {i} (seed {s})");
        let (x, d) = draw(&p, loss.as_deref(), cfg, taus.as_deref(), s)?;
        let final_loss = loss.as_ref().map(|l| l.loss(&x)).transpose()?;
        metrics.push(SampleMetrics {
            seed: s,
            loss: final_loss,
            chroma_similarity: None,
        });
        if frames.is_some() {
            write_roll(&dir, &format!("sample_{i:03}"), &threshold_postprocess(&x)?)?;
        }
        samples.push(x);
        diags.push(d);
    }
    if frames.is_none() {
        let path = dir.join("samples.csv");
        std::fs::write(&path, samples_csv(&samples)).with_context(|| format!("writing {}", path.display()))?;
    }
    if loss.is_some() {
        write_diagnostics(&diagnostics_path(cfg, &dir), &diags)?;
    }
    write_json(&dir.join("metrics.json"), &Metrics::new(metrics))
}

fn parse_mask(spec: &str, frames: usize) -> Result<EditMask> {
    let parts: Vec<&str> = spec.split(':').collect();
    let num = |s: &str| s.parse::<usize>().with_context(|| format!("bad mask bound {s:?}"));
    Ok(match parts.as_slice() {
        ["all"] => EditMask::regenerate_all(frames),
        ["none"] => EditMask::preserve_all(frames),
        ["time", a, b] => EditMask::time_window(frames, num(a)?, num(b)?)?,
        ["pitch", a, b] => EditMask::pitch_range(frames, num(a)?, num(b)?)?,
        _ => bail!("mask must be all, none, time:START:END or pitch:LOW:HIGH, got {spec:?}"),
    })
}

pub fn edit(cfg: &RunConfig) -> Result<()> {
    let seed = cfg.seed()?;
    let p = load_backend(cfg)?;
    let frames = roll_frames(&p).context("editing needs a piano-roll backend")?;
    cfg.guidance.validate(p.schedule().steps())?;
    ensure!(cfg.num_samples > 0, "--num-samples must be at least 1");
    let src_path = cfg.source.as_ref().context("--source is required")?;
    let source = read_roll_any(src_path, frames)?;
    ensure!(
        source.frames() == frames,
        "source has {} frames but the backend samples {frames}",
        source.frames()
    );
    let mask = parse_mask(cfg.mask.as_deref().unwrap_or("all"), frames)?;
    let k = cfg.noise_level.context("--noise-level is required")?;
    let loss = build_loss(cfg, &p)?;
    let dir = cfg.out_dir();
    cfg.echo()?;

    let encoded = source.encode();
    let mut metrics = Vec::new();
    for i in 0..cfg.num_samples {
        let s = seed.wrapping_add(i as u64);
        let x = edit_sample(&p, &encoded, mask.tensor(), k, loss.as_deref(), &cfg.guidance, s)?;
        let roll = threshold_postprocess(&x)?;
        metrics.push(SampleMetrics {
            seed: s,
            loss: loss.as_ref().map(|l| l.loss(&x)).transpose()?,
            chroma_similarity: Some(chroma_similarity(&roll, &source)?),
        });
        write_roll(&dir, &format!("edit_{i:03}"), &roll)?;
    }
    write_json(&dir.join("metrics.json"), &Metrics::new(metrics))
}

fn emit(out: Option<&Path>, value: &impl Serialize) -> Result<()> {
    match out {
        Some(p) => write_json(p, value),
        None => {
            println!("{}", serde_json::to_string_pretty(value)?);
            Ok(())
        }
    }
}

pub fn rules(args: &RulesArgs) -> Result<()> {
    let roll = read_roll_any(&args.input, args.frames)?;
    emit(args.out.as_deref(), &RuleTargets::extract(&roll)?)
}

/// Rolls in `dir` (.mid, .midi, .pr01), in file-name order.
fn load_dir(dir: &Path, frames: usize) -> Result<Vec<PianoRoll>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading directory {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()
        .with_context(|| format!("reading directory {}", dir.display()))?;
    // A sample written in both formats counts once, read from PR01.
    let mut by_stem = std::collections::BTreeMap::new();
    paths.sort();
    for p in paths {
        let ext = p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        match ext.as_deref() {
            Some("pr01") => {
                by_stem.insert(p.with_extension(""), p);
            }
            Some("mid" | "midi") => {
                by_stem.entry(p.with_extension("")).or_insert(p);
            }
            _ => {}
        }
    }
    ensure!(!by_stem.is_empty(), "no .mid or .pr01 files in {}", dir.display());
    by_stem.values().map(|p| Ok(read_roll_any(p, frames)?)).collect()
}

#[derive(Serialize)]
struct EvalReport {
    count: usize,
    oa: OaReport,
    /// Mean over rolls paired in file-name order.
    chroma_similarity: f64,
    groove_similarity: f64,
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let reference = load_dir(&args.reference, args.frames)?;
    let generated = load_dir(&args.generated, args.frames)?;
    ensure!(
        reference.len() == generated.len(),
        "sets differ in size: {} reference vs {} generated",
        reference.len(),
        generated.len()
    );
    let attrs = |rs: &[PianoRoll]| rs.iter().map(seven_attributes).collect::<Vec<_>>();
    let oa = overlapping_area(&attrs(&reference), &attrs(&generated))?;
    let n = reference.len() as f64;
    let mut chroma = 0.0;
    let mut groove = 0.0;
    for (a, b) in reference.iter().zip(&generated) {
        chroma += chroma_similarity(a, b)?;
        groove += groove_similarity(a, b)?;
    }
    let report = EvalReport {
        count: reference.len(),
        oa,
        chroma_similarity: chroma / n,
        groove_similarity: groove / n,
    };
    emit(args.out.as_deref(), &report)
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let (rolls, mut config) = match &args.data {
        Some(dir) => (load_dir(dir, args.frames)?, DenoiserConfig::default()),
        None => (toy_rolls(args.corpus_size, args.seed), toy_denoiser_config()),
    };
    if let Some(h) = &args.hidden {
        config.hidden = h.clone();
    }
    if let Some(s) = args.train_steps {
        config.train_steps = s;
    }
    if let Some(b) = args.batch_size {
        config.batch_size = b;
    }
    if let Some(lr) = args.learning_rate {
        config.learning_rate = lr;
    }
    let schedule = args.schedule.unwrap_or_default();
    let model = train_denoiser(&encode_all(&rolls), schedule, &config, args.seed)?;
    model.save(&args.model)?;
    let meta = model.meta();
    println!(
        "{}",
        serde_json::json!({
            "model": args.model,
            "examples": rolls.len(),
            "parameters": model.param_count(),
            "steps": meta.steps,
            "final_loss": meta.final_loss,
        })
    );
    Ok(())
}

pub fn verify(args: &VerifyArgs) -> Result<bool> {
    let ctx = match &args.model {
        Some(p) => VerifyContext::with_model(LearnedDenoiser::load(p)?)?,
        None => VerifyContext::new(),
    };
    let reports = run_all(&args.criteria, &ctx, |r| println!("{}", r.line()));
    let failed = reports.iter().filter(|r| !r.passed).count();
    println!("verify: {} passed, {failed} failed", reports.len() - failed);
    Ok(failed == 0)
}
