//! The reverse-process driver shared by every sampler variant.
//!
//! One loop handles DDPM and stochastic DDIM transitions, optional candidate
//! selection, the editing projection and the hybrid gradient shift. Keeping
//! them in one place is what makes the degenerate cases (n = 1, zero gradient
//! scale, empty differentiable parts) bit-for-bit equal to the plain
//! samplers.

use rayon::prelude::*;

use super::dps::dps_rule_step_direction;
use super::loss::LossFunction;
use super::{select_candidate, GuidanceConfig, StepDiagnostics};
use crate::error::{Error, Result};
use crate::rng::{normal_tensor, substream, Domain};
use crate::schedule::{ddpm_posterior_mean, forward_diffuse, tweedie_with};
use crate::score::NoisePredictor;
use crate::tensor::Tensor;

/// Rollout substream indices used by diagnostics, clear of the ones
/// desirability estimates use.
const ROLLOUT_DIAG_BASE: u64 = 1 << 40;

/// Terminal sample and per-step records of the guided steps.
pub type GuidedSample = (Tensor, Vec<StepDiagnostics>);

#[derive(Clone, Copy)]
enum Transition {
    Ddpm,
    Ddim { eta: f64 },
}

/// Binary-mask replacement: preserved cells (mask 1) come from the source.
struct Projection<'a> {
    source: &'a Tensor,
    mask: &'a Tensor,
}

impl Projection<'_> {
    fn apply(&self, x: &Tensor) -> Tensor {
        let mut out = x.clone();
        for ((o, &s), &m) in out.data_mut().iter_mut().zip(self.source.data()).zip(self.mask.data()) {
            if m == 1.0 {
                *o = s;
            }
        }
        out
    }
}

struct Run<'a, P: NoisePredictor + ?Sized> {
    model: &'a P,
    loss: Option<&'a dyn LossFunction>,
    cfg: &'a GuidanceConfig,
    seed: u64,
    transition: Transition,
    projection: Option<Projection<'a>>,
    /// Differentiable loss and scale for the hybrid shift.
    shift: Option<(&'a dyn LossFunction, f64)>,
    /// Substream domain and index offset for step noise.
    domain: Domain,
    index_base: u64,
}

struct Candidate {
    x: Tensor,
    eps: Tensor,
    loss: f64,
}

impl<P: NoisePredictor + ?Sized> Run<'_, P> {
    fn shape(&self) -> &[usize] {
        self.model.sample_shape()
    }

    fn noise(&self, t: usize, i: usize) -> Tensor {
        normal_tensor(
            self.shape(),
            self.seed,
            self.domain,
            t as u64,
            self.index_base + i as u64,
        )
    }

    fn x0_estimate(&self, x: &Tensor, t: usize, eps: &Tensor) -> Result<Tensor> {
        let x0 = if t == 0 {
            x.clone()
        } else {
            tweedie_with(x, self.model.schedule().alpha_bar(t), eps)?
        };
        Ok(match &self.projection {
            Some(p) => p.apply(&x0),
            None => x0,
        })
    }

    /// Evaluates a candidate at step `next`; the noise prediction is kept so
    /// the following step can reuse it.
    fn candidate(&self, mean: &Tensor, sigma: f64, t: usize, next: usize, i: usize) -> Result<Candidate> {
        let mut x = mean.clone();
        x.add_scaled(&self.noise(t, i), sigma)?;
        let eps = self.model.eps(&x, next)?;
        let x0 = self.x0_estimate(&x, next, &eps)?;
        let loss = match self.loss {
            Some(l) => l.loss(&x0).map_err(|e| Error::Loss { t, source: Box::new(e) })?,
            None => 0.0,
        };
        Ok(Candidate { x, eps, loss })
    }

    /// Mean and noise scale of the reverse transition `t -> next`.
    fn transition(&self, x: &Tensor, t: usize, next: usize, eps: &Tensor) -> Result<(Tensor, f64)> {
        let sched = self.model.schedule();
        let ab = sched.alpha_bar(t);
        // Editing replaces the noise prediction by the one implied by the projected estimate.
        let eps = match &self.projection {
            Some(p) => {
                let x0 = p.apply(&tweedie_with(x, ab, eps)?);
                x.lincomb(1.0 / (1.0 - ab).sqrt(), &x0, -(ab / (1.0 - ab)).sqrt())?
            }
            None => eps.clone(),
        };
        match self.transition {
            Transition::Ddpm => Ok((ddpm_posterior_mean(x, t, &eps, sched)?, sched.sigma(t))),
            Transition::Ddim { eta } => {
                let ab_next = sched.alpha_bar(next);
                let sigma = eta * ((1.0 - ab_next) / (1.0 - ab) * (1.0 - ab / ab_next)).sqrt();
                let x0 = tweedie_with(x, ab, &eps)?;
                let dir = (1.0 - ab_next - sigma * sigma).max(0.0).sqrt();
                Ok((x0.lincomb(ab_next.sqrt(), &eps, dir)?, sigma))
            }
        }
    }

    /// Runs the transitions in `steps` (pairs `(t, next)`, descending) from `x`.
    fn run(&self, mut x: Tensor, steps: &[(usize, usize)]) -> Result<GuidedSample> {
        let mut diags = Vec::new();
        let mut cached_eps: Option<Tensor> = None;
        let mut window_count = 0usize;
        for &(t, next) in steps {
            let eps = match cached_eps.take() {
                Some(e) => e,
                None => self.model.eps(&x, t)?,
            };
            if self.cfg.stop_at_t.is_some_and(|s| t <= s) {
                return Ok((self.x0_estimate(&x, t, &eps)?, diags));
            }
            let in_window = self.loss.is_some() && self.cfg.in_window(t);
            let guided = in_window && window_count.is_multiple_of(self.cfg.every_k);
            if in_window {
                window_count += 1;
            }
            let (mut mean, sigma) = self.transition(&x, t, next, &eps)?;
            if let Some((dloss, scale)) = self.shift {
                if guided && scale != 0.0 {
                    mean.add_scaled(&dps_rule_step_direction(&x, t, self.model, dloss, scale)?, 1.0)?;
                }
            }
            if next == 0 {
                x = mean;
                break;
            }
            if !guided {
                x = mean;
                x.add_scaled(&self.noise(t, 0), sigma)?;
                continue;
            }
            let n = self.cfg.n;
            let cands: Vec<Candidate> =
                if n > 1 && self.model.sample_shape().iter().product::<usize>() >= self.cfg.parallel_min_dim {
                    (0..n)
                        .into_par_iter()
                        .map(|i| self.candidate(&mean, sigma, t, next, i))
                        .collect::<Result<_>>()?
                } else {
                    (0..n)
                        .map(|i| self.candidate(&mean, sigma, t, next, i))
                        .collect::<Result<_>>()?
                };
            let losses: Vec<f64> = cands.iter().map(|c| c.loss).collect();
            let mut rng = substream(self.seed, Domain::Select, t as u64, self.index_base);
            let chosen = select_candidate(&losses, self.cfg.selection, &mut rng)?;
            let c = cands.into_iter().nth(chosen).expect("chosen index in range");
            let rollout_loss = match self.loss {
                Some(l) if self.cfg.rollout_diagnostics => {
                    let end = rollout(self.model, c.x.clone(), next, self.seed, ROLLOUT_DIAG_BASE + t as u64)?;
                    Some(l.loss(&end).map_err(|e| Error::Loss { t, source: Box::new(e) })?)
                }
                _ => None,
            };
            diags.push(StepDiagnostics {
                t,
                best: losses.iter().cloned().fold(f64::INFINITY, f64::min),
                losses,
                chosen,
                rollout_loss,
            });
            x = c.x;
            cached_eps = Some(c.eps);
        }
        if let Some(p) = &self.projection {
            x = p.apply(&x);
        }
        Ok((x, diags))
    }
}

fn ddpm_steps(from: usize) -> Vec<(usize, usize)> {
    (1..=from).rev().map(|t| (t, t - 1)).collect()
}

fn ddim_steps(taus: &[usize]) -> Vec<(usize, usize)> {
    (0..taus.len())
        .rev()
        .map(|s| (taus[s], if s == 0 { 0 } else { taus[s - 1] }))
        .collect()
}

fn check_taus(taus: &[usize], steps: usize) -> Result<()> {
    if taus.is_empty() {
        return Err(Error::param("step subsequence is empty"));
    }
    if taus[0] == 0 || *taus.last().unwrap() > steps || taus.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::param(format!(
            "step subsequence must be strictly increasing within 1..={steps}"
        )));
    }
    Ok(())
}

/// `S` roughly uniformly spaced steps ending at `T`.
pub fn uniform_taus(steps: usize, count: usize) -> Result<Vec<usize>> {
    if count == 0 || count > steps {
        return Err(Error::param(format!("need 1 <= S <= T, got S = {count}, T = {steps}")));
    }
    Ok((1..=count).map(|s| s * steps / count).collect())
}

fn initial_noise<P: NoisePredictor + ?Sized>(model: &P, seed: u64, t: usize) -> Tensor {
    normal_tensor(model.sample_shape(), seed, Domain::Init, t as u64, 0)
}

fn unguided_config() -> GuidanceConfig {
    GuidanceConfig {
        n: 1,
        guide_start_t: 0,
        ..GuidanceConfig::default()
    }
}

/// Plain ancestral DDPM sampling from `x_T ~ N(0, I)`.
pub fn ddpm_sample<P: NoisePredictor + ?Sized>(model: &P, seed: u64) -> Result<Tensor> {
    let cfg = unguided_config();
    let run = Run {
        model,
        loss: None,
        cfg: &cfg,
        seed,
        transition: Transition::Ddpm,
        projection: None,
        shift: None,
        domain: Domain::Step,
        index_base: 0,
    };
    let steps = model.schedule().steps();
    Ok(run.run(initial_noise(model, seed, steps), &ddpm_steps(steps))?.0)
}

/// Guided DDPM: `n` candidates per guided step, selected on the loss of
/// their clean-sample estimates.
pub fn scg_ddpm_sample<P: NoisePredictor + ?Sized>(
    model: &P,
    loss: &dyn LossFunction,
    cfg: &GuidanceConfig,
    seed: u64,
) -> Result<GuidedSample> {
    let steps = model.schedule().steps();
    cfg.validate(steps)?;
    let run = Run {
        model,
        loss: Some(loss),
        cfg,
        seed,
        transition: Transition::Ddpm,
        projection: None,
        shift: None,
        domain: Domain::Step,
        index_base: 0,
    };
    run.run(initial_noise(model, seed, steps), &ddpm_steps(steps))
}

/// Guided stochastic DDIM over the step subsequence `taus` (increasing).
pub fn scg_sddim_sample<P: NoisePredictor + ?Sized>(
    model: &P,
    loss: &dyn LossFunction,
    cfg: &GuidanceConfig,
    eta: f64,
    taus: &[usize],
    seed: u64,
) -> Result<GuidedSample> {
    let steps = model.schedule().steps();
    cfg.validate(steps)?;
    check_taus(taus, steps)?;
    if !eta.is_finite() || eta < 0.0 {
        return Err(Error::param(format!("eta must be non-negative, got {eta}")));
    }
    if eta == 0.0 && cfg.n > 1 {
        return Err(Error::param(
            "eta = 0 makes every candidate identical; use eta > 0 with n > 1",
        ));
    }
    let run = Run {
        model,
        loss: Some(loss),
        cfg,
        seed,
        transition: Transition::Ddim { eta },
        projection: None,
        shift: None,
        domain: Domain::Step,
        index_base: 0,
    };
    let top = *taus.last().unwrap();
    run.run(initial_noise(model, seed, top), &ddim_steps(taus))
}

/// Unguided stochastic DDIM.
pub fn sddim_sample<P: NoisePredictor + ?Sized>(model: &P, eta: f64, taus: &[usize], seed: u64) -> Result<Tensor> {
    let steps = model.schedule().steps();
    check_taus(taus, steps)?;
    if !eta.is_finite() || eta < 0.0 {
        return Err(Error::param(format!("eta must be non-negative, got {eta}")));
    }
    let cfg = unguided_config();
    let run = Run {
        model,
        loss: None,
        cfg: &cfg,
        seed,
        transition: Transition::Ddim { eta },
        projection: None,
        shift: None,
        domain: Domain::Step,
        index_base: 0,
    };
    Ok(run
        .run(initial_noise(model, seed, *taus.last().unwrap()), &ddim_steps(taus))?
        .0)
}

/// Guided DDPM whose guided steps first move the mean along the DPS
/// direction of `differentiable` (scaled by `cfg.gradient_scale`), then select
/// among candidates on the full `loss`.
pub fn hybrid_gradient_scg_sample<P: NoisePredictor + ?Sized>(
    model: &P,
    loss: &dyn LossFunction,
    differentiable: Option<&dyn LossFunction>,
    cfg: &GuidanceConfig,
    seed: u64,
) -> Result<GuidedSample> {
    let steps = model.schedule().steps();
    cfg.validate(steps)?;
    if let Some(d) = differentiable {
        if !d.differentiable() {
            return Err(Error::Capability(
                "hybrid gradient part must provide an analytic gradient".into(),
            ));
        }
    }
    let shift = match (differentiable, cfg.gradient_scale) {
        (Some(d), Some(s)) if s != 0.0 => Some((d, s)),
        _ => None,
    };
    let run = Run {
        model,
        loss: Some(loss),
        cfg,
        seed,
        transition: Transition::Ddpm,
        projection: None,
        shift,
        domain: Domain::Step,
        index_base: 0,
    };
    run.run(initial_noise(model, seed, steps), &ddpm_steps(steps))
}

/// Replacement-based editing.
///
/// The source is diffused to step `noise_level` and regenerated; at every
/// step the clean estimate is overwritten by the source wherever `mask` is 1,
/// and the final sample is projected the same way so the preserved region is
/// returned bit-exactly. With a loss, guided steps use candidate selection.
pub fn edit_sample<P: NoisePredictor + ?Sized>(
    model: &P,
    source: &Tensor,
    mask: &Tensor,
    noise_level: usize,
    loss: Option<&dyn LossFunction>,
    cfg: &GuidanceConfig,
    seed: u64,
) -> Result<Tensor> {
    let sched = model.schedule();
    source.ensure_shape(model.sample_shape())?;
    mask.ensure_same_shape(source)?;
    if mask.data().iter().any(|&m| m != 0.0 && m != 1.0) {
        return Err(Error::param("edit mask must contain only 0 and 1"));
    }
    if noise_level > sched.steps() {
        return Err(Error::param(format!(
            "noise level {noise_level} exceeds T = {}",
            sched.steps()
        )));
    }
    cfg.validate(sched.steps())?;
    if noise_level == 0 {
        return Ok(source.clone());
    }
    let z = normal_tensor(source.shape(), seed, Domain::EditInit, noise_level as u64, 0);
    let x_k = forward_diffuse(source, noise_level, &z, sched)?;
    let run = Run {
        model,
        loss,
        cfg,
        seed,
        transition: Transition::Ddpm,
        projection: Some(Projection { source, mask }),
        shift: None,
        domain: Domain::Step,
        index_base: 0,
    };
    Ok(run.run(x_k, &ddpm_steps(noise_level))?.0)
}

/// One unguided DDPM rollout from `(x, t)` down to clean data, on the
/// rollout substream `index`.
pub(crate) fn rollout<P: NoisePredictor + ?Sized>(
    model: &P,
    x: Tensor,
    t: usize,
    seed: u64,
    index: u64,
) -> Result<Tensor> {
    let cfg = unguided_config();
    let run = Run {
        model,
        loss: None,
        cfg: &cfg,
        seed,
        transition: Transition::Ddpm,
        projection: None,
        shift: None,
        domain: Domain::Rollout,
        index_base: index,
    };
    Ok(run.run(x, &ddpm_steps(t))?.0)
}
