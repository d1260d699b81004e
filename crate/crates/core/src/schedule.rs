//! Discrete variance-preserving noise schedules and the closed-form DDPM
//! operations built on them.
//!
//! Steps are indexed `t = 1..=T`; `t = 0` denotes clean data with
//! `alpha_bar(0) = 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-step sampling noise convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaKind {
    /// `sigma_t^2 = (1 - abar_{t-1}) / (1 - abar_t) * beta_t`, the DDPM posterior variance.
    #[default]
    Posterior,
    /// `sigma_t^2 = beta_t`.
    Beta,
}

/// Linear schedule parameters as they appear in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    #[serde(default)]
    pub sigma: SigmaKind,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self {
            steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            sigma: SigmaKind::Posterior,
        }
    }
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear_with(self.steps, self.beta_start, self.beta_end, self.sigma)
    }
}

/// Immutable forward-process coefficients for `T` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    sigmas: Vec<f64>,
    sigma_kind: SigmaKind,
}

impl NoiseSchedule {
    /// Linear `beta` from `beta_start` at `t = 1` to `beta_end` at `t = T`,
    /// with posterior-variance sigmas.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        Self::linear_with(steps, beta_start, beta_end, SigmaKind::Posterior)
    }

    pub fn linear_with(steps: usize, beta_start: f64, beta_end: f64, sigma: SigmaKind) -> Result<Self> {
        if steps == 0 {
            return Err(Error::param("schedule needs at least one step"));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::param(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
            )));
        }
        let betas = if steps == 1 {
            vec![beta_start]
        } else {
            let span = beta_end - beta_start;
            (0..steps)
                .map(|i| beta_start + span * i as f64 / (steps - 1) as f64)
                .collect()
        };
        Self::from_betas_with(betas, sigma)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        Self::from_betas_with(betas, SigmaKind::Posterior)
    }

    pub fn from_betas_with(betas: Vec<f64>, sigma_kind: SigmaKind) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::param("schedule needs at least one step"));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::param(format!("beta {b} outside (0, 1)")));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(alphas.len());
        let mut acc = 1.0;
        for &a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        if acc <= 0.0 {
            return Err(Error::Numeric("cumulative alpha underflowed to zero".into()));
        }
        let sigmas = betas
            .iter()
            .enumerate()
            .map(|(i, &beta)| match sigma_kind {
                SigmaKind::Beta => beta.sqrt(),
                SigmaKind::Posterior => {
                    let prev = if i == 0 { 1.0 } else { alpha_bars[i - 1] };
                    ((1.0 - prev) / (1.0 - alpha_bars[i]) * beta).sqrt()
                }
            })
            .collect();
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
            sigmas,
            sigma_kind,
        })
    }

    /// Number of steps `T`.
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn sigma_kind(&self) -> SigmaKind {
        self.sigma_kind
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[self.index(t)]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[self.index(t)]
    }

    /// `abar_t`, with `abar_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[self.index(t)]
        }
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigmas[self.index(t)]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::param(format!("step {t} outside 1..={}", self.steps())));
        }
        Ok(())
    }

    fn index(&self, t: usize) -> usize {
        assert!((1..=self.steps()).contains(&t), "step {t} outside 1..={}", self.steps());
        t - 1
    }
}

/// `sqrt(abar_t) x0 + sqrt(1 - abar_t) eps`.
pub fn forward_diffuse(x0: &Tensor, t: usize, eps: &Tensor, sched: &NoiseSchedule) -> Result<Tensor> {
    sched.check_step(t)?;
    let ab = sched.alpha_bar(t);
    x0.lincomb(ab.sqrt(), eps, (1.0 - ab).sqrt())
}

/// Tweedie estimate of the clean sample, `(x_t - sqrt(1 - abar_t) eps) / sqrt(abar_t)`.
pub fn tweedie_x0(x_t: &Tensor, t: usize, eps_hat: &Tensor, sched: &NoiseSchedule) -> Result<Tensor> {
    if t == 0 {
        x_t.ensure_same_shape(eps_hat)?;
        return Ok(x_t.clone());
    }
    sched.check_step(t)?;
    tweedie_with(x_t, sched.alpha_bar(t), eps_hat)
}

pub(crate) fn tweedie_with(x_t: &Tensor, alpha_bar: f64, eps_hat: &Tensor) -> Result<Tensor> {
    if alpha_bar <= 0.0 {
        return Err(Error::Numeric(format!("alpha_bar {alpha_bar} is not positive")));
    }
    let inv = 1.0 / alpha_bar.sqrt();
    x_t.lincomb(inv, eps_hat, -(1.0 - alpha_bar).sqrt() * inv)
}

/// DDPM reverse mean `(x_t - (1 - alpha_t) / sqrt(1 - abar_t) eps) / sqrt(alpha_t)`.
pub fn ddpm_posterior_mean(x_t: &Tensor, t: usize, eps_hat: &Tensor, sched: &NoiseSchedule) -> Result<Tensor> {
    sched.check_step(t)?;
    let alpha = sched.alpha(t);
    let ab = sched.alpha_bar(t);
    if ab >= 1.0 {
        return Err(Error::Numeric(format!(
            "alpha_bar at step {t} is 1; epsilon coefficient undefined"
        )));
    }
    let inv = 1.0 / alpha.sqrt();
    x_t.lincomb(inv, eps_hat, -inv * (1.0 - alpha) / (1.0 - ab).sqrt())
}
