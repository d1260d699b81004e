//! Noise-prediction backends.
//!
//! [`ScoreProvider`] dispatches between the exact Gaussian-mixture backend and
//! a learned denoiser. Samplers are written against the [`NoisePredictor`]
//! trait so tests can plug in their own models.

pub mod denoiser;
pub mod gmm;

pub use denoiser::{train_denoiser, DenoiserConfig, LearnedDenoiser, TrainingMeta};
pub use gmm::{gmm_eps, gmm_marginal, GmmSpec};

use std::path::Path;

use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;
use crate::tensor::Tensor;

/// A noise predictor bound to its schedule.
///
/// Implementations must be re-entrant: candidate evaluation may call `eps`
/// from several threads at once.
pub trait NoisePredictor: Sync {
    fn sample_shape(&self) -> &[usize];

    fn schedule(&self) -> &NoiseSchedule;

    /// `eps_hat(x, t)`.
    fn eps(&self, x: &Tensor, t: usize) -> Result<Tensor>;

    /// Vector-Jacobian product `(d eps_hat / d x)^T v`, when the backend can
    /// differentiate itself. `None` means callers fall back to treating
    /// `eps_hat` as constant in `x`.
    fn eps_vjp(&self, _x: &Tensor, _t: usize, _v: &Tensor) -> Result<Option<Tensor>> {
        Ok(None)
    }

    /// `grad log p_t(x) = -eps_hat / sqrt(1 - abar_t)`.
    fn score(&self, x: &Tensor, t: usize) -> Result<Tensor> {
        let eps = self.eps(x, t)?;
        let ab = self.schedule().alpha_bar(t);
        Ok(eps.scale(-1.0 / (1.0 - ab).sqrt()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    AnalyticGmm,
    LearnedDenoiser,
}

#[derive(Debug, Clone)]
enum Backend {
    Gmm(GmmSpec),
    Learned(LearnedDenoiser),
}

#[derive(Debug, Clone)]
pub struct ScoreProvider {
    backend: Backend,
    schedule: NoiseSchedule,
    shape: Vec<usize>,
}

impl ScoreProvider {
    pub fn gmm(gmm: GmmSpec, schedule: NoiseSchedule) -> Result<Self> {
        gmm.validate()?;
        Ok(Self {
            shape: vec![gmm.dim()],
            backend: Backend::Gmm(gmm),
            schedule,
        })
    }

    /// Learned backend on the schedule it was trained with.
    pub fn learned(model: LearnedDenoiser) -> Result<Self> {
        let schedule = model.schedule_spec().build()?;
        Ok(Self {
            shape: model.sample_shape().to_vec(),
            backend: Backend::Learned(model),
            schedule,
        })
    }

    /// Loads a gmm JSON document or a denoiser file, chosen by extension
    /// (`.json` is a mixture, anything else a denoiser).
    pub fn from_path(path: impl AsRef<Path>, schedule: NoiseSchedule) -> Result<Self> {
        let path = path.as_ref();
        if path.extension().is_some_and(|e| e == "json") {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let gmm: GmmSpec = serde_json::from_str(&text)?;
            Self::gmm(gmm, schedule)
        } else {
            Self::learned(LearnedDenoiser::load(path)?)
        }
    }

    pub fn kind(&self) -> BackendKind {
        match self.backend {
            Backend::Gmm(_) => BackendKind::AnalyticGmm,
            Backend::Learned(_) => BackendKind::LearnedDenoiser,
        }
    }

    pub fn dim(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn as_gmm(&self) -> Option<&GmmSpec> {
        match &self.backend {
            Backend::Gmm(g) => Some(g),
            Backend::Learned(_) => None,
        }
    }
}

impl NoisePredictor for ScoreProvider {
    fn sample_shape(&self) -> &[usize] {
        &self.shape
    }

    fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    fn eps(&self, x: &Tensor, t: usize) -> Result<Tensor> {
        match &self.backend {
            Backend::Gmm(g) => gmm_eps(g, x, t, &self.schedule),
            Backend::Learned(m) => m.eps(x, t, &self.schedule),
        }
    }

    fn eps_vjp(&self, x: &Tensor, t: usize, v: &Tensor) -> Result<Option<Tensor>> {
        match &self.backend {
            Backend::Gmm(g) => {
                self.schedule.check_step(t)?;
                x.ensure_shape(&self.shape)?;
                v.ensure_shape(&self.shape)?;
                let ab = self.schedule.alpha_bar(t);
                // eps = -sqrt(1 - abar) score, and the score Hessian is symmetric.
                let hv = g.marginal_at(ab).hessian_vec(x.data(), v.data())?;
                let c = -(1.0 - ab).sqrt();
                Ok(Some(Tensor::vector(hv.into_iter().map(|h| c * h).collect())))
            }
            Backend::Learned(_) => Ok(None),
        }
    }
}

/// Dispatching noise prediction.
pub fn provider_eps(provider: &ScoreProvider, x: &Tensor, t: usize) -> Result<Tensor> {
    provider.eps(x, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::{ScheduleSpec, SigmaKind};

    #[test]
    fn analytic_passthrough() {
        let s = ScheduleSpec::default().build().unwrap();
        let g = GmmSpec::new(vec![0.5, 0.5], vec![vec![-2.0], vec![2.0]], vec![vec![1.0], vec![1.0]]).unwrap();
        let p = ScoreProvider::gmm(g.clone(), s.clone()).unwrap();
        let x = Tensor::scalar(0.7);
        assert_eq!(provider_eps(&p, &x, 321).unwrap(), gmm_eps(&g, &x, 321, &s).unwrap());
        assert_eq!(p.kind(), BackendKind::AnalyticGmm);
    }

    #[test]
    fn shape_mismatch() {
        let s = ScheduleSpec::default().build().unwrap();
        let p = ScoreProvider::gmm(GmmSpec::standard_normal(2), s).unwrap();
        assert!(matches!(p.eps(&Tensor::zeros(&[3]), 10), Err(Error::Shape { .. })));
    }

    #[test]
    fn eps_score_consistency() {
        let s = ScheduleSpec::default().build().unwrap();
        let g = GmmSpec::new(
            vec![0.3, 0.7],
            vec![vec![-1.0, 1.0], vec![2.0, 0.0]],
            vec![vec![0.5, 2.0], vec![1.0, 0.3]],
        )
        .unwrap();
        let p = ScoreProvider::gmm(g.clone(), s.clone()).unwrap();
        for t in [1, 50, 700] {
            let x = Tensor::vector(vec![0.4, -0.3]);
            let score = p.score(&x, t).unwrap();
            let direct = g.marginal_at(s.alpha_bar(t)).score(x.data()).unwrap();
            for (a, b) in score.data().iter().zip(&direct) {
                assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()));
            }
        }
    }

    #[test]
    fn learned_backend_shape_contract() {
        let spec = ScheduleSpec {
            steps: 50,
            beta_start: 1e-3,
            beta_end: 0.2,
            sigma: SigmaKind::Posterior,
        };
        let data: Vec<Tensor> = (0..8)
            .map(|i| Tensor::vector(vec![i as f64 / 8.0, 0.5, -0.5]))
            .collect();
        let cfg = DenoiserConfig {
            hidden: vec![8],
            train_steps: 10,
            batch_size: 4,
            ..Default::default()
        };
        let m = train_denoiser(&data, spec, &cfg, 1).unwrap();
        let p = ScoreProvider::learned(m).unwrap();
        assert_eq!(p.kind(), BackendKind::LearnedDenoiser);
        let out = provider_eps(&p, &Tensor::vector(vec![0.1, 0.2, 0.3]), 25).unwrap();
        assert_eq!(out.shape(), &[3]);
        assert!(out.is_finite());
        assert!(matches!(p.eps(&Tensor::zeros(&[2]), 25), Err(Error::Shape { .. })));
        assert!(p
            .eps_vjp(&Tensor::zeros(&[3]), 25, &Tensor::zeros(&[3]))
            .unwrap()
            .is_none());
    }
}
