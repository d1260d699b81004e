//! Diagonal-covariance Gaussian mixtures with closed-form diffused marginals.
//!
//! Under the VP forward process each component `N(mu, v)` diffuses to
//! `N(sqrt(abar) mu, abar v + 1 - abar)`, so the exact score of `p_t` is
//! available at every step.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;
use crate::tensor::Tensor;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmSpec {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
}

impl GmmSpec {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<Vec<f64>>) -> Result<Self> {
        let g = Self {
            weights,
            means,
            variances,
        };
        g.validate()?;
        Ok(g)
    }

    /// Single isotropic-per-dimension Gaussian.
    pub fn gaussian(mean: Vec<f64>, variance: Vec<f64>) -> Result<Self> {
        Self::new(vec![1.0], vec![mean], vec![variance])
    }

    pub fn standard_normal(dim: usize) -> Self {
        Self::gaussian(vec![0.0; dim], vec![1.0; dim]).expect("valid by construction")
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.weights.len();
        if k == 0 {
            return Err(Error::param("mixture has no components"));
        }
        if self.means.len() != k || self.variances.len() != k {
            return Err(Error::param(format!(
                "{k} weights but {} means and {} variance vectors",
                self.means.len(),
                self.variances.len()
            )));
        }
        let d = self.means[0].len();
        if d == 0 {
            return Err(Error::param("mixture dimension is zero"));
        }
        if self.means.iter().chain(&self.variances).any(|v| v.len() != d) {
            return Err(Error::param("component dimensions disagree"));
        }
        if self.weights.iter().any(|w| w.is_nan() || *w < 0.0 || !w.is_finite()) {
            return Err(Error::param("mixture weights must be non-negative"));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::param(format!("mixture weights sum to {total}, not 1")));
        }
        if self
            .variances
            .iter()
            .flatten()
            .any(|v| v.is_nan() || *v <= 0.0 || !v.is_finite())
        {
            return Err(Error::param("component variances must be positive"));
        }
        if self.means.iter().flatten().any(|m| !m.is_finite()) {
            return Err(Error::param("component means must be finite"));
        }
        Ok(())
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    /// Overall mixture mean and per-dimension variance.
    pub fn moments(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.dim();
        let mut mean = vec![0.0; d];
        for (w, mu) in self.weights.iter().zip(&self.means) {
            for (m, x) in mean.iter_mut().zip(mu) {
                *m += w * x;
            }
        }
        let mut var = vec![0.0; d];
        for ((w, mu), v) in self.weights.iter().zip(&self.means).zip(&self.variances) {
            for j in 0..d {
                var[j] += w * (v[j] + (mu[j] - mean[j]).powi(2));
            }
        }
        (mean, var)
    }

    /// Log density at `x`.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let terms: Vec<f64> = (0..self.components())
            .map(|k| self.weights[k].ln() + self.component_log_density(k, x))
            .collect();
        log_sum_exp(&terms)
    }

    fn component_log_density(&self, k: usize, x: &[f64]) -> f64 {
        self.means[k]
            .iter()
            .zip(&self.variances[k])
            .zip(x)
            .map(|((m, v), xi)| -0.5 * (LN_2PI + v.ln() + (xi - m).powi(2) / v))
            .sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = self.components() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = i;
                break;
            }
        }
        self.means[k]
            .iter()
            .zip(&self.variances[k])
            .map(|(m, v)| {
                let z: f64 = rng.sample(StandardNormal);
                m + v.sqrt() * z
            })
            .collect()
    }

    /// Responsibilities and per-component scores at `x`.
    fn posterior_terms(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let logs: Vec<f64> = (0..self.components())
            .map(|k| self.weights[k].ln() + self.component_log_density(k, x))
            .collect();
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::Numeric("all mixture responsibilities underflowed".into()));
        }
        let mut resp: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = resp.iter().sum();
        resp.iter_mut().for_each(|r| *r /= total);
        let scores = (0..self.components())
            .map(|k| {
                self.means[k]
                    .iter()
                    .zip(&self.variances[k])
                    .zip(x)
                    .map(|((m, v), xi)| -(xi - m) / v)
                    .collect()
            })
            .collect();
        Ok((resp, scores))
    }

    /// `grad_x log p(x)`.
    pub fn score(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let (resp, scores) = self.posterior_terms(x)?;
        Ok(mix(&resp, &scores))
    }

    /// Hessian-vector product `(grad^2 log p)(x) v`.
    pub fn hessian_vec(&self, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        self.check_dim(v)?;
        let (resp, scores) = self.posterior_terms(x)?;
        let total = mix(&resp, &scores);
        let total_dot: f64 = total.iter().zip(v).map(|(a, b)| a * b).sum();
        let mut out: Vec<f64> = total.iter().map(|s| -s * total_dot).collect();
        for k in 0..self.components() {
            let sk_dot: f64 = scores[k].iter().zip(v).map(|(a, b)| a * b).sum();
            for j in 0..v.len() {
                out[j] += resp[k] * (scores[k][j] * sk_dot - v[j] / self.variances[k][j]);
            }
        }
        Ok(out)
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Shape {
                expected: vec![self.dim()],
                got: vec![x.len()],
            });
        }
        Ok(())
    }

    /// Mixture at diffusion step `t` (`t = 0` returns a copy).
    pub fn marginal_at(&self, alpha_bar: f64) -> GmmSpec {
        let s = alpha_bar.sqrt();
        GmmSpec {
            weights: self.weights.clone(),
            means: self.means.iter().map(|m| m.iter().map(|x| s * x).collect()).collect(),
            variances: self
                .variances
                .iter()
                .map(|v| v.iter().map(|x| alpha_bar * x + (1.0 - alpha_bar)).collect())
                .collect(),
        }
    }
}

fn mix(resp: &[f64], scores: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; scores[0].len()];
    for (r, s) in resp.iter().zip(scores) {
        for (o, v) in out.iter_mut().zip(s) {
            *o += r * v;
        }
    }
    out
}

pub(crate) fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Diffused mixture `p_t`.
pub fn gmm_marginal(gmm: &GmmSpec, t: usize, sched: &NoiseSchedule) -> Result<GmmSpec> {
    gmm.validate()?;
    if t > sched.steps() {
        return Err(Error::param(format!("step {t} outside 0..={}", sched.steps())));
    }
    Ok(gmm.marginal_at(sched.alpha_bar(t)))
}

/// Exact noise prediction `-sqrt(1 - abar_t) grad log p_t(x)`.
pub fn gmm_eps(gmm: &GmmSpec, x: &Tensor, t: usize, sched: &NoiseSchedule) -> Result<Tensor> {
    sched.check_step(t)?;
    x.ensure_shape(&[gmm.dim()])?;
    let ab = sched.alpha_bar(t);
    let score = gmm.marginal_at(ab).score(x.data())?;
    let c = -(1.0 - ab).sqrt();
    Ok(Tensor::vector(score.into_iter().map(|s| c * s).collect()))
}
