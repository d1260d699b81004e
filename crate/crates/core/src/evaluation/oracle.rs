//! Exact and sampling oracles for the tilted posterior `p(x) exp(-l(x)) / Z`
//! on Gaussian-mixture data.

use rand::Rng;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::guidance::LossFunction;
use crate::rng::{substream, Domain};
use crate::score::GmmSpec;
use crate::tensor::Tensor;

/// Acceptance rates below this make rejection sampling impractical.
pub const MIN_ACCEPTANCE: f64 = 1e-4;
const BATCH: usize = 10_000;

#[derive(Debug, Clone, Serialize)]
pub struct OracleSamples {
    pub samples: Vec<Vec<f64>>,
    pub proposals: usize,
    pub acceptance_rate: f64,
    /// Self-normalized importance-sampling estimates over all proposals.
    pub is_mean: Vec<f64>,
    pub is_var: Vec<f64>,
}

/// Rejection sampling from `gmm` tilted by `exp(-l)`, for losses that are
/// non-negative (so every acceptance probability is at most 1).
pub fn rejection_oracle(
    gmm: &GmmSpec,
    loss: &dyn LossFunction,
    num_samples: usize,
    seed: u64,
) -> Result<OracleSamples> {
    rejection_oracle_with_floor(gmm, loss, 0.0, num_samples, seed)
}

/// As [`rejection_oracle`], accepting with `exp(-(l - floor))` where `floor`
/// is a known lower bound of the loss.
pub fn rejection_oracle_with_floor(
    gmm: &GmmSpec,
    loss: &dyn LossFunction,
    floor: f64,
    num_samples: usize,
    seed: u64,
) -> Result<OracleSamples> {
    gmm.validate()?;
    if num_samples == 0 {
        return Err(Error::param("need at least one sample"));
    }
    let d = gmm.dim();
    let mut samples = Vec::with_capacity(num_samples);
    let (mut wsum, mut wx, mut wxx) = (0.0, vec![0.0; d], vec![0.0; d]);
    let mut proposals = 0usize;
    let mut batch = 0u64;
    while samples.len() < num_samples {
        let mut rng = substream(seed, Domain::Oracle, 0, batch);
        batch += 1;
        for _ in 0..BATCH {
            let x = gmm.sample(&mut rng);
            let l = loss.loss(&Tensor::vector(x.clone()))?;
            if l < floor {
                return Err(Error::Numeric(format!("loss {l} below declared floor {floor}")));
            }
            let w = (-(l - floor)).exp();
            proposals += 1;
            wsum += w;
            for k in 0..d {
                wx[k] += w * x[k];
                wxx[k] += w * x[k] * x[k];
            }
            if samples.len() < num_samples && rng.random::<f64>() < w {
                samples.push(x);
            }
        }
        let rate = samples.len() as f64 / proposals as f64;
        if proposals >= 10 * BATCH && rate < MIN_ACCEPTANCE {
            return Err(Error::Efficiency { rate });
        }
    }
    if wsum == 0.0 {
        return Err(Error::Efficiency { rate: 0.0 });
    }
    let is_mean: Vec<f64> = wx.iter().map(|v| v / wsum).collect();
    let is_var = wxx.iter().zip(&is_mean).map(|(v, m)| v / wsum - m * m).collect();
    Ok(OracleSamples {
        acceptance_rate: samples.len() as f64 / proposals as f64,
        samples,
        proposals,
        is_mean,
        is_var,
    })
}

/// Posterior of `N(mean, var)` tilted by `exp(-weight/2 (x - center)^2)`.
pub fn tilted_gaussian(mean: f64, var: f64, center: f64, weight: f64) -> (f64, f64) {
    let post_var = 1.0 / (1.0 / var + weight);
    (post_var * (mean / var + weight * center), post_var)
}

/// Exact posterior mass above `threshold` of a 1-D mixture tilted by the
/// step loss (0 above the threshold, `penalty` at or below it).
pub fn step_posterior_mass(gmm: &GmmSpec, threshold: f64, penalty: f64) -> Result<f64> {
    gmm.validate()?;
    if gmm.dim() != 1 {
        return Err(Error::param("step posterior mass is defined for 1-D mixtures"));
    }
    let (mut above, mut below) = (0.0, 0.0);
    for k in 0..gmm.components() {
        let n = Normal::new(gmm.means[k][0], gmm.variances[k][0].sqrt()).map_err(|e| Error::param(e.to_string()))?;
        let p_below = n.cdf(threshold);
        above += gmm.weights[k] * (1.0 - p_below);
        below += gmm.weights[k] * p_below;
    }
    Ok(above / (above + below * (-penalty).exp()))
}

/// Exact bin masses of a 1-D mixture tilted by the step loss, over `bins`
/// equal bins on `[lo, hi]`; mass outside is folded into the end bins.
pub fn step_posterior_histogram(
    gmm: &GmmSpec,
    threshold: f64,
    penalty: f64,
    lo: f64,
    hi: f64,
    bins: usize,
) -> Result<Vec<f64>> {
    if gmm.dim() != 1 || bins == 0 || hi <= lo {
        return Err(Error::param("need a 1-D mixture and a non-empty range"));
    }
    let comps: Vec<Normal> = (0..gmm.components())
        .map(|k| Normal::new(gmm.means[k][0], gmm.variances[k][0].sqrt()).map_err(|e| Error::param(e.to_string())))
        .collect::<Result<_>>()?;
    // Unnormalized tilted CDF.
    let tilt = (-penalty).exp();
    let cdf = |x: f64| -> f64 {
        comps
            .iter()
            .zip(&gmm.weights)
            .map(|(n, w)| {
                let c = n.cdf(x.min(threshold)) * tilt;
                let above = if x > threshold {
                    n.cdf(x) - n.cdf(threshold)
                } else {
                    0.0
                };
                w * (c + above)
            })
            .sum()
    };
    let total = cdf(f64::INFINITY);
    let width = (hi - lo) / bins as f64;
    let mut out = Vec::with_capacity(bins);
    for b in 0..bins {
        let left = if b == 0 {
            f64::NEG_INFINITY
        } else {
            lo + b as f64 * width
        };
        let right = if b == bins - 1 {
            f64::INFINITY
        } else {
            lo + (b + 1) as f64 * width
        };
        out.push((cdf(right) - cdf(left)) / total);
    }
    Ok(out)
}

/// Normalized histogram of 1-D samples on `bins` equal bins over `[lo, hi]`,
/// with outliers folded into the end bins.
pub fn histogram(samples: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let mut h = vec![0.0; bins];
    for &s in samples {
        let b = ((s - lo) / (hi - lo) * bins as f64).floor();
        let b = if b < 0.0 { 0 } else { (b as usize).min(bins - 1) };
        h[b] += 1.0;
    }
    let n = samples.len().max(1) as f64;
    h.iter_mut().for_each(|v| *v /= n);
    h
}

/// Total-variation distance between two discrete distributions.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}
