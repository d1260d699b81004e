//! Overlapping area between intra-set and inter-set distance distributions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::attributes::{Attribute, AttributeSet};
use crate::error::{Error, Result};

pub const OA_BINS: usize = 50;

/// Overlap of the normalized histograms of `x` and `y` over their shared
/// range, `sum_b min(cx_b / |x|, cy_b / |y|)`. Identical constant samples
/// overlap fully.
pub fn histogram_overlap(x: &[f64], y: &[f64], bins: usize) -> Result<f64> {
    if x.is_empty() || y.is_empty() || bins == 0 {
        return Err(Error::param(
            "histogram overlap needs two non-empty samples and bins > 0",
        ));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite value in overlap input".into()));
    }
    let lo = x.iter().chain(y).cloned().fold(f64::INFINITY, f64::min);
    let hi = x.iter().chain(y).cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi == lo {
        return Ok(1.0);
    }
    let hist = |v: &[f64]| {
        let mut h = vec![0usize; bins];
        for &s in v {
            let b = (((s - lo) * bins as f64) / (hi - lo)).floor() as usize;
            h[b.min(bins - 1)] += 1;
        }
        h
    };
    let (hx, hy) = (hist(x), hist(y));
    let (nx, ny) = (x.len() as f64, y.len() as f64);
    Ok(hx
        .iter()
        .zip(&hy)
        .map(|(&a, &b)| (a as f64 / nx).min(b as f64 / ny))
        .sum())
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OaEntry {
    pub oa: f64,
}

/// Serializes as `{attribute: {oa: ..}, ..., average: ..}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OaReport {
    #[serde(flatten)]
    pub attributes: BTreeMap<String, OaEntry>,
    pub average: f64,
}

/// Intra-A pairwise distances (i < j) against all A-B distances, per
/// attribute, and their average.
pub fn overlapping_area(a: &[AttributeSet], b: &[AttributeSet]) -> Result<OaReport> {
    if a.len() != b.len() {
        return Err(Error::param(format!("set sizes differ: {} vs {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::param("overlapping area needs at least two samples per set"));
    }
    let mut attributes = BTreeMap::new();
    let mut total = 0.0;
    for attr in Attribute::ALL {
        let mut intra = Vec::with_capacity(a.len() * (a.len() - 1) / 2);
        for i in 0..a.len() {
            for j in i + 1..a.len() {
                intra.push(distance(a[i].get(attr), a[j].get(attr)));
            }
        }
        let mut inter = Vec::with_capacity(a.len() * b.len());
        for x in a {
            for y in b {
                inter.push(distance(x.get(attr), y.get(attr)));
            }
        }
        let oa = histogram_overlap(&intra, &inter, OA_BINS)?;
        total += oa;
        attributes.insert(attr.name().to_string(), OaEntry { oa });
    }
    Ok(OaReport {
        attributes,
        average: total / Attribute::ALL.len() as f64,
    })
}

/// Quartile bin (0..4) of each value by rank; equal values share the bin
/// of their lowest rank.
pub fn quartile_clusters(values: &[f64]) -> Vec<usize> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = values.len();
    values
        .iter()
        .map(|v| {
            let rank = sorted.partition_point(|s| s < v);
            (4 * rank / n).min(3)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_built_half_overlap() {
        let oa = histogram_overlap(&[0.0, 1.0, 2.0, 3.0], &[2.0, 3.0, 4.0, 5.0], 50).unwrap();
        assert_eq!(oa, 0.5);
    }

    #[test]
    fn identical_and_disjoint() {
        let x = [0.1, 0.5, 0.9];
        assert!((histogram_overlap(&x, &x, 50).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(histogram_overlap(&x, &[5.0, 6.0], 50).unwrap(), 0.0);
        assert_eq!(histogram_overlap(&[2.0], &[2.0], 50).unwrap(), 1.0);
        assert!(histogram_overlap(&[], &[1.0], 50).is_err());
    }

    #[test]
    fn quartiles() {
        let v: Vec<f64> = (0..8).map(f64::from).collect();
        assert_eq!(quartile_clusters(&v), vec![0, 0, 1, 1, 2, 2, 3, 3]);
    }

    #[test]
    fn size_mismatch() {
        let r = crate::evaluation::seven_attributes(&crate::music::PianoRoll::empty(8));
        let one = std::slice::from_ref(&r);
        assert!(overlapping_area(&[r.clone(), r.clone()], one).is_err());
        assert!(overlapping_area(one, &[r.clone(), r.clone()]).is_err());
    }
}
