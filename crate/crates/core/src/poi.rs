//! Points of interest: per-sample SNR, plug-in mutual information and
//! greedy mRMR feature ranking.

use std::collections::HashMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::attack::Matrix;

#[derive(Debug, Error, PartialEq)]
pub enum PoiError {
    #[error("need at least 2 classes with at least 2 traces each ({0})")]
    InsufficientClassData(String),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
}

/// Equal-width bin count used when none is given.
pub const DEFAULT_BINS: usize = 16;

/// Per-sample signal-to-noise ratio: variance of the class means over
/// the mean of the class variances. A zero denominator yields `+inf`
/// (or 0 when the numerator is zero too).
pub fn snr(traces: &Matrix, labels: &[u32]) -> Result<Vec<f64>, PoiError> {
    if labels.len() != traces.rows() {
        return Err(PoiError::LengthMismatch(traces.rows(), labels.len()));
    }
    let mut class_of: HashMap<u32, usize> = HashMap::new();
    for &l in labels {
        let next = class_of.len();
        class_of.entry(l).or_insert(next);
    }
    let k = class_of.len();
    let cols = traces.cols();
    let mut count = vec![0usize; k];
    let mut sum = vec![0.0; k * cols];
    for (r, l) in labels.iter().enumerate() {
        let c = class_of[l];
        count[c] += 1;
        for (s, v) in sum[c * cols..(c + 1) * cols].iter_mut().zip(traces.row(r)) {
            *s += v;
        }
    }
    if k < 2 || count.iter().any(|&c| c < 2) {
        return Err(PoiError::InsufficientClassData(format!(
            "{k} classes, smallest has {}",
            count.iter().min().copied().unwrap_or(0)
        )));
    }
    for c in 0..k {
        sum[c * cols..(c + 1) * cols]
            .iter_mut()
            .for_each(|s| *s /= count[c] as f64);
    }
    let means = sum;
    let mut var = vec![0.0; k * cols];
    for (r, l) in labels.iter().enumerate() {
        let c = class_of[l];
        let m = &means[c * cols..(c + 1) * cols];
        for ((v, x), mu) in var[c * cols..(c + 1) * cols].iter_mut().zip(traces.row(r)).zip(m) {
            *v += (x - mu) * (x - mu);
        }
    }
    Ok((0..cols)
        .map(|t| {
            let grand = (0..k).map(|c| means[c * cols + t]).sum::<f64>() / k as f64;
            let signal = (0..k)
                .map(|c| (means[c * cols + t] - grand).powi(2))
                .sum::<f64>()
                / k as f64;
            let noise = (0..k)
                .map(|c| var[c * cols + t] / count[c] as f64)
                .sum::<f64>()
                / k as f64;
            if noise > 0.0 {
                signal / noise
            } else if signal > 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        })
        .collect())
}

/// Maps values to `bins` equal-width bins over their observed range.
/// A constant input lands entirely in bin 0.
pub fn discretize(values: &[f64], bins: usize) -> Vec<u32> {
    let bins = bins.max(1);
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let width = (hi - lo) / bins as f64;
    values
        .iter()
        .map(|&v| {
            if width > 0.0 {
                (((v - lo) / width) as usize).min(bins - 1) as u32
            } else {
                0
            }
        })
        .collect()
}

// Entropy in nats of a multiset of counts; summed in sorted order so the
// result does not depend on symbol order.
fn entropy_of_counts(mut counts: Vec<u64>) -> f64 {
    counts.sort_unstable();
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    let s: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| c as f64 * (c as f64).ln())
        .sum();
    n.ln() - s / n
}

fn histogram<T: std::hash::Hash + Eq + Copy>(x: impl Iterator<Item = T>) -> Vec<u64> {
    let mut h: HashMap<T, u64> = HashMap::new();
    for v in x {
        *h.entry(v).or_insert(0) += 1;
    }
    h.into_values().collect()
}

/// Empirical entropy of a discrete vector, in nats.
pub fn entropy(x: &[u32]) -> f64 {
    entropy_of_counts(histogram(x.iter().copied()))
}

/// Plug-in mutual information of two discrete vectors, in nats.
/// `bins` is the resolution the inputs were discretized with; at least
/// that many observations are required.
pub fn mutual_information(x: &[u32], y: &[u32], bins: usize) -> Result<f64, PoiError> {
    if x.len() != y.len() {
        return Err(PoiError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < bins.max(1) {
        return Err(PoiError::InvalidParam(format!(
            "{} observations for {bins} bins",
            x.len()
        )));
    }
    // Swapping x and y permutes joint cells only, and the counts are
    // summed in sorted order, so MI(x, y) == MI(y, x) bit for bit.
    let joint = entropy_of_counts(histogram(x.iter().zip(y)));
    Ok((entropy(x) + entropy(y) - joint).max(0.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankedFeature {
    pub sample: usize,
    /// MI with the labels.
    pub relevance: f64,
    /// Relevance minus mean MI with the previously selected features.
    pub score: f64,
}

/// Features in selection order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureRanking {
    pub features: Vec<RankedFeature>,
}

impl FeatureRanking {
    pub fn indices(&self) -> Vec<usize> {
        self.features.iter().map(|f| f.sample).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("rank,sample,relevance,score\n");
        for (r, f) in self.features.iter().enumerate() {
            out.push_str(&format!("{},{},{:.9},{:.9}\n", r + 1, f.sample, f.relevance, f.score));
        }
        out
    }
}

/// Greedy minimum-redundancy maximum-relevance selection of `k` columns
/// of `features` against `labels`, each column discretized into `bins`
/// equal-width bins. Ties go to the lower column index.
pub fn mrmr_select(features: &Matrix, labels: &[u32], k: usize, bins: usize) -> Result<FeatureRanking, PoiError> {
    let n = features.rows();
    let cols = features.cols();
    if labels.len() != n {
        return Err(PoiError::LengthMismatch(n, labels.len()));
    }
    if k > cols {
        return Err(PoiError::InvalidParam(format!("k = {k} exceeds {cols} features")));
    }
    if n < bins.max(1) {
        return Err(PoiError::InvalidParam(format!("{n} observations for {bins} bins")));
    }
    let columns: Vec<Vec<u32>> = (0..cols)
        .into_par_iter()
        .map(|c| {
            let v: Vec<f64> = (0..n).map(|r| features.row(r)[c]).collect();
            discretize(&v, bins)
        })
        .collect();
    let relevance: Vec<f64> = columns
        .par_iter()
        .map(|c| mutual_information(c, labels, bins))
        .collect::<Result<_, _>>()?;
    let mut redundancy = vec![0.0; cols];
    let mut taken = vec![false; cols];
    let mut out = FeatureRanking::default();
    for step in 0..k {
        let mut best: Option<(usize, f64)> = None;
        for c in (0..cols).filter(|&c| !taken[c]) {
            let s = if step == 0 {
                relevance[c]
            } else {
                relevance[c] - redundancy[c] / step as f64
            };
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((c, s));
            }
        }
        let Some((pick, score)) = best else { break };
        taken[pick] = true;
        out.features.push(RankedFeature {
            sample: pick,
            relevance: relevance[pick],
            score,
        });
        if step + 1 < k {
            let added: Vec<(usize, f64)> = (0..cols)
                .into_par_iter()
                .filter(|&c| !taken[c])
                .map(|c| Ok((c, mutual_information(&columns[c], &columns[pick], bins)?)))
                .collect::<Result<_, PoiError>>()?;
            for (c, mi) in added {
                redundancy[c] += mi;
            }
        }
    }
    Ok(out)
}
