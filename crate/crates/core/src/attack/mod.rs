//! Key-recovery attacks: first-order DPA (difference of means) and CPA,
//! and the second-order absolute-difference attack with dual-channel
//! fusion.

mod second_order;
pub mod walsh;

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aes::{hw, sbox};
use crate::dataset::{ChannelModels, Split};
use crate::leakage::Channel;

pub use second_order::{
    pair_hypothesis, second_order_attack, select_alpha, PairFeatures, PairModel, PairScorer,
    SecondOrderConfig, Summary,
};

#[derive(Debug, Error, PartialEq)]
pub enum AttackError {
    #[error("need at least {need} traces, got {got}")]
    TooFewTraces { need: usize, got: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("windows overlap")]
    WindowOverlap,
    #[error("no round-1 S-box window for byte {0} in the time map")]
    MissingWindow(u8),
    #[error("profiling record {0} carries no key")]
    MissingKey(usize),
    #[error("combination coefficient {0} outside [0, 1]")]
    InvalidAlpha(f64),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
}

/// Dense row-major matrix of trace samples (one row per trace).
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix shape");
        Matrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, AttackError> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(AttackError::LengthMismatch(cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix::new(rows.len(), cols, data))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Rows picked by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix::new(idx.len(), self.cols, data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix::new(self.rows, self.cols, self.data.iter().map(|&v| f(v)).collect())
    }

    /// `alpha * self + (1 - alpha) * other`, elementwise.
    pub fn fuse(&self, other: &Matrix, alpha: f64) -> Result<Matrix, AttackError> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(AttackError::LengthMismatch(self.data.len(), other.data.len()));
        }
        let data = fuse(&self.data, &other.data, alpha)?;
        Ok(Matrix::new(self.rows, self.cols, data))
    }

    fn centered_columns(&self) -> Matrix {
        let mut mean = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (m, v) in mean.iter_mut().zip(self.row(r)) {
                *m += v;
            }
        }
        let n = self.rows.max(1) as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        let mut out = self.clone();
        for r in 0..self.rows {
            let row = &mut out.data[r * self.cols..(r + 1) * self.cols];
            for (v, m) in row.iter_mut().zip(&mean) {
                *v -= m;
            }
        }
        out
    }
}

/// Extracts samples `range` of one channel, converted to volts.
pub fn channel_volts(split: &Split, channel: Channel, models: &ChannelModels, range: Range<usize>) -> Matrix {
    let (traces, model) = match channel {
        Channel::Power => (&split.power, &models.power),
        Channel::Em => (&split.em, &models.em),
    };
    let cols = range.len();
    let mut data = Vec::with_capacity(split.len() * cols);
    for i in 0..traces.rows() {
        data.extend(traces.row(i)[range.clone()].iter().map(|&c| model.to_volts(c)));
    }
    Matrix::new(traces.rows(), cols, data)
}

/// Which channel(s) an attack reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Power,
    Em,
    Combined,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Power, Mode::Em, Mode::Combined];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Power => "Power",
            Mode::Em => "EM",
            Mode::Combined => "Combined",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "power" => Ok(Mode::Power),
            "em" => Ok(Mode::Em),
            "combined" => Ok(Mode::Combined),
            _ => Err(format!("unknown mode {s:?} (power, em, combined)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Order {
    First,
    Second,
}

/// Per-candidate statistics with a deterministic ranking.
///
/// Scores are absolute statistics; `ranking` sorts candidates by
/// descending score with ties going to the lower candidate index.
/// `flagged` lists candidates whose statistic was undefined (scored 0).
#[derive(Clone, Debug, PartialEq)]
pub struct HypothesisScore {
    pub order: Order,
    pub scores: Vec<f64>,
    pub best: usize,
    pub ranking: Vec<u32>,
    pub flagged: Vec<u32>,
}

impl HypothesisScore {
    pub fn new(order: Order, scores: Vec<f64>, flagged: Vec<u32>) -> Self {
        let mut ranking: Vec<u32> = (0..scores.len() as u32).collect();
        ranking.sort_by(|&a, &b| {
            scores[b as usize]
                .total_cmp(&scores[a as usize])
                .then(a.cmp(&b))
        });
        let best = ranking.first().map_or(0, |&b| b as usize);
        HypothesisScore {
            order,
            scores,
            best,
            ranking,
            flagged,
        }
    }

    /// 1-based rank of `candidate`.
    pub fn rank_of(&self, candidate: usize) -> usize {
        self.ranking
            .iter()
            .position(|&c| c as usize == candidate)
            .map_or(usize::MAX, |p| p + 1)
    }

    pub fn to_csv(&self) -> String {
        let mut rank = vec![0usize; self.scores.len()];
        for (r, &c) in self.ranking.iter().enumerate() {
            rank[c as usize] = r + 1;
        }
        let mut out = String::from("candidate,score,rank\n");
        for (c, s) in self.scores.iter().enumerate() {
            out.push_str(&format!("{c},{s:.9},{}\n", rank[c]));
        }
        out
    }
}

/// Index of the largest score, ties to the lower index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    best
}

/// Pearson correlation; 0 when either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    if x.len() != y.len() || x.is_empty() {
        return 0.0;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

// Per-plaintext-byte column sums of centered traces.
struct ClassSums {
    counts: [usize; 256],
    sums: Vec<f64>,
    sq: Vec<f64>,
    cols: usize,
    n: usize,
}

impl ClassSums {
    fn build(traces: &Matrix, plaintexts: &[[u8; 16]], byte: usize) -> Self {
        let c = traces.centered_columns();
        let cols = c.cols;
        let mut counts = [0usize; 256];
        let mut sums = vec![0.0; 256 * cols];
        let mut sq = vec![0.0; cols];
        for (r, pt) in plaintexts.iter().enumerate() {
            let a = pt[byte] as usize;
            counts[a] += 1;
            let dst = &mut sums[a * cols..(a + 1) * cols];
            for ((d, v), q) in dst.iter_mut().zip(c.row(r)).zip(sq.iter_mut()) {
                *d += v;
                *q += v * v;
            }
        }
        ClassSums {
            counts,
            sums,
            sq,
            cols,
            n: plaintexts.len(),
        }
    }

    fn class(&self, a: usize) -> &[f64] {
        &self.sums[a * self.cols..(a + 1) * self.cols]
    }

    fn column_totals(&self) -> Vec<f64> {
        let mut t = vec![0.0; self.cols];
        for a in 0..256 {
            for (x, v) in t.iter_mut().zip(self.class(a)) {
                *x += v;
            }
        }
        t
    }
}

fn check_inputs(traces: &Matrix, plaintexts: &[[u8; 16]], byte: usize, need: usize) -> Result<(), AttackError> {
    if traces.rows() != plaintexts.len() {
        return Err(AttackError::LengthMismatch(traces.rows(), plaintexts.len()));
    }
    if traces.rows() < need {
        return Err(AttackError::TooFewTraces {
            need,
            got: traces.rows(),
        });
    }
    if byte > 15 {
        return Err(AttackError::InvalidParam(format!("byte index {byte}")));
    }
    Ok(())
}

/// Difference-of-means DPA on one S-box output bit.
///
/// For each guess `k`, traces are split by bit `bit` of
/// `sbox(pt[byte] ^ k)`; the score is the largest absolute difference of
/// group means over samples. Guesses leaving a group empty score 0 and are
/// flagged.
pub fn dpa_dom(
    traces: &Matrix,
    plaintexts: &[[u8; 16]],
    byte: usize,
    bit: u8,
) -> Result<HypothesisScore, AttackError> {
    check_inputs(traces, plaintexts, byte, 2)?;
    if bit > 7 {
        return Err(AttackError::InvalidParam(format!("target bit {bit}")));
    }
    let cs = ClassSums::build(traces, plaintexts, byte);
    let total = cs.column_totals();
    let mut scores = vec![0.0; 256];
    let mut flagged = Vec::new();
    let mut ones = vec![0.0; cs.cols];
    for (k, score) in scores.iter_mut().enumerate() {
        ones.iter_mut().for_each(|v| *v = 0.0);
        let mut c1 = 0usize;
        for a in 0..256usize {
            if cs.counts[a] == 0 || (sbox((a ^ k) as u8) >> bit) & 1 == 0 {
                continue;
            }
            c1 += cs.counts[a];
            for (o, v) in ones.iter_mut().zip(cs.class(a)) {
                *o += v;
            }
        }
        let c0 = cs.n - c1;
        if c1 == 0 || c0 == 0 {
            flagged.push(k as u32);
            continue;
        }
        let mut best = 0.0f64;
        for (s1, t) in ones.iter().zip(&total) {
            let d = (s1 / c1 as f64 - (t - s1) / c0 as f64).abs();
            best = best.max(d);
        }
        *score = best;
    }
    Ok(HypothesisScore::new(Order::First, scores, flagged))
}

/// Correlation power analysis with the Hamming weight of the round-1
/// S-box output; score is the largest absolute Pearson coefficient over
/// samples.
pub fn cpa(traces: &Matrix, plaintexts: &[[u8; 16]], byte: usize) -> Result<HypothesisScore, AttackError> {
    check_inputs(traces, plaintexts, byte, 3)?;
    let cs = ClassSums::build(traces, plaintexts, byte);
    let n = cs.n as f64;
    let total = cs.column_totals();
    let den_z: Vec<f64> = cs
        .sq
        .iter()
        .zip(&total)
        .map(|(q, t)| n * q - t * t)
        .collect();
    let mut scores = vec![0.0; 256];
    let mut acc = vec![0.0; cs.cols];
    for (k, score) in scores.iter_mut().enumerate() {
        acc.iter_mut().for_each(|v| *v = 0.0);
        let (mut sh, mut sh2) = (0.0, 0.0);
        for a in 0..256usize {
            let cnt = cs.counts[a];
            if cnt == 0 {
                continue;
            }
            let h = hw(sbox((a ^ k) as u8)) as f64;
            sh += h * cnt as f64;
            sh2 += h * h * cnt as f64;
            if h != 0.0 {
                for (o, v) in acc.iter_mut().zip(cs.class(a)) {
                    *o += h * v;
                }
            }
        }
        let den_h = n * sh2 - sh * sh;
        if den_h <= 0.0 {
            continue;
        }
        let mut best = 0.0f64;
        for ((shz, t), dz) in acc.iter().zip(&total).zip(&den_z) {
            if *dz <= 0.0 {
                continue;
            }
            let r = (n * shz - sh * t) / (den_h * dz).sqrt();
            best = best.max(r.abs());
        }
        *score = best;
    }
    Ok(HypothesisScore::new(Order::First, scores, Vec::new()))
}

/// `AP[t] = ||x[win_i.start + t]| - |x[win_j.start + t]||`.
pub fn abs_diff_preprocess(
    trace: &[f64],
    win_i: Range<usize>,
    win_j: Range<usize>,
) -> Result<Vec<f64>, AttackError> {
    if win_i.len() != win_j.len() {
        return Err(AttackError::LengthMismatch(win_i.len(), win_j.len()));
    }
    if win_i.start < win_j.end && win_j.start < win_i.end {
        return Err(AttackError::WindowOverlap);
    }
    if win_i.end > trace.len() || win_j.end > trace.len() {
        return Err(AttackError::LengthMismatch(win_i.end.max(win_j.end), trace.len()));
    }
    Ok(trace[win_i]
        .iter()
        .zip(&trace[win_j])
        .map(|(a, b)| (a.abs() - b.abs()).abs())
        .collect())
}

/// `AZ = alpha * AP + (1 - alpha) * AEM`.
pub fn fuse(ap: &[f64], aem: &[f64], alpha: f64) -> Result<Vec<f64>, AttackError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(AttackError::InvalidAlpha(alpha));
    }
    if ap.len() != aem.len() {
        return Err(AttackError::LengthMismatch(ap.len(), aem.len()));
    }
    Ok(ap
        .iter()
        .zip(aem)
        .map(|(p, e)| alpha * p + (1.0 - alpha) * e)
        .collect())
}

/// Grid `{0, step, ..., 1}` with exact endpoints.
pub fn alpha_grid(step: f64) -> Result<Vec<f64>, AttackError> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(AttackError::InvalidParam(format!("grid step {step}")));
    }
    let n = (1.0 / step).round().max(1.0) as usize;
    Ok((0..=n).map(|i| i as f64 / n as f64).collect())
}

/// First-order analogue of [`select_alpha`]: picks the coefficient whose
/// fused samples correlate best with `HW(sbox(p ^ k))` under the known
/// key. Ties go to the smaller alpha.
pub fn select_alpha_first_order(
    power: &Matrix,
    em: &Matrix,
    plaintexts: &[[u8; 16]],
    keys: &[[u8; 16]],
    byte: usize,
    step: f64,
) -> Result<f64, AttackError> {
    if plaintexts.len() != keys.len() {
        return Err(AttackError::LengthMismatch(plaintexts.len(), keys.len()));
    }
    let h: Vec<f64> = plaintexts
        .iter()
        .zip(keys)
        .map(|(p, k)| hw(sbox(p[byte] ^ k[byte])) as f64)
        .collect();
    let mut best = (0.0, f64::NEG_INFINITY);
    for alpha in alpha_grid(step)? {
        let fused = power.fuse(em, alpha)?;
        let mut r = 0.0f64;
        for c in 0..fused.cols() {
            let col: Vec<f64> = (0..fused.rows()).map(|i| fused.row(i)[c]).collect();
            r = r.max(pearson(&col, &h).abs());
        }
        if r > best.1 {
            best = (alpha, r);
        }
    }
    Ok(best.0)
}
