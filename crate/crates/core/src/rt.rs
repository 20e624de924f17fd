//! Integer-only streaming DPA, as a small on-device attack would run it.
//!
//! State is one sum per (guess, bit group, feature) plus one count per
//! (guess, group), so memory does not grow with the trace count. Guesses
//! are ranked by `|mean_1 - mean_0|` without dividing: with
//! `N = max_f |s1 c0 - s0 c1|` and `D = c0 c1`, guess `a` beats `b` when
//! `N_a D_b > N_b D_a`, evaluated exactly in 128-bit integers.

use std::cmp::Ordering;
use std::str::FromStr;

use thiserror::Error;

use crate::aes::sbox;
use crate::attack::{HypothesisScore, Matrix, Order};
use crate::poi::{mrmr_select, PoiError};

/// Default number of retained features per channel.
pub const DEFAULT_FEATURE_BUDGET: usize = 64;

#[derive(Debug, Error, PartialEq)]
pub enum RtError {
    #[error("accumulator overflow at {int_width}-bit width")]
    Overflow { int_width: u32 },
    #[error("feature index {index} outside a trace of {len} samples")]
    FeatureOutOfRange { index: usize, len: usize },
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error(transparent)]
    Poi(#[from] PoiError),
}

/// Width of the emulated sum registers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IntWidth {
    W32,
    W64,
}

impl IntWidth {
    pub fn bits(self) -> u32 {
        match self {
            IntWidth::W32 => 32,
            IntWidth::W64 => 64,
        }
    }

    fn bounds(self) -> (i64, i64) {
        match self {
            IntWidth::W32 => (i32::MIN as i64, i32::MAX as i64),
            IntWidth::W64 => (i64::MIN, i64::MAX),
        }
    }
}

impl FromStr for IntWidth {
    type Err = RtError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "32" => Ok(IntWidth::W32),
            "64" => Ok(IntWidth::W64),
            _ => Err(RtError::InvalidParam(format!("integer width {s:?} (expected 32 or 64)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntAccumulator {
    features: Vec<usize>,
    byte: u8,
    bit: u8,
    width: IntWidth,
    /// `[guess][group][feature]`
    sums: Vec<i64>,
    /// `[guess][group]`
    counts: Vec<u64>,
    traces: u64,
}

impl IntAccumulator {
    pub fn new(features: Vec<usize>, byte: u8, bit: u8, width: IntWidth) -> Result<Self, RtError> {
        if byte > 15 || bit > 7 {
            return Err(RtError::InvalidParam(format!("byte {byte}, bit {bit}")));
        }
        if features.is_empty() {
            return Err(RtError::InvalidParam("empty feature set".into()));
        }
        let f = features.len();
        Ok(IntAccumulator {
            features,
            byte,
            bit,
            width,
            sums: vec![0; 256 * 2 * f],
            counts: vec![0; 512],
            traces: 0,
        })
    }

    pub fn features(&self) -> &[usize] {
        &self.features
    }

    pub fn traces(&self) -> u64 {
        self.traces
    }

    /// Bytes of accumulator state; fixed at construction.
    pub fn state_bytes(&self) -> usize {
        self.sums.len() * std::mem::size_of::<i64>() + self.counts.len() * std::mem::size_of::<u64>()
    }

    fn group(&self, pt: &[u8; 16], guess: usize) -> usize {
        ((sbox(pt[self.byte as usize] ^ guess as u8) >> self.bit) & 1) as usize
    }

    fn add(&self, a: i64, b: i64) -> Result<i64, RtError> {
        let (lo, hi) = self.width.bounds();
        match a.checked_add(b) {
            Some(v) if v >= lo && v <= hi => Ok(v),
            _ => Err(RtError::Overflow {
                int_width: self.width.bits(),
            }),
        }
    }

    /// Adds one trace. The accumulator is unchanged on error.
    pub fn stream_trace(&mut self, trace: &[i16], plaintext: &[u8; 16]) -> Result<(), RtError> {
        let picked = self.pick(trace)?;
        let f = self.features.len();
        let mut next = self.sums.clone();
        for guess in 0..256 {
            let g = self.group(plaintext, guess);
            let at = (guess * 2 + g) * f;
            for (s, &x) in next[at..at + f].iter_mut().zip(&picked) {
                *s = self.add(*s, x as i64)?;
            }
        }
        self.sums = next;
        for guess in 0..256 {
            let g = self.group(plaintext, guess);
            self.counts[guess * 2 + g] += 1;
        }
        self.traces += 1;
        Ok(())
    }

    fn pick(&self, trace: &[i16]) -> Result<Vec<i16>, RtError> {
        self.features
            .iter()
            .map(|&i| {
                trace.get(i).copied().ok_or(RtError::FeatureOutOfRange {
                    index: i,
                    len: trace.len(),
                })
            })
            .collect()
    }

    /// Same state as streaming `traces` one by one, built from
    /// per-plaintext-byte class sums instead.
    pub fn from_batch(
        features: Vec<usize>,
        byte: u8,
        bit: u8,
        width: IntWidth,
        traces: &[&[i16]],
        plaintexts: &[[u8; 16]],
    ) -> Result<Self, RtError> {
        if traces.len() != plaintexts.len() {
            return Err(RtError::InvalidParam("traces and plaintexts differ in length".into()));
        }
        let mut acc = IntAccumulator::new(features, byte, bit, width)?;
        let f = acc.features.len();
        let mut class = vec![0i128; 256 * f];
        let mut class_n = [0u64; 256];
        for (t, p) in traces.iter().zip(plaintexts) {
            let a = p[byte as usize] as usize;
            class_n[a] += 1;
            for (s, x) in class[a * f..(a + 1) * f].iter_mut().zip(acc.pick(t)?) {
                *s += x as i128;
            }
        }
        let (lo, hi) = width.bounds();
        for guess in 0..256 {
            for a in 0..256 {
                let g = ((sbox(a as u8 ^ guess as u8) >> bit) & 1) as usize;
                acc.counts[guess * 2 + g] += class_n[a];
                for j in 0..f {
                    let v = acc.sums[(guess * 2 + g) * f + j] as i128 + class[a * f + j];
                    acc.sums[(guess * 2 + g) * f + j] = v as i64;
                    if v < lo as i128 || v > hi as i128 {
                        return Err(RtError::Overflow { int_width: width.bits() });
                    }
                }
            }
        }
        acc.traces = traces.len() as u64;
        Ok(acc)
    }

    /// `(N, D)` of one guess, or `None` when a group is empty.
    pub fn ratio(&self, guess: usize) -> Option<(u128, u128)> {
        let f = self.features.len();
        let c0 = self.counts[guess * 2];
        let c1 = self.counts[guess * 2 + 1];
        if c0 == 0 || c1 == 0 {
            return None;
        }
        let s0 = &self.sums[guess * 2 * f..(guess * 2 + 1) * f];
        let s1 = &self.sums[(guess * 2 + 1) * f..(guess * 2 + 2) * f];
        let n = s0
            .iter()
            .zip(s1)
            .map(|(&a, &b)| (b as i128 * c0 as i128 - a as i128 * c1 as i128).unsigned_abs())
            .max()
            .unwrap_or(0);
        Some((n, c0 as u128 * c1 as u128))
    }
}

fn cross(a: (u128, u128), b: (u128, u128)) -> Ordering {
    // Exact under the declared budget (|code| < 2^12, traces < 2^20).
    // Beyond it, fall back to a continued-fraction comparison.
    match (a.0.checked_mul(b.1), b.0.checked_mul(a.1)) {
        (Some(l), Some(r)) => l.cmp(&r),
        _ => {
            let (qa, ra) = (a.0 / a.1, a.0 % a.1);
            let (qb, rb) = (b.0 / b.1, b.0 % b.1);
            qa.cmp(&qb).then_with(|| match (ra, rb) {
                (0, 0) => Ordering::Equal,
                (0, _) => Ordering::Less,
                (_, 0) => Ordering::Greater,
                _ => cross((b.1, rb), (a.1, ra)),
            })
        }
    }
}

/// Ranks all guesses by exact integer comparison; guesses with an empty
/// group come last and are flagged. Ties go to the lower guess. The
/// `scores` field holds `N / D` for display only.
pub fn rank_without_division(acc: &IntAccumulator) -> HypothesisScore {
    let ratios: Vec<Option<(u128, u128)>> = (0..256).map(|g| acc.ratio(g)).collect();
    let mut ranking: Vec<u32> = (0..256).collect();
    ranking.sort_by(|&a, &b| {
        let ord = match (ratios[a as usize], ratios[b as usize]) {
            (Some(x), Some(y)) => cross(y, x),
            (Some(_), None) => Ordering::Less,
            (None, Some(_)) => Ordering::Greater,
            (None, None) => Ordering::Equal,
        };
        ord.then(a.cmp(&b))
    });
    let scores = ratios
        .iter()
        .map(|r| r.map_or(0.0, |(n, d)| n as f64 / d as f64))
        .collect();
    let flagged = (0..256u32).filter(|&g| ratios[g as usize].is_none()).collect();
    HypothesisScore {
        order: Order::First,
        scores,
        best: ranking[0] as usize,
        ranking,
        flagged,
    }
}

/// Picks up to `budget` features by mRMR against the DPA bit labels.
pub fn budgeted_features(
    traces: &Matrix,
    plaintexts: &[[u8; 16]],
    keys: &[[u8; 16]],
    byte: u8,
    bit: u8,
    budget: usize,
) -> Result<Vec<usize>, RtError> {
    if plaintexts.len() != keys.len() {
        return Err(RtError::InvalidParam("plaintexts and keys differ in length".into()));
    }
    let b = byte as usize;
    let labels: Vec<u32> = plaintexts
        .iter()
        .zip(keys)
        .map(|(p, k)| ((sbox(p[b] ^ k[b]) >> bit) & 1) as u32)
        .collect();
    let k = budget.min(traces.cols());
    Ok(mrmr_select(traces, &labels, k, crate::poi::DEFAULT_BINS)?.indices())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aes::hw;
    use crate::attack::dpa_dom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fixture(n: usize, s: usize, noise: i16, seed: u64) -> (Vec<Vec<i16>>, Vec<[u8; 16]>, [u8; 16]) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let key: [u8; 16] = rng.random();
        let mut traces = Vec::new();
        let mut pts = Vec::new();
        for _ in 0..n {
            let p: [u8; 16] = rng.random();
            let v = hw(sbox(p[0] ^ key[0])) as i16;
            let t: Vec<i16> = (0..s)
                .map(|i| if i == 2 { 10 * v } else { 0 } + rng.random_range(-noise..=noise))
                .collect();
            traces.push(t);
            pts.push(p);
        }
        (traces, pts, key)
    }

    #[test]
    fn empty_accumulator() {
        let acc = IntAccumulator::new(vec![0, 1], 0, 0, IntWidth::W64).unwrap();
        assert_eq!(acc.traces(), 0);
        assert!(acc.sums.iter().all(|&s| s == 0));
        let r = rank_without_division(&acc);
        assert_eq!(r.flagged.len(), 256);
        assert_eq!(r.best, 0);
    }

    #[test]
    fn streaming_equals_batch_and_oracle() {
        let (t, p, _) = fixture(100, 6, 50, 1);
        let feats = vec![0, 2, 5];
        let mut acc = IntAccumulator::new(feats.clone(), 0, 3, IntWidth::W64).unwrap();
        let size = acc.state_bytes();
        for (tr, pt) in t.iter().zip(&p) {
            acc.stream_trace(tr, pt).unwrap();
        }
        assert_eq!(acc.state_bytes(), size);
        let rows: Vec<&[i16]> = t.iter().map(|v| v.as_slice()).collect();
        let batch = IntAccumulator::from_batch(feats.clone(), 0, 3, IntWidth::W64, &rows, &p).unwrap();
        assert_eq!(acc, batch);
        // direct recompute for a few guesses
        for guess in [0usize, 77, 255] {
            for g in 0..2 {
                let members: Vec<usize> = (0..100)
                    .filter(|&r| ((sbox(p[r][0] ^ guess as u8) >> 3) & 1) as usize == g)
                    .collect();
                assert_eq!(acc.counts[guess * 2 + g], members.len() as u64);
                for (j, &fi) in feats.iter().enumerate() {
                    let s: i64 = members.iter().map(|&r| t[r][fi] as i64).sum();
                    assert_eq!(acc.sums[(guess * 2 + g) * 3 + j], s);
                }
            }
        }
    }

    #[test]
    fn overflow_is_reported_and_state_kept() {
        let mut acc = IntAccumulator::new(vec![0], 0, 0, IntWidth::W32).unwrap();
        let big = [i16::MAX];
        let p = [0u8; 16];
        let n = (i32::MAX as i64 / i16::MAX as i64) as usize;
        for _ in 0..n {
            acc.stream_trace(&big, &p).unwrap();
        }
        let before = acc.clone();
        assert_eq!(acc.stream_trace(&big, &p), Err(RtError::Overflow { int_width: 32 }));
        assert_eq!(acc, before);
        assert!(matches!(
            acc.stream_trace(&[], &p),
            Err(RtError::FeatureOutOfRange { index: 0, len: 0 })
        ));
    }

    #[test]
    fn matches_float_dpa() {
        let mut agree = 0;
        for seed in 0..200 {
            let (t, p, _) = fixture(60, 4, 30, seed);
            let feats = vec![0, 1, 2, 3];
            let mut acc = IntAccumulator::new(feats, 0, 0, IntWidth::W64).unwrap();
            for (tr, pt) in t.iter().zip(&p) {
                acc.stream_trace(tr, pt).unwrap();
            }
            let int = rank_without_division(&acc);
            let m = Matrix::new(60, 4, t.iter().flatten().map(|&v| v as f64).collect());
            let fl = dpa_dom(&m, &p, 0, 0).unwrap();
            if int.best == fl.best {
                agree += 1;
            } else {
                let (a, b) = (acc.ratio(int.best).unwrap(), acc.ratio(fl.best).unwrap());
                assert_eq!(cross(a, b), Ordering::Equal, "seed {seed}");
            }
        }
        assert!(agree >= 198);
    }

    #[test]
    fn group_swap_keeps_ranking() {
        let (t, p, _) = fixture(80, 4, 20, 3);
        let mut a = IntAccumulator::new(vec![0, 1, 2, 3], 0, 1, IntWidth::W64).unwrap();
        for (tr, pt) in t.iter().zip(&p) {
            a.stream_trace(tr, pt).unwrap();
        }
        let mut b = a.clone();
        for g in 0..256 {
            b.counts.swap(g * 2, g * 2 + 1);
            let f = 4;
            for j in 0..f {
                b.sums.swap(g * 2 * f + j, (g * 2 + 1) * f + j);
            }
        }
        assert_eq!(rank_without_division(&a).ranking, rank_without_division(&b).ranking);
    }

    #[test]
    fn budget_of_one_recovers_noise_free_key() {
        let (t, p, key) = fixture(300, 6, 0, 9);
        let m = Matrix::new(300, 6, t.iter().flatten().map(|&v| v as f64).collect());
        let keys = vec![key; 300];
        let feats = budgeted_features(&m, &p, &keys, 0, 0, 1).unwrap();
        assert_eq!(feats, vec![2]);
        let mut acc = IntAccumulator::new(feats, 0, 0, IntWidth::W64).unwrap();
        for (tr, pt) in t.iter().zip(&p) {
            acc.stream_trace(tr, pt).unwrap();
        }
        assert_eq!(rank_without_division(&acc).best, key[0] as usize);
    }

    #[test]
    fn cross_multiplication() {
        assert_eq!(cross((1, 3), (2, 6)), Ordering::Equal);
        assert_eq!(cross((2, 3), (1, 2)), Ordering::Greater);
        let huge = u128::MAX / 3;
        assert_eq!(cross((huge, huge - 1), (huge, huge)), Ordering::Greater);
        assert_eq!(cross((huge - 1, huge), (huge, huge - 1)), Ordering::Less);
        assert_eq!(cross((2 * huge, huge), (huge, huge / 2)), Ordering::Less);
        assert_eq!("32".parse::<IntWidth>().unwrap(), IntWidth::W32);
        assert!("16".parse::<IntWidth>().is_err());
    }
}
