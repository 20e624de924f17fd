//! Second-order attack on first-order masked AES.
//!
//! Both round-1 S-box outputs carry the same mask, so
//! `HW(sbox'(x_i) ^ sbox'(x_j)) == HW(sbox(x_i) ^ sbox(x_j))`. The leakage
//! of the two S-box windows is combined as `||x_i| - |x_j||` per aligned
//! offset (per channel), optionally fused across channels, reduced to one
//! scalar per trace, and correlated against that hypothesis for all 65536
//! subkey pairs.

use serde::{Deserialize, Serialize};

use super::walsh::{XorCorrelator, PAIR_SPACE};
use super::{alpha_grid, fuse, pearson, AttackError, HypothesisScore, Mode, Order};
use crate::aes::{hw, sbox};
use crate::dataset::{ChannelModels, Split, SplitKind, TraceSet};
use crate::leakage::TimeMap;

/// Hypothesis for a subkey pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairModel {
    /// `HW(sbox(p_i ^ k_i) ^ sbox(p_j ^ k_j))`
    FullByte,
    /// One bit of `sbox(p_i ^ k_i) ^ sbox(p_j ^ k_j)`.
    SingleBit(u8),
}

impl PairModel {
    pub fn eval(self, u: u8, v: u8) -> f64 {
        match self {
            PairModel::FullByte => hw(u ^ v) as f64,
            PairModel::SingleBit(b) => ((u ^ v) >> b & 1) as f64,
        }
    }
}

pub fn pair_hypothesis(model: PairModel, pi: u8, pj: u8, ki: u8, kj: u8) -> f64 {
    model.eval(sbox(pi ^ ki), sbox(pj ^ kj))
}

/// Per-trace reduction of the preprocessed window.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Summary {
    Mean,
    MaxOffset,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SecondOrderConfig {
    pub mode: Mode,
    /// Required for [`Mode::Combined`].
    pub alpha: Option<f64>,
    /// Common displacement of both windows is searched over `-slide..=slide`.
    pub slide: usize,
    pub summary: Summary,
    pub model: PairModel,
}

impl Default for SecondOrderConfig {
    fn default() -> Self {
        SecondOrderConfig {
            mode: Mode::Power,
            alpha: None,
            slide: 2,
            summary: Summary::Mean,
            model: PairModel::FullByte,
        }
    }
}

impl SecondOrderConfig {
    fn alpha(&self) -> Result<f64, AttackError> {
        match (self.mode, self.alpha) {
            (Mode::Power, _) => Ok(1.0),
            (Mode::Em, _) => Ok(0.0),
            (Mode::Combined, Some(a)) if (0.0..=1.0).contains(&a) => Ok(a),
            (Mode::Combined, Some(a)) => Err(AttackError::InvalidAlpha(a)),
            (Mode::Combined, None) => Err(AttackError::InvalidParam(
                "combined mode needs a combination coefficient".into(),
            )),
        }
    }
}

/// Absolute-difference vectors of one byte pair for every trace and
/// every displacement, for both channels, in volts.
#[derive(Clone, Debug)]
pub struct PairFeatures {
    pub pair: (u8, u8),
    pub displacements: Vec<i64>,
    width: usize,
    ap: Vec<f64>,
    aem: Vec<f64>,
    /// `(p_i << 8) | p_j` per trace.
    index: Vec<u16>,
}

impl PairFeatures {
    pub fn extract(
        split: &Split,
        timemap: &TimeMap,
        models: &ChannelModels,
        pair: (u8, u8),
        slide: usize,
    ) -> Result<Self, AttackError> {
        let (i, j) = pair;
        if i > 15 || j > 15 || i == j {
            return Err(AttackError::InvalidParam(format!("byte pair ({i}, {j})")));
        }
        let wi = *timemap.sbox_window(i).ok_or(AttackError::MissingWindow(i))?;
        let wj = *timemap.sbox_window(j).ok_or(AttackError::MissingWindow(j))?;
        if wi.len() != wj.len() {
            return Err(AttackError::LengthMismatch(wi.len(), wj.len()));
        }
        if wi.start < wj.end && wj.start < wi.end {
            return Err(AttackError::WindowOverlap);
        }
        let spt = timemap.samples_per_trace as i64;
        let lo = wi.start.min(wj.start) as i64;
        let hi = wi.end.max(wj.end) as i64;
        let displacements: Vec<i64> = (-(slide as i64)..=slide as i64)
            .filter(|d| lo + d >= 0 && hi + d <= spt)
            .collect();
        let width = wi.len();
        let n = split.len();
        let per = displacements.len() * width;
        let mut ap = Vec::with_capacity(n * per);
        let mut aem = Vec::with_capacity(n * per);
        for r in 0..n {
            for (src, model, out) in [
                (split.power.row(r), &models.power, &mut ap),
                (split.em.row(r), &models.em, &mut aem),
            ] {
                for &d in &displacements {
                    let a = (wi.start as i64 + d) as usize;
                    let b = (wj.start as i64 + d) as usize;
                    for t in 0..width {
                        let x = model.to_volts(src[a + t]).abs();
                        let y = model.to_volts(src[b + t]).abs();
                        out.push((x - y).abs());
                    }
                }
            }
        }
        let index = split
            .meta
            .iter()
            .map(|m| (m.plaintext[i as usize] as u16) << 8 | m.plaintext[j as usize] as u16)
            .collect();
        Ok(PairFeatures {
            pair,
            displacements,
            width,
            ap,
            aem,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Same features with the power and EM roles exchanged.
    pub fn swapped(&self) -> Self {
        PairFeatures {
            ap: self.aem.clone(),
            aem: self.ap.clone(),
            ..self.clone()
        }
    }

    fn block(&self, data: &[f64], trace: usize, d: usize) -> std::ops::Range<usize> {
        let per = self.displacements.len() * self.width;
        let at = trace * per + d * self.width;
        debug_assert!(at + self.width <= data.len());
        at..at + self.width
    }

    /// One scalar per selected trace at displacement slot `d`.
    pub fn summaries(&self, idx: &[usize], d: usize, alpha: f64, summary: Summary) -> Vec<f64> {
        idx.iter()
            .map(|&r| {
                let p = &self.ap[self.block(&self.ap, r, d)];
                let e = &self.aem[self.block(&self.aem, r, d)];
                let az = p.iter().zip(e).map(|(a, b)| alpha * a + (1.0 - alpha) * b);
                match summary {
                    Summary::Mean => az.sum::<f64>() / self.width as f64,
                    Summary::MaxOffset => az.fold(f64::NEG_INFINITY, f64::max),
                }
            })
            .collect()
    }

    /// Fused absolute-difference vector of one trace.
    pub fn az(&self, trace: usize, d: usize, alpha: f64) -> Result<Vec<f64>, AttackError> {
        fuse(
            &self.ap[self.block(&self.ap, trace, d)],
            &self.aem[self.block(&self.aem, trace, d)],
            alpha,
        )
    }

    fn zero_slot(&self) -> usize {
        self.displacements
            .iter()
            .position(|&d| d == 0)
            .unwrap_or(self.displacements.len() / 2)
    }
}

/// Scores all 65536 subkey pairs for subsets of a [`PairFeatures`].
pub struct PairScorer {
    model: PairModel,
    corr: XorCorrelator,
}

/// Hypothesis-side sums for one trace subset, shared by every summary
/// vector scored on that subset.
pub struct SubsetStats {
    n: f64,
    idx: Vec<usize>,
    sum_h: Vec<f64>,
    den_h: Vec<f64>,
}

impl PairScorer {
    pub fn new(model: PairModel) -> Self {
        let table: Vec<f64> = (0..PAIR_SPACE)
            .map(|x| model.eval(sbox((x >> 8) as u8), sbox(x as u8)))
            .collect();
        PairScorer {
            model,
            corr: XorCorrelator::new(&table),
        }
    }

    pub fn model(&self) -> PairModel {
        self.model
    }

    pub fn subset(&self, f: &PairFeatures, idx: &[usize]) -> SubsetStats {
        let mut counts = vec![0.0; PAIR_SPACE];
        for &r in idx {
            counts[f.index[r] as usize] += 1.0;
        }
        let (mut sum_h, mut sum_h2) = self.corr.correlate_both(&counts);
        // both are integer valued
        sum_h.iter_mut().for_each(|v| *v = v.round());
        sum_h2.iter_mut().for_each(|v| *v = v.round());
        let n = idx.len() as f64;
        let den_h = sum_h
            .iter()
            .zip(&sum_h2)
            .map(|(s, s2)| n * s2 - s * s)
            .collect();
        SubsetStats {
            n,
            idx: idx.to_vec(),
            sum_h,
            den_h,
        }
    }

    /// `|Pearson|` of `z` (one value per subset trace) against every pair
    /// hypothesis, folded into `best` with `max`.
    pub fn accumulate(&self, f: &PairFeatures, stats: &SubsetStats, z: &[f64], best: &mut [f64]) {
        let n = stats.n;
        let mean = z.iter().sum::<f64>() / n.max(1.0);
        let mut sums = vec![0.0; PAIR_SPACE];
        let (mut sz, mut sz2) = (0.0, 0.0);
        for (&r, &v) in stats.idx.iter().zip(z) {
            let c = v - mean;
            sums[f.index[r] as usize] += c;
            sz += c;
            sz2 += c * c;
        }
        let den_z = n * sz2 - sz * sz;
        if den_z <= 0.0 {
            return;
        }
        let shz = self.corr.correlate(&sums);
        for k in 0..PAIR_SPACE {
            let dh = stats.den_h[k];
            if dh <= 0.0 {
                continue;
            }
            let r = ((n * shz[k] - stats.sum_h[k] * sz) / (dh * den_z).sqrt()).abs();
            if r > best[k] {
                best[k] = r;
            }
        }
    }

    /// Raw scores (candidate `k_i << 8 | k_j`) on a subset of traces.
    pub fn scores(
        &self,
        f: &PairFeatures,
        idx: &[usize],
        cfg: &SecondOrderConfig,
    ) -> Result<Vec<f64>, AttackError> {
        let alpha = cfg.alpha()?;
        let stats = self.subset(f, idx);
        Ok(self.scores_with(f, &stats, alpha, cfg.summary))
    }

    pub fn scores_with(&self, f: &PairFeatures, stats: &SubsetStats, alpha: f64, summary: Summary) -> Vec<f64> {
        let mut best = vec![0.0; PAIR_SPACE];
        for d in 0..f.displacements.len() {
            let z = f.summaries(&stats.idx, d, alpha, summary);
            self.accumulate(f, stats, &z, &mut best);
        }
        best
    }
}

/// Runs the second-order attack on byte pair `pair` of one split.
/// Candidate `c` stands for `(k_i, k_j) = (c >> 8, c & 0xff)`.
pub fn second_order_attack(
    set: &TraceSet,
    split: SplitKind,
    pair: (u8, u8),
    cfg: &SecondOrderConfig,
) -> Result<HypothesisScore, AttackError> {
    let data = set.split(split);
    if data.len() < 3 {
        return Err(AttackError::TooFewTraces {
            need: 3,
            got: data.len(),
        });
    }
    let f = PairFeatures::extract(data, &set.timemap, &set.manifest.channel_models, pair, cfg.slide)?;
    let idx: Vec<usize> = (0..f.len()).collect();
    let scores = PairScorer::new(cfg.model).scores(&f, &idx, cfg)?;
    Ok(HypothesisScore::new(Order::Second, scores, Vec::new()))
}

/// Picks the combination coefficient on a grid of `step` that maximizes
/// `|Pearson(mean AZ, hypothesis under the known key)|` at zero
/// displacement. Ties go to the smaller coefficient.
pub fn select_alpha(profiling: &PairFeatures, keys: &[Option<[u8; 16]>], plaintexts: &[[u8; 16]], step: f64) -> Result<f64, AttackError> {
    if keys.len() != profiling.len() || plaintexts.len() != profiling.len() {
        return Err(AttackError::LengthMismatch(profiling.len(), keys.len()));
    }
    let (i, j) = (profiling.pair.0 as usize, profiling.pair.1 as usize);
    let mut h = Vec::with_capacity(keys.len());
    for (r, (k, p)) in keys.iter().zip(plaintexts).enumerate() {
        let k = k.ok_or(AttackError::MissingKey(r))?;
        h.push(pair_hypothesis(PairModel::FullByte, p[i], p[j], k[i], k[j]));
    }
    let idx: Vec<usize> = (0..profiling.len()).collect();
    let slot = profiling.zero_slot();
    let mut best = (0.0, f64::NEG_INFINITY);
    for alpha in alpha_grid(step)? {
        let z = profiling.summaries(&idx, slot, alpha, Summary::Mean);
        let r = pearson(&z, &h).abs();
        if r > best.1 {
            best = (alpha, r);
        }
    }
    Ok(best.0)
}
