//! Fixed-vs-random Welch t-test leakage assessment.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::aes::aes128_encrypt;
use crate::attack::Matrix;
use crate::leakage::{
    simulate_one, Channel, GenConfig, KeyPolicy, PlaintextPolicy, SimError, FIXED_TVLA_PLAINTEXT,
};

pub const DEFAULT_THRESHOLD: f64 = 4.5;

#[derive(Debug, Error, PartialEq)]
pub enum TvlaError {
    #[error("each group needs at least {need} traces, got {got}")]
    TooFewTraces { need: usize, got: usize },
    #[error("sample count mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Streaming per-sample mean and variance (Welford).
///
/// Two accumulators merge exactly with
/// `n = na + nb`, `d = mean_b - mean_a`,
/// `mean = mean_a + d * nb / n`, `m2 = m2_a + m2_b + d^2 * na * nb / n`.
#[derive(Clone, Debug, PartialEq)]
pub struct WelchAccumulator {
    n: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl WelchAccumulator {
    pub fn new(samples: usize) -> Self {
        WelchAccumulator {
            n: 0,
            mean: vec![0.0; samples],
            m2: vec![0.0; samples],
        }
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn push(&mut self, trace: &[f64]) {
        assert_eq!(trace.len(), self.mean.len(), "trace length");
        self.n += 1;
        let n = self.n as f64;
        for ((m, q), &x) in self.mean.iter_mut().zip(&mut self.m2).zip(trace) {
            let d = x - *m;
            *m += d / n;
            *q += d * (x - *m);
        }
    }

    pub fn merge(&mut self, other: &WelchAccumulator) {
        assert_eq!(other.mean.len(), self.mean.len(), "trace length");
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = other.clone();
            return;
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        for i in 0..self.mean.len() {
            let d = other.mean[i] - self.mean[i];
            self.mean[i] += d * nb / n;
            self.m2[i] += other.m2[i] + d * d * na * nb / n;
        }
        self.n += other.n;
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Unbiased sample variance per sample.
    pub fn variance(&self) -> Vec<f64> {
        let d = (self.n.max(2) - 1) as f64;
        self.m2.iter().map(|q| q / d).collect()
    }
}

/// `t[s] = (mean_a - mean_b) / sqrt(var_a / n_a + var_b / n_b)`; 0 where
/// both groups have zero variance.
pub fn welch_t_from(a: &WelchAccumulator, b: &WelchAccumulator) -> Result<Vec<f64>, TvlaError> {
    for g in [a, b] {
        if g.n < 2 {
            return Err(TvlaError::TooFewTraces {
                need: 2,
                got: g.n as usize,
            });
        }
    }
    if a.mean.len() != b.mean.len() {
        return Err(TvlaError::LengthMismatch(a.mean.len(), b.mean.len()));
    }
    let (va, vb) = (a.variance(), b.variance());
    let (na, nb) = (a.n as f64, b.n as f64);
    Ok((0..a.mean.len())
        .map(|s| {
            let den = (va[s] / na + vb[s] / nb).sqrt();
            if den > 0.0 {
                (a.mean[s] - b.mean[s]) / den
            } else {
                0.0
            }
        })
        .collect())
}

pub fn welch_t(a: &Matrix, b: &Matrix) -> Result<Vec<f64>, TvlaError> {
    let acc = |m: &Matrix| {
        let mut w = WelchAccumulator::new(m.cols());
        (0..m.rows()).for_each(|r| w.push(m.row(r)));
        w
    };
    if a.cols() != b.cols() {
        return Err(TvlaError::LengthMismatch(a.cols(), b.cols()));
    }
    welch_t_from(&acc(a), &acc(b))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TvlaReport {
    pub t: Vec<f64>,
    pub max_abs_t: f64,
    pub threshold: f64,
    pub verdict: Verdict,
    pub n_fixed: u64,
    pub n_random: u64,
}

impl TvlaReport {
    pub fn new(t: Vec<f64>, threshold: f64, n_fixed: u64, n_random: u64) -> Self {
        let max_abs_t = t.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut r = TvlaReport {
            t,
            max_abs_t,
            threshold,
            verdict: Verdict::Pass,
            n_fixed,
            n_random,
        };
        r.verdict = r.verdict_at(threshold);
        r
    }

    pub fn verdict_at(&self, threshold: f64) -> Verdict {
        if self.max_abs_t > threshold {
            Verdict::Fail
        } else {
            Verdict::Pass
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# n_fixed={} n_random={} threshold={} max_abs_t={:.6} verdict={:?}\nsample,t\n",
            self.n_fixed, self.n_random, self.threshold, self.max_abs_t, self.verdict
        );
        for (s, t) in self.t.iter().enumerate() {
            out.push_str(&format!("{s},{t:.6}\n"));
        }
        out
    }

    /// Line plot of t against sample index with the two threshold lines.
    pub fn to_svg(&self) -> String {
        let (w, h, pad) = (800.0, 300.0, 40.0);
        let n = self.t.len().max(2) as f64;
        let span = self.max_abs_t.max(self.threshold) * 1.1;
        let x = |i: f64| pad + i / (n - 1.0) * (w - 2.0 * pad);
        let y = |t: f64| h / 2.0 - t / span * (h / 2.0 - pad);
        let points: Vec<String> = self
            .t
            .iter()
            .enumerate()
            .map(|(i, &t)| format!("{:.2},{:.2}", x(i as f64), y(t)))
            .collect();
        let mut svg = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
             <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        );
        for t in [self.threshold, -self.threshold] {
            svg.push_str(&format!(
                "<line x1=\"{pad}\" x2=\"{:.2}\" y1=\"{:.2}\" y2=\"{:.2}\" stroke=\"red\" stroke-dasharray=\"4 3\"/>\n",
                w - pad,
                y(t),
                y(t)
            ));
        }
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"black\" stroke-width=\"1\" points=\"{}\"/>\n",
            points.join(" ")
        ));
        svg.push_str(&format!(
            "<text x=\"{pad}\" y=\"20\" font-size=\"12\">max |t| = {:.2}, threshold = {}</text>\n</svg>\n",
            self.max_abs_t, self.threshold
        ));
        svg
    }
}

/// Acquisition plan: `(is_fixed, plaintext)` in FRFR order; the random
/// group chains ciphertext into the next plaintext starting from the
/// fixed value. Surplus traces of the larger group come last.
pub fn interleaved_plan(key: &[u8; 16], fixed: [u8; 16], n_fixed: usize, n_random: usize) -> Vec<(bool, [u8; 16])> {
    let mut out = Vec::with_capacity(n_fixed + n_random);
    let (mut f, mut r) = (0, 0);
    let mut chain = fixed;
    while f < n_fixed || r < n_random {
        let take_fixed = f < n_fixed && (r >= n_random || f <= r);
        if take_fixed {
            out.push((true, fixed));
            f += 1;
        } else {
            out.push((false, chain));
            chain = aes128_encrypt(key, &chain).0;
            r += 1;
        }
    }
    out
}

const CHUNK: usize = 2048;

/// Simulates `n_fixed + n_random` interleaved encryptions with `cfg` and
/// runs the t-test on one channel. The key comes from the configured
/// policy (sweeps use their base key).
pub fn tvla_run(cfg: &GenConfig, channel: Channel, n_fixed: usize, n_random: usize) -> Result<TvlaReport, TvlaError> {
    for n in [n_fixed, n_random] {
        if n < 100 {
            return Err(TvlaError::TooFewTraces { need: 100, got: n });
        }
    }
    cfg.validate()?;
    let map = cfg.timemap()?;
    let key = match cfg.key {
        KeyPolicy::Fixed { key } => key,
        KeyPolicy::Sweep { base, .. } => base,
    };
    let fixed = match cfg.plaintext {
        PlaintextPolicy::FixedVsRandom { fixed } => fixed,
        _ => FIXED_TVLA_PLAINTEXT,
    };
    let plan = interleaved_plan(&key, fixed, n_fixed, n_random);
    let spt = cfg.samples_per_trace as usize;
    let model = match channel {
        Channel::Power => cfg.power,
        Channel::Em => cfg.em,
    };
    let parts: Vec<(WelchAccumulator, WelchAccumulator)> = plan
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let mut acc = (WelchAccumulator::new(spt), WelchAccumulator::new(spt));
            let mut volts = vec![0.0; spt];
            for (o, (is_fixed, pt)) in chunk.iter().enumerate() {
                let index = (c * CHUNK + o) as u64;
                let (_, p, e) = simulate_one(cfg, &map, index, &key, pt)?;
                let codes = match channel {
                    Channel::Power => p.samples,
                    Channel::Em => e.samples,
                };
                volts.iter_mut().zip(&codes).for_each(|(v, &c)| *v = model.to_volts(c));
                if *is_fixed { &mut acc.0 } else { &mut acc.1 }.push(&volts);
            }
            Ok(acc)
        })
        .collect::<Result<_, SimError>>()?;
    let mut fixed_acc = WelchAccumulator::new(spt);
    let mut random_acc = WelchAccumulator::new(spt);
    for (f, r) in &parts {
        fixed_acc.merge(f);
        random_acc.merge(r);
    }
    let t = welch_t_from(&fixed_acc, &random_acc)?;
    Ok(TvlaReport::new(t, DEFAULT_THRESHOLD, n_fixed as u64, n_random as u64))
}
