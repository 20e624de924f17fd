//! Success rates, measurements-to-disclosure and result tables.
//!
//! Success at a trace count `n` is measured over `R` uniform subsamples
//! of size `n` drawn without replacement from one split; an attack
//! succeeds when the correct candidate ranks first. The MTD is the
//! smallest grid point where all `R` subsamples succeed and a second,
//! independently seeded batch of `R` also succeeds.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aes::{hw, sbox};
use crate::attack::{
    channel_volts, cpa, dpa_dom, select_alpha, select_alpha_first_order, AttackError, Matrix, Mode, PairFeatures,
    PairModel, PairScorer, Summary,
};
use crate::dataset::{Split, SplitKind, TraceSet};
use crate::leakage::{derive_seed, rng_for, Channel};
use crate::poi::{snr, PoiError};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("need {need} traces, only {got} available")]
    InsufficientTraces { need: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Poi(#[from] PoiError),
}

/// What is being recovered.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Target {
    Byte(u8),
    Pair(u8, u8),
}

impl Target {
    pub fn label(self) -> String {
        match self {
            Target::Byte(b) => format!("Subkey {}", b + 1),
            Target::Pair(i, j) => format!("Subkeys {}-{}", i + 1, j + 1),
        }
    }
}

/// The eight disjoint neighbouring pairs (0,1), (2,3), ..., (14,15).
pub fn default_pairs() -> Vec<(u8, u8)> {
    (0..8).map(|p| (2 * p, 2 * p + 1)).collect()
}

/// An attack that can be replayed on any subset of one split.
pub trait SubsetAttack: Sync {
    fn target(&self) -> Target;
    fn mode(&self) -> Mode;
    fn available(&self) -> usize;
    /// 1-based rank of the correct candidate on traces `idx`.
    fn rank(&self, idx: &[usize]) -> Result<usize, EvalError>;
}

/// Rank of `correct` under descending scores, ties to the lower index.
pub fn rank_in(scores: &[f64], correct: usize) -> usize {
    let s = scores[correct];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(c, &v)| v > s || (v == s && c < correct))
        .count()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FirstOrderKind {
    Cpa,
    /// Difference of means on one S-box output bit.
    Dpa(u8),
}

/// Which samples a first-order attack looks at.
#[derive(Clone, Debug, PartialEq)]
pub enum Columns {
    All,
    List(Vec<usize>),
}

/// First-order attack on one byte with precomputed (and, in combined
/// mode, fused) volts.
pub struct FirstOrderAttack {
    kind: FirstOrderKind,
    mode: Mode,
    byte: u8,
    correct: u8,
    traces: Matrix,
    plaintexts: Vec<[u8; 16]>,
}

impl FirstOrderAttack {
    /// `alpha` is used in combined mode only.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        split: &Split,
        set: &TraceSet,
        kind: FirstOrderKind,
        mode: Mode,
        alpha: Option<f64>,
        byte: u8,
        columns: &Columns,
        key: &[u8; 16],
    ) -> Result<Self, EvalError> {
        let models = &set.manifest.channel_models;
        let spt = set.manifest.samples_per_trace as usize;
        let pick = |ch| {
            let full = channel_volts(split, ch, models, 0..spt);
            match columns {
                Columns::All => full,
                Columns::List(cols) => select_columns(&full, cols),
            }
        };
        let traces = match mode {
            Mode::Power => pick(Channel::Power),
            Mode::Em => pick(Channel::Em),
            Mode::Combined => {
                let a = alpha.ok_or_else(|| EvalError::InvalidParam("combined mode needs alpha".into()))?;
                pick(Channel::Power).fuse(&pick(Channel::Em), a)?
            }
        };
        Ok(FirstOrderAttack {
            kind,
            mode,
            byte,
            correct: key[byte as usize],
            traces,
            plaintexts: split.plaintexts(),
        })
    }
}

fn select_columns(m: &Matrix, cols: &[usize]) -> Matrix {
    let data = (0..m.rows())
        .flat_map(|r| cols.iter().map(move |&c| m.row(r)[c]))
        .collect();
    Matrix::new(m.rows(), cols.len(), data)
}

impl SubsetAttack for FirstOrderAttack {
    fn target(&self) -> Target {
        Target::Byte(self.byte)
    }

    fn mode(&self) -> Mode {
        self.mode
    }

    fn available(&self) -> usize {
        self.traces.rows()
    }

    fn rank(&self, idx: &[usize]) -> Result<usize, EvalError> {
        let t = self.traces.select_rows(idx);
        let p: Vec<[u8; 16]> = idx.iter().map(|&i| self.plaintexts[i]).collect();
        let s = match self.kind {
            FirstOrderKind::Cpa => cpa(&t, &p, self.byte as usize)?,
            FirstOrderKind::Dpa(bit) => dpa_dom(&t, &p, self.byte as usize, bit)?,
        };
        Ok(rank_in(&s.scores, self.correct as usize))
    }
}

/// Second-order attack on one byte pair over precomputed features.
pub struct SecondOrderAttack {
    features: PairFeatures,
    scorer: Arc<PairScorer>,
    mode: Mode,
    alpha: f64,
    summary: Summary,
    correct: usize,
}

impl SecondOrderAttack {
    pub fn new(
        features: PairFeatures,
        scorer: Arc<PairScorer>,
        mode: Mode,
        alpha: Option<f64>,
        summary: Summary,
        key: &[u8; 16],
    ) -> Result<Self, EvalError> {
        let alpha = match mode {
            Mode::Power => 1.0,
            Mode::Em => 0.0,
            Mode::Combined => alpha.ok_or_else(|| EvalError::InvalidParam("combined mode needs alpha".into()))?,
        };
        if !(0.0..=1.0).contains(&alpha) {
            return Err(AttackError::InvalidAlpha(alpha).into());
        }
        let (i, j) = features.pair;
        Ok(SecondOrderAttack {
            correct: (key[i as usize] as usize) << 8 | key[j as usize] as usize,
            features,
            scorer,
            mode,
            alpha,
            summary,
        })
    }
}

impl SubsetAttack for SecondOrderAttack {
    fn target(&self) -> Target {
        let (i, j) = self.features.pair;
        Target::Pair(i, j)
    }

    fn mode(&self) -> Mode {
        self.mode
    }

    fn available(&self) -> usize {
        self.features.len()
    }

    fn rank(&self, idx: &[usize]) -> Result<usize, EvalError> {
        if idx.len() < 3 {
            return Err(AttackError::TooFewTraces { need: 3, got: idx.len() }.into());
        }
        let stats = self.scorer.subset(&self.features, idx);
        let scores = self.scorer.scores_with(&self.features, &stats, self.alpha, self.summary);
        Ok(rank_in(&scores, self.correct))
    }
}

/// Subsample `rep` of size `n` for `seed`: uniform, without replacement.
pub fn subsample(available: usize, n: usize, seed: u64, rep: u64) -> Vec<usize> {
    let mut rng = rng_for(derive_seed(derive_seed(seed, n as u64), rep), 0);
    index::sample(&mut rng, available, n).into_vec()
}

/// Outcomes of `repeats` subsamples starting at repeat number `first`.
/// With `stop_early` the batch ends at the first failure.
fn batch(
    attack: &dyn SubsetAttack,
    n: usize,
    first: u64,
    repeats: usize,
    seed: u64,
    stop_early: bool,
) -> Result<(usize, usize), EvalError> {
    if n > attack.available() {
        return Err(EvalError::InsufficientTraces {
            need: n,
            got: attack.available(),
        });
    }
    if stop_early {
        for r in 0..repeats {
            let idx = subsample(attack.available(), n, seed, first + r as u64);
            if attack.rank(&idx)? != 1 {
                return Ok((r, r + 1));
            }
        }
        return Ok((repeats, repeats));
    }
    let ok: Vec<bool> = (0..repeats)
        .into_par_iter()
        .map(|r| {
            let idx = subsample(attack.available(), n, seed, first + r as u64);
            Ok(attack.rank(&idx)? == 1)
        })
        .collect::<Result<_, EvalError>>()?;
    Ok((ok.iter().filter(|&&b| b).count(), repeats))
}

/// Fraction of `repeats` uniform subsamples of size `n` on which the
/// correct candidate ranks first.
pub fn success_rate(attack: &dyn SubsetAttack, n: usize, repeats: usize, seed: u64) -> Result<f64, EvalError> {
    if repeats == 0 {
        return Err(EvalError::InvalidParam("repeats must be >= 1".into()));
    }
    let (s, r) = batch(attack, n, 0, repeats, seed, false)?;
    Ok(s as f64 / r as f64)
}

/// `per_decade` points per decade between `lo` and `hi` (inclusive of
/// both ends), rounded to integers and deduplicated.
pub fn geometric_grid(lo: usize, hi: usize, per_decade: usize) -> Vec<usize> {
    let lo = lo.max(1);
    if hi < lo {
        return Vec::new();
    }
    let mut out = Vec::new();
    let step = 1.0 / per_decade.max(1) as f64;
    let mut e = ((lo as f64).log10() / step).floor() as i64;
    loop {
        let v = 10f64.powf(e as f64 * step).round() as usize;
        if v > hi {
            break;
        }
        if v >= lo && out.last() != Some(&v) {
            out.push(v);
        }
        e += 1;
    }
    if out.first() != Some(&lo) {
        out.insert(0, lo);
    }
    if out.last() != Some(&hi) {
        out.push(hi);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MtdOptions {
    pub repeats: usize,
    /// Size of the confirmation batch run at the first fully successful
    /// grid point.
    pub confirm: usize,
    pub seed: u64,
    /// End a grid point's batch at its first failure. Cheaper; such
    /// points report fewer runs than `repeats`.
    pub stop_early: bool,
}

impl Default for MtdOptions {
    fn default() -> Self {
        MtdOptions {
            repeats: 20,
            confirm: 20,
            seed: 0,
            stop_early: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub n: usize,
    pub successes: usize,
    pub runs: usize,
    /// Outcome of the confirmation batch, when one was run.
    pub confirmed: Option<bool>,
}

impl GridPoint {
    pub fn rate(&self) -> f64 {
        self.successes as f64 / self.runs.max(1) as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MtdResult {
    pub target: Target,
    pub mode: Mode,
    pub repeats: usize,
    pub points: Vec<GridPoint>,
    /// `None` when no grid point reached a confirmed 100% rate.
    pub mtd: Option<usize>,
}

impl MtdResult {
    /// `mtd` with "not reached" mapped to `usize::MAX`, for comparisons.
    pub fn mtd_or_max(&self) -> usize {
        self.mtd.unwrap_or(usize::MAX)
    }

    pub fn display_mtd(&self) -> String {
        self.mtd.map_or_else(|| "not reached".to_string(), |v| v.to_string())
    }
}

/// Walks `grid` upwards and stops at the first trace count where every
/// repeat and every confirmation repeat succeeds.
pub fn mtd(attack: &dyn SubsetAttack, grid: &[usize], opts: &MtdOptions) -> Result<MtdResult, EvalError> {
    if opts.repeats == 0 {
        return Err(EvalError::InvalidParam("repeats must be >= 1".into()));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(EvalError::InvalidParam("grid must be strictly ascending".into()));
    }
    let mut out = MtdResult {
        target: attack.target(),
        mode: attack.mode(),
        repeats: opts.repeats,
        points: Vec::new(),
        mtd: None,
    };
    for &n in grid {
        let (successes, runs) = batch(attack, n, 0, opts.repeats, opts.seed, opts.stop_early)?;
        let mut point = GridPoint {
            n,
            successes,
            runs,
            confirmed: None,
        };
        if successes == opts.repeats {
            let ok = opts.confirm == 0 || {
                let (s, _) = batch(attack, n, opts.repeats as u64, opts.confirm, opts.seed, opts.stop_early)?;
                s == opts.confirm
            };
            point.confirmed = Some(ok);
            out.points.push(point);
            if ok {
                out.mtd = Some(n);
                return Ok(out);
            }
        } else {
            out.points.push(point);
        }
    }
    Ok(out)
}

/// Sample indices ranked by first-order SNR of `HW(sbox(p ^ k))` on the
/// profiling split (best of the two channels per sample); returns the
/// `top` best.
pub fn snr_poi(set: &TraceSet, byte: u8, top: usize) -> Result<Vec<usize>, EvalError> {
    let prof = &set.profiling;
    let spt = set.manifest.samples_per_trace as usize;
    let labels = hw_labels(prof, byte)?;
    let models = &set.manifest.channel_models;
    let p = snr(&channel_volts(prof, Channel::Power, models, 0..spt), &labels)?;
    let e = snr(&channel_volts(prof, Channel::Em, models, 0..spt), &labels)?;
    let mut order: Vec<usize> = (0..spt).collect();
    let score = |s: usize| p[s].max(e[s]);
    order.sort_by(|&a, &b| score(b).total_cmp(&score(a)).then(a.cmp(&b)));
    order.truncate(top.max(1));
    order.sort_unstable();
    Ok(order)
}

fn hw_labels(split: &Split, byte: u8) -> Result<Vec<u32>, EvalError> {
    split
        .meta
        .iter()
        .enumerate()
        .map(|(r, m)| {
            let k = m.key.ok_or(AttackError::MissingKey(r))?;
            let b = byte as usize;
            Ok(hw(sbox(m.plaintext[b] ^ k[b])))
        })
        .collect()
}

/// Combination coefficient for a first-order byte attack, chosen on the
/// profiling split over `columns`.
pub fn first_order_alpha(set: &TraceSet, byte: u8, columns: &Columns, step: f64) -> Result<f64, EvalError> {
    let prof = &set.profiling;
    let models = &set.manifest.channel_models;
    let spt = set.manifest.samples_per_trace as usize;
    let pick = |ch| {
        let m = channel_volts(prof, ch, models, 0..spt);
        match columns {
            Columns::All => m,
            Columns::List(c) => select_columns(&m, c),
        }
    };
    let keys: Vec<[u8; 16]> = prof
        .meta
        .iter()
        .enumerate()
        .map(|(r, m)| m.key.ok_or(AttackError::MissingKey(r)))
        .collect::<Result<_, _>>()?;
    Ok(select_alpha_first_order(
        &pick(Channel::Power),
        &pick(Channel::Em),
        &prof.plaintexts(),
        &keys,
        byte as usize,
        step,
    )?)
}

/// Combination coefficient for a second-order pair attack, chosen on
/// the profiling split.
pub fn second_order_alpha(set: &TraceSet, pair: (u8, u8), step: f64) -> Result<f64, EvalError> {
    let prof = &set.profiling;
    let f = PairFeatures::extract(prof, &set.timemap, &set.manifest.channel_models, pair, 0)?;
    let keys: Vec<_> = prof.meta.iter().map(|m| m.key).collect();
    Ok(select_alpha(&f, &keys, &prof.plaintexts(), step)?)
}

/// Key of the split, taken from its first record.
pub fn split_key(set: &TraceSet, kind: SplitKind) -> Result<[u8; 16], EvalError> {
    let s = set.split(kind);
    let first = s.meta.first().ok_or(EvalError::InsufficientTraces { need: 1, got: 0 })?;
    let key = first.key.ok_or(AttackError::MissingKey(0))?;
    if s.meta.iter().any(|m| m.key.is_some_and(|k| k != key)) {
        return Err(EvalError::InvalidParam("split uses more than one key".into()));
    }
    Ok(key)
}

/// Shared hypothesis transforms for the full-byte pair model.
pub fn full_byte_scorer() -> Arc<PairScorer> {
    Arc::new(PairScorer::new(PairModel::FullByte))
}

/// MTD table: one row per target, one column per channel mode.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub echo: Vec<(String, String)>,
    pub rows: Vec<(Target, [Option<Option<usize>>; 3])>,
}

fn column(mode: Mode) -> usize {
    match mode {
        Mode::Power => 0,
        Mode::Em => 1,
        Mode::Combined => 2,
    }
}

/// Collects MTD results into a table. Byte tables get a trailing
/// "Avg." row over reached values.
pub fn report(results: &[MtdResult], echo: &[(String, String)]) -> Table {
    let mut rows: Vec<(Target, [Option<Option<usize>>; 3])> = Vec::new();
    for r in results {
        let at = match rows.iter().position(|(t, _)| *t == r.target) {
            Some(i) => i,
            None => {
                rows.push((r.target, [None; 3]));
                rows.len() - 1
            }
        };
        rows[at].1[column(r.mode)] = Some(r.mtd);
    }
    rows.sort_by_key(|(t, _)| *t);
    Table {
        echo: echo.to_vec(),
        rows,
    }
}

impl Table {
    fn cell(v: Option<Option<usize>>) -> String {
        match v {
            None => "-".into(),
            Some(None) => "not reached".into(),
            Some(Some(n)) => n.to_string(),
        }
    }

    /// Column averages over reached values, for byte tables.
    pub fn averages(&self) -> Option<[Option<f64>; 3]> {
        if self.rows.is_empty() || !self.rows.iter().all(|(t, _)| matches!(t, Target::Byte(_))) {
            return None;
        }
        let mut out = [None; 3];
        for (c, o) in out.iter_mut().enumerate() {
            let vals: Vec<f64> = self
                .rows
                .iter()
                .filter_map(|(_, r)| r[c].flatten())
                .map(|v| v as f64)
                .collect();
            if !vals.is_empty() {
                *o = Some(vals.iter().sum::<f64>() / vals.len() as f64);
            }
        }
        Some(out)
    }

    fn lines(&self) -> Vec<[String; 4]> {
        let mut out: Vec<[String; 4]> = self
            .rows
            .iter()
            .map(|(t, r)| [t.label(), Self::cell(r[0]), Self::cell(r[1]), Self::cell(r[2])])
            .collect();
        if let Some(avg) = self.averages() {
            let f = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.0}"));
            out.push(["Avg.".into(), f(avg[0]), f(avg[1]), f(avg[2])]);
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.echo {
            let _ = writeln!(s, "# {k}: {v}");
        }
        s.push_str("target,Power,EM,Combined\n");
        for l in self.lines() {
            let _ = writeln!(s, "{}", l.join(","));
        }
        s
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.echo {
            let _ = writeln!(s, "<!-- {k}: {v} -->");
        }
        s.push_str("| Target | Power | EM | Combined |\n|---|---|---|---|\n");
        for l in self.lines() {
            let _ = writeln!(s, "| {} |", l.join(" | "));
        }
        s
    }
}

/// Success rate against trace count (log axis), one line per result.
pub fn success_curves_svg(results: &[MtdResult]) -> String {
    let (w, h, pad) = (800.0, 400.0, 50.0);
    let ns = results.iter().flat_map(|r| r.points.iter().map(|p| p.n));
    let (lo, hi) = ns.fold((usize::MAX, 1), |(a, b), n| (a.min(n), b.max(n)));
    let (lo, hi) = ((lo.min(hi) as f64).log10(), (hi as f64).log10());
    let span = (hi - lo).max(1e-9);
    let x = |n: usize| pad + ((n as f64).log10() - lo) / span * (w - 2.0 * pad);
    let y = |r: f64| h - pad - r * (h - 2.0 * pad);
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f"];
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <line x1=\"{pad}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{}\" stroke=\"black\"/>\n",
        h - pad,
        w - pad,
        h - pad,
        h - pad
    );
    for (i, r) in results.iter().enumerate() {
        let c = colors[i % colors.len()];
        let pts: Vec<String> = r
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", x(p.n), y(p.rate())))
            .collect();
        let _ = writeln!(
            svg,
            "<polyline fill=\"none\" stroke=\"{c}\" points=\"{}\"/>\n<text x=\"{}\" y=\"{}\" font-size=\"11\" fill=\"{c}\">{} {}</text>",
            pts.join(" "),
            w - pad - 150.0,
            pad + 14.0 * i as f64,
            r.target.label(),
            r.mode.name()
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    // Correct candidate ranks first iff n >= threshold.
    struct Step {
        threshold: usize,
        available: usize,
    }

    impl SubsetAttack for Step {
        fn target(&self) -> Target {
            Target::Byte(0)
        }
        fn mode(&self) -> Mode {
            Mode::Power
        }
        fn available(&self) -> usize {
            self.available
        }
        fn rank(&self, idx: &[usize]) -> Result<usize, EvalError> {
            Ok(if idx.len() >= self.threshold { 1 } else { 2 })
        }
    }

    // Succeeds iff the subsample contains index 0.
    struct NeedsZero;

    impl SubsetAttack for NeedsZero {
        fn target(&self) -> Target {
            Target::Pair(0, 1)
        }
        fn mode(&self) -> Mode {
            Mode::Em
        }
        fn available(&self) -> usize {
            100
        }
        fn rank(&self, idx: &[usize]) -> Result<usize, EvalError> {
            Ok(if idx.contains(&0) { 1 } else { 5 })
        }
    }

    #[test]
    fn rank_with_ties() {
        assert_eq!(rank_in(&[0.5, 0.9, 0.5, 0.1], 1), 1);
        assert_eq!(rank_in(&[0.5, 0.9, 0.5, 0.1], 0), 2);
        assert_eq!(rank_in(&[0.5, 0.9, 0.5, 0.1], 2), 3);
        assert_eq!(rank_in(&[0.5, 0.9, 0.5, 0.1], 3), 4);
    }

    #[test]
    fn subsamples_are_distinct_and_deterministic() {
        let a = subsample(1000, 200, 7, 3);
        let mut s = a.clone();
        s.sort_unstable();
        s.dedup();
        assert_eq!(s.len(), 200);
        assert!(s.iter().all(|&i| i < 1000));
        assert_eq!(a, subsample(1000, 200, 7, 3));
        assert_ne!(a, subsample(1000, 200, 7, 4));
    }

    #[test]
    fn grid_shape() {
        let g = geometric_grid(10, 100, 10);
        assert_eq!(g, vec![10, 13, 16, 20, 25, 32, 40, 50, 63, 79, 100]);
        assert_eq!(geometric_grid(3, 5, 10), vec![3, 4, 5]);
        assert!(geometric_grid(5, 3, 10).is_empty());
    }

    #[test]
    fn mtd_finds_step() {
        let a = Step {
            threshold: 40,
            available: 500,
        };
        let grid = geometric_grid(10, 100, 10);
        for stop_early in [false, true] {
            let r = mtd(&a, &grid, &MtdOptions { stop_early, ..Default::default() }).unwrap();
            assert_eq!(r.mtd, Some(40));
            assert_eq!(r.points.last().unwrap().confirmed, Some(true));
            assert!(r.points.iter().all(|p| (0.0..=1.0).contains(&p.rate())));
        }
        let r = mtd(&a, &[10, 20], &MtdOptions::default()).unwrap();
        assert_eq!(r.mtd, None);
        assert_eq!(r.display_mtd(), "not reached");
        assert_eq!(r.mtd_or_max(), usize::MAX);
        assert!(mtd(&a, &[20, 10], &MtdOptions::default()).is_err());
        assert!(matches!(
            mtd(&a, &[1000], &MtdOptions::default()),
            Err(EvalError::InsufficientTraces { need: 1000, got: 500 })
        ));
    }

    #[test]
    fn success_rate_is_hypergeometric() {
        // P(index 0 in a 30-subset of 100) = 0.3
        let r = success_rate(&NeedsZero, 30, 2000, 1).unwrap();
        assert!((r - 0.3).abs() < 3.0 * (0.3f64 * 0.7 / 2000.0).sqrt(), "{r}");
        assert_eq!(success_rate(&NeedsZero, 100, 5, 1).unwrap(), 1.0);
        assert!(success_rate(&NeedsZero, 10, 0, 1).is_err());
    }

    #[test]
    fn stop_early_reports_runs() {
        let r = mtd(
            &NeedsZero,
            &[10, 100],
            &MtdOptions {
                stop_early: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(r.mtd, Some(100));
        assert!(r.points[0].runs <= 20);
        assert!(r.points[0].successes < r.points[0].runs);
    }

    fn result(target: Target, mode: Mode, mtd: Option<usize>) -> MtdResult {
        MtdResult {
            target,
            mode,
            repeats: 20,
            points: vec![],
            mtd,
        }
    }

    #[test]
    fn empty_table_has_header() {
        let t = report(&[], &[]);
        assert_eq!(t.to_csv(), "target,Power,EM,Combined\n");
        assert!(t.to_markdown().starts_with("| Target | Power | EM | Combined |"));
    }

    #[test]
    fn byte_table_has_average_row() {
        let mut rs = Vec::new();
        for b in 0..16u8 {
            rs.push(result(Target::Byte(b), Mode::Power, Some(100 + b as usize)));
            rs.push(result(Target::Byte(b), Mode::Em, Some(50)));
            rs.push(result(Target::Byte(b), Mode::Combined, if b == 0 { None } else { Some(30) }));
        }
        let t = report(&rs, &[("seed".into(), "1".into())]);
        let csv = t.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "# seed: 1");
        assert_eq!(lines.len(), 1 + 1 + 16 + 1);
        assert_eq!(lines[2], "Subkey 1,100,50,not reached");
        assert_eq!(*lines.last().unwrap(), "Avg.,108,50,30");
        assert_eq!(t.to_markdown().lines().filter(|l| l.starts_with("| ")).count(), 1 + 17);
    }

    #[test]
    fn pair_table_has_no_average() {
        let rs: Vec<_> = default_pairs()
            .into_iter()
            .map(|(i, j)| result(Target::Pair(i, j), Mode::Power, Some(1000)))
            .collect();
        let csv = report(&rs, &[]).to_csv();
        assert_eq!(csv.lines().count(), 1 + 8);
        assert!(csv.contains("Subkeys 1-2,1000,-,-"));
    }

    #[test]
    fn curves_plot() {
        let r = mtd(&NeedsZero, &[10, 50, 100], &MtdOptions::default()).unwrap();
        let svg = success_curves_svg(&[r]);
        assert!(svg.starts_with("<svg") && svg.contains("polyline"));
        assert!(success_curves_svg(&[]).ends_with("</svg>\n"));
    }
}
