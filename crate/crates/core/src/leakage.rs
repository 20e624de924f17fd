//! Hamming-weight leakage simulation: turns [`ExecRecord`]s into quantized,
//! noisy, jittered power and EM traces, and assembles whole datasets.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aes::{
    aes128_encrypt, hw, masked_aes128_encrypt, ExecRecord, KeyBytes, MaskVector, OpTag,
    PlainBytes,
};
use crate::dataset::{Manifest, Split, TraceMatrix, TraceSet};
use crate::hexbytes;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("time map references {op:?} round {round} byte {byte}, absent from the execution record")]
    MissingIntermediate { op: OpTag, round: u8, byte: u8 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Power,
    Em,
}

/// Electrical model of one acquisition channel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    /// Volts per unit of Hamming weight. May be negative.
    pub gain: f64,
    pub offset: f64,
    pub noise_sigma: f64,
    pub quant_bits: u32,
    pub v_min: f64,
    pub v_max: f64,
    /// Standard deviation of the whole-trace shift, as a fraction of the
    /// trace length.
    #[serde(default)]
    pub jitter_pct: f64,
}

impl ChannelModel {
    /// Unipolar 8-bit channel over [0, 3.3] V, roughly the power front end.
    pub fn power_default() -> Self {
        ChannelModel {
            gain: 0.05,
            offset: 1.2,
            noise_sigma: 0.1,
            quant_bits: 8,
            v_min: 0.0,
            v_max: 3.3,
            jitter_pct: 0.0,
        }
    }

    /// Bipolar 12-bit channel over [-1, 1] V, roughly the EM front end.
    pub fn em_default() -> Self {
        ChannelModel {
            gain: 0.05,
            offset: 0.0,
            noise_sigma: 0.05,
            quant_bits: 12,
            v_min: -1.0,
            v_max: 1.0,
            jitter_pct: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: &str| Err(SimError::InvalidConfig(msg.to_string()));
        if !(self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be >= 0");
        }
        if self.quant_bits != 8 && self.quant_bits != 12 {
            return bad("quant_bits must be 8 or 12");
        }
        if !(self.v_min < self.v_max) {
            return bad("v_min must be below v_max");
        }
        if !(0.0..=0.05).contains(&self.jitter_pct) {
            return bad("jitter_pct must lie in [0, 0.05]");
        }
        if !self.gain.is_finite() || !self.offset.is_finite() {
            return bad("gain and offset must be finite");
        }
        Ok(())
    }

    fn levels(&self) -> i32 {
        1 << self.quant_bits
    }

    /// Volts per code step.
    pub fn lsb(&self) -> f64 {
        (self.v_max - self.v_min) / (self.levels() - 1) as f64
    }

    /// Codes are signed: `v_min` maps to `-2^(bits-1)` and `v_max` to
    /// `2^(bits-1) - 1`.
    pub fn code_range(&self) -> (i16, i16) {
        let half = self.levels() / 2;
        (-half as i16, (half - 1) as i16)
    }

    pub fn quantize(&self, v: f64) -> i16 {
        let steps = ((v - self.v_min) / self.lsb()).round();
        let steps = steps.clamp(0.0, (self.levels() - 1) as f64) as i32;
        (steps - self.levels() / 2) as i16
    }

    pub fn to_volts(&self, code: i16) -> f64 {
        self.v_min + (code as i32 + self.levels() / 2) as f64 * self.lsb()
    }
}

/// One leaking operation placed in the trace.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub op: OpTag,
    pub round: u8,
    pub byte: u8,
    pub start: u32,
    pub end: u32,
}

impl Window {
    pub fn len(&self) -> usize {
        (self.end - self.start) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

/// Where each leaking operation sits in the trace.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TimeMap {
    pub samples_per_trace: u32,
    pub windows: Vec<Window>,
}

/// Parameters for [`TimeMap::layout`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutConfig {
    /// First sample of the first window.
    pub lead: u32,
    pub width: u32,
    pub guard: u32,
    /// Round-1 operations to place, in order; each gets 16 byte windows.
    pub ops: Vec<OpTag>,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        LayoutConfig {
            lead: 32,
            width: 5,
            guard: 1,
            ops: vec![OpTag::AddRoundKeyOut, OpTag::SboxOut],
        }
    }
}

impl TimeMap {
    /// Consecutive windows for bytes 0..16 of each listed round-1 op.
    pub fn layout(spt: u32, cfg: &LayoutConfig) -> Result<Self, SimError> {
        let mut windows = Vec::with_capacity(cfg.ops.len() * 16);
        let mut at = cfg.lead;
        for &op in &cfg.ops {
            for byte in 0..16u8 {
                windows.push(Window {
                    op,
                    round: 1,
                    byte,
                    start: at,
                    end: at + cfg.width,
                });
                at += cfg.width + cfg.guard;
            }
        }
        let map = TimeMap {
            samples_per_trace: spt,
            windows,
        };
        map.validate()?;
        Ok(map)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        for w in &self.windows {
            if w.start >= w.end || w.end > self.samples_per_trace {
                return Err(SimError::InvalidConfig(format!(
                    "window {:?} round {} byte {} [{}, {}) outside trace of {} samples",
                    w.op, w.round, w.byte, w.start, w.end, self.samples_per_trace
                )));
            }
        }
        let mut sbox: Vec<&Window> = self
            .windows
            .iter()
            .filter(|w| w.op == OpTag::SboxOut && w.round == 1)
            .collect();
        sbox.sort_by_key(|w| w.start);
        if sbox.windows(2).any(|p| p[0].end > p[1].start) {
            return Err(SimError::InvalidConfig(
                "round-1 SboxOut windows overlap".into(),
            ));
        }
        Ok(())
    }

    pub fn find(&self, op: OpTag, round: u8, byte: u8) -> Option<&Window> {
        self.windows
            .iter()
            .find(|w| w.op == op && w.round == round && w.byte == byte)
    }

    pub fn sbox_window(&self, byte: u8) -> Option<&Window> {
        self.find(OpTag::SboxOut, 1, byte)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TraceMeta {
    pub index: u64,
    pub plaintext: PlainBytes,
    pub key: Option<KeyBytes>,
    pub masks: Option<MaskVector>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trace {
    pub channel: Channel,
    pub samples: Vec<i16>,
    pub meta: TraceMeta,
}

// Stream purposes for per-trace generators.
const STREAM_DATA: u64 = 0;
const STREAM_JITTER: u64 = 1;

fn noise_stream(ch: Channel) -> u64 {
    match ch {
        Channel::Power => 2,
        Channel::Em => 3,
    }
}

/// SplitMix64 finalizer over (a, b); derives independent generator seeds.
pub fn derive_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(0x632b_e59b_d9b4_e019);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream))
}

/// Whole-trace shift in samples for a trace seed.
pub fn jitter_shift(seed: u64, jitter_pct: f64, spt: u32) -> i64 {
    let sd = jitter_pct * spt as f64;
    if sd <= 0.0 {
        return 0;
    }
    let z: f64 = rng_for(seed, STREAM_JITTER).sample(StandardNormal);
    (z * sd).round() as i64
}

// Entry position of (op, round, byte) in records produced by this crate's
// AES; checked against the entry before use.
fn canonical_position(op: OpTag, round: u8, byte: u8) -> Option<usize> {
    if !(1..=10).contains(&round) || byte > 15 {
        return None;
    }
    let base = (round as usize - 1) * 80;
    let slot = match (op, round) {
        (OpTag::AddRoundKeyOut, _) => 0,
        (OpTag::SboxOut, _) => 1,
        (OpTag::ShiftRowsOut, _) => 2,
        (OpTag::RemaskOut, r) if r < 10 => 3,
        (OpTag::MixColumnsOut, r) if r < 10 => 4,
        (OpTag::Other, 10) => 3,
        _ => return None,
    };
    Some(base + slot * 16 + byte as usize)
}

fn lookup(rec: &ExecRecord, w: &Window) -> Result<u8, SimError> {
    if let Some(p) = canonical_position(w.op, w.round, w.byte) {
        if let Some(e) = rec.entries().get(p) {
            if e.op == w.op && e.round == w.round && e.byte_index == w.byte {
                return Ok(e.value);
            }
        }
    }
    rec.value(w.op, w.round, w.byte)
        .ok_or(SimError::MissingIntermediate {
            op: w.op,
            round: w.round,
            byte: w.byte,
        })
}

fn render(
    rec: &ExecRecord,
    map: &TimeMap,
    model: &ChannelModel,
    shift: i64,
    noise_seed: u64,
) -> Result<Vec<i16>, SimError> {
    let spt = map.samples_per_trace as i64;
    let mut level = vec![model.offset; spt as usize];
    for w in &map.windows {
        let v = lookup(rec, w)?;
        let bump = model.gain * hw(v) as f64;
        let lo = (w.start as i64 + shift).clamp(0, spt);
        let hi = (w.end as i64 + shift).clamp(0, spt);
        for l in &mut level[lo as usize..hi as usize] {
            *l += bump;
        }
    }
    if model.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
        Ok(level
            .into_iter()
            .map(|l| {
                let z: f64 = rng.sample(StandardNormal);
                model.quantize(l + model.noise_sigma * z)
            })
            .collect())
    } else {
        Ok(level.into_iter().map(|l| model.quantize(l)).collect())
    }
}

/// Synthesizes one channel's trace. Deterministic in `seed`.
pub fn synthesize_trace(
    rec: &ExecRecord,
    map: &TimeMap,
    channel: Channel,
    model: &ChannelModel,
    seed: u64,
    meta: TraceMeta,
) -> Result<Trace, SimError> {
    let shift = jitter_shift(seed, model.jitter_pct, map.samples_per_trace);
    let samples = render(rec, map, model, shift, derive_seed(seed, noise_stream(channel)))?;
    Ok(Trace {
        channel,
        samples,
        meta,
    })
}

/// Synthesizes a simultaneous power/EM pair. Both share one jitter draw
/// (taken from the power model's `jitter_pct`); noise is independent.
pub fn synthesize_dual(
    rec: &ExecRecord,
    map: &TimeMap,
    power: &ChannelModel,
    em: &ChannelModel,
    seed: u64,
    meta: TraceMeta,
) -> Result<(Trace, Trace), SimError> {
    let shift = jitter_shift(seed, power.jitter_pct, map.samples_per_trace);
    let p = render(rec, map, power, shift, derive_seed(seed, noise_stream(Channel::Power)))?;
    let e = render(rec, map, em, shift, derive_seed(seed, noise_stream(Channel::Em)))?;
    Ok((
        Trace {
            channel: Channel::Power,
            samples: p,
            meta: meta.clone(),
        },
        Trace {
            channel: Channel::Em,
            samples: e,
            meta,
        },
    ))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case")]
pub enum KeyPolicy {
    Fixed {
        #[serde(with = "hexbytes")]
        key: KeyBytes,
    },
    /// Byte `byte` of `base` takes the value `(index / 256) % 256`.
    Sweep {
        #[serde(with = "hexbytes")]
        base: KeyBytes,
        byte: u8,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case")]
pub enum PlaintextPolicy {
    Random,
    /// Random plaintext whose byte `byte` is `index % 256`.
    Sweep { byte: u8 },
    /// Even indices use `fixed`; odd indices start from `fixed` and then
    /// take the previous random-group ciphertext.
    FixedVsRandom {
        #[serde(with = "hexbytes")]
        fixed: PlainBytes,
    },
}

/// Dataset generation parameters; read from TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub seed: u64,
    #[serde(default = "default_spt")]
    pub samples_per_trace: u32,
    pub masked: bool,
    /// Force every mask byte to zero (masked code path, no protection).
    #[serde(default)]
    pub zero_masks: bool,
    pub profiling: u64,
    pub attack: u64,
    pub key: KeyPolicy,
    pub plaintext: PlaintextPolicy,
    pub power: ChannelModel,
    pub em: ChannelModel,
    #[serde(default)]
    pub layout: LayoutConfig,
    #[serde(default)]
    pub store_attack_key: bool,
}

fn default_spt() -> u32 {
    2000
}

pub const FIXED_TVLA_PLAINTEXT: PlainBytes = [0xaa; 16];

/// Key used by presets that do not sweep the key.
pub const DEFAULT_KEY: KeyBytes = [
    0x2b, 0x7e, 0x15, 0x16, 0x28, 0xae, 0xd2, 0xa6, 0xab, 0xf7, 0x15, 0x88, 0x09, 0xcf, 0x4f, 0x3c,
];

impl GenConfig {
    pub fn total(&self) -> u64 {
        self.profiling + self.attack
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.samples_per_trace == 0 {
            return Err(SimError::InvalidConfig("samples_per_trace must be > 0".into()));
        }
        self.power.validate()?;
        self.em.validate()?;
        if let KeyPolicy::Sweep { byte, .. } = self.key {
            if byte > 15 {
                return Err(SimError::InvalidConfig("key sweep byte must be < 16".into()));
            }
        }
        if let PlaintextPolicy::Sweep { byte } = self.plaintext {
            if byte > 15 {
                return Err(SimError::InvalidConfig("plaintext sweep byte must be < 16".into()));
            }
        }
        if self.zero_masks && !self.masked {
            return Err(SimError::InvalidConfig("zero_masks requires masked = true".into()));
        }
        TimeMap::layout(self.samples_per_trace, &self.layout)?;
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let cfg: GenConfig =
            toml::from_str(text).map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("GenConfig is always serializable")
    }

    pub fn timemap(&self) -> Result<TimeMap, SimError> {
        TimeMap::layout(self.samples_per_trace, &self.layout)
    }

    /// Named dataset shapes. `spero-*` follow the SPERO dataset layout:
    /// 2000 samples, third key byte and third plaintext byte swept
    /// (256 x 256), two passes, 100000 profiling / 31072 attack.
    pub fn preset(name: &str) -> Option<Self> {
        let spero = |masked| GenConfig {
            seed: 1,
            samples_per_trace: 2000,
            masked,
            zero_masks: false,
            profiling: 100_000,
            attack: 31_072,
            key: KeyPolicy::Sweep {
                base: DEFAULT_KEY,
                byte: 2,
            },
            plaintext: PlaintextPolicy::Sweep { byte: 2 },
            power: ChannelModel::power_default(),
            em: ChannelModel::em_default(),
            layout: LayoutConfig::default(),
            store_attack_key: false,
        };
        let bench = |masked| GenConfig {
            seed: 1,
            samples_per_trace: 256,
            masked,
            zero_masks: false,
            profiling: 5_000,
            attack: 20_000,
            key: KeyPolicy::Fixed { key: DEFAULT_KEY },
            plaintext: PlaintextPolicy::Random,
            power: ChannelModel::power_default(),
            em: ChannelModel::em_default(),
            layout: LayoutConfig::default(),
            store_attack_key: true,
        };
        match name {
            "spero-unmasked" => Some(spero(false)),
            "spero-masked" => Some(spero(true)),
            "bench-unmasked" => Some(bench(false)),
            "bench-masked" => Some(bench(true)),
            "tvla-fixed-random" => Some(GenConfig {
                profiling: 0,
                attack: 20_000,
                plaintext: PlaintextPolicy::FixedVsRandom {
                    fixed: FIXED_TVLA_PLAINTEXT,
                },
                ..bench(true)
            }),
            _ => None,
        }
    }

    pub const PRESETS: &'static [&'static str] = &[
        "spero-unmasked",
        "spero-masked",
        "bench-unmasked",
        "bench-masked",
        "tvla-fixed-random",
    ];
}

/// Key and plaintext for every encryption, in acquisition order.
pub fn plan_inputs(cfg: &GenConfig) -> Vec<(KeyBytes, PlainBytes)> {
    let n = cfg.total();
    let mut out = Vec::with_capacity(n as usize);
    let mut chain = match cfg.plaintext {
        PlaintextPolicy::FixedVsRandom { fixed } => fixed,
        _ => [0; 16],
    };
    for i in 0..n {
        let key = match cfg.key {
            KeyPolicy::Fixed { key } => key,
            KeyPolicy::Sweep { base, byte } => {
                let mut k = base;
                k[byte as usize] = ((i / 256) % 256) as u8;
                k
            }
        };
        let mut data = rng_for(derive_seed(cfg.seed, i), STREAM_DATA);
        let pt = match cfg.plaintext {
            PlaintextPolicy::Random => random_block(&mut data),
            PlaintextPolicy::Sweep { byte } => {
                let mut p = random_block(&mut data);
                p[byte as usize] = (i % 256) as u8;
                p
            }
            PlaintextPolicy::FixedVsRandom { fixed } => {
                if i % 2 == 0 {
                    fixed
                } else {
                    let p = chain;
                    chain = aes128_encrypt(&key, &p).0;
                    p
                }
            }
        };
        out.push((key, pt));
    }
    out
}

fn random_block(rng: &mut impl RngCore) -> [u8; 16] {
    let mut b = [0u8; 16];
    rng.fill_bytes(&mut b);
    b
}

/// Mask vector drawn for encryption `index` (after the plaintext draw on
/// the same stream).
pub fn masks_for(cfg: &GenConfig, index: u64) -> MaskVector {
    if cfg.zero_masks {
        return MaskVector::ZERO;
    }
    let mut data = rng_for(derive_seed(cfg.seed, index), STREAM_DATA);
    let _ = random_block(&mut data);
    MaskVector::from_random(random_block(&mut data))
}

/// Simulates encryption `index`; returns metadata with key and masks
/// always filled in, plus the power and EM traces.
pub fn simulate_one(
    cfg: &GenConfig,
    map: &TimeMap,
    index: u64,
    key: &KeyBytes,
    pt: &PlainBytes,
) -> Result<(TraceMeta, Trace, Trace), SimError> {
    let masks = cfg.masked.then(|| masks_for(cfg, index));
    let rec = match &masks {
        Some(m) => masked_aes128_encrypt(key, pt, m).1,
        None => aes128_encrypt(key, pt).1,
    };
    let meta = TraceMeta {
        index,
        plaintext: *pt,
        key: Some(*key),
        masks,
    };
    let (p, e) = synthesize_dual(
        &rec,
        map,
        &cfg.power,
        &cfg.em,
        derive_seed(cfg.seed, index),
        meta.clone(),
    )?;
    Ok((meta, p, e))
}

/// Generates the full dual-channel dataset described by `cfg`.
///
/// Profiling records keep key and masks; attack records keep them only
/// with `store_attack_key`.
pub fn generate_dataset(cfg: &GenConfig) -> Result<TraceSet, SimError> {
    cfg.validate()?;
    let map = cfg.timemap()?;
    let inputs = plan_inputs(cfg);
    let spt = cfg.samples_per_trace as usize;

    let build = |range: std::ops::Range<u64>, keep_secrets: bool| -> Result<Split, SimError> {
        let rows: Vec<(TraceMeta, Trace, Trace)> = range
            .into_par_iter()
            .map(|i| {
                let (k, p) = &inputs[i as usize];
                simulate_one(cfg, &map, i, k, p)
            })
            .collect::<Result<_, _>>()?;
        let n = rows.len();
        let mut power = Vec::with_capacity(n * spt);
        let mut em = Vec::with_capacity(n * spt);
        let mut meta = Vec::with_capacity(n);
        for (mut m, p, e) in rows {
            power.extend_from_slice(&p.samples);
            em.extend_from_slice(&e.samples);
            if !keep_secrets {
                m.key = None;
                m.masks = None;
            }
            meta.push(m);
        }
        Ok(Split {
            power: TraceMatrix::from_vec(n, spt, power),
            em: TraceMatrix::from_vec(n, spt, em),
            meta,
        })
    };

    let profiling = build(0..cfg.profiling, true)?;
    let attack = build(cfg.profiling..cfg.total(), cfg.store_attack_key)?;
    let manifest = Manifest::new(cfg, &profiling, &attack);
    Ok(TraceSet {
        manifest,
        timemap: map,
        profiling,
        attack,
    })
}
