//! On-disk dual-channel trace datasets.
//!
//! Layout of a dataset directory:
//!
//! ```text
//! manifest.json
//! timemap.json                      [{op, round, byte, start, end}, ...]
//! {profiling,attack}/power.traces   "SPT1", n: u64 LE, spt: u32 LE, n*spt i16 LE
//! {profiling,attack}/em.traces      same header and body
//! {profiling,attack}/meta.bin       per record: index u64 LE, plaintext 16B,
//!                                   flags u8 (bit0 key, bit1 masks),
//!                                   key 16B if bit0, masks 16B if bit1
//! ```
//!
//! Record indices are global: profiling holds `0..P`, attack `P..P+A`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aes::MaskVector;
use crate::leakage::{ChannelModel, GenConfig, TimeMap, TraceMeta, Window};

pub const FORMAT_VERSION: &str = "1.0.0";
pub const TRACE_MAGIC: &[u8; 4] = b"SPT1";
const HEADER_LEN: u64 = 16;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt manifest {path}: {reason}")]
    CorruptManifest { path: String, reason: String },
    #[error("bad magic in {path}")]
    BadMagic { path: String },
    #[error("size mismatch in {path}: {detail}")]
    SizeMismatch { path: String, detail: String },
    #[error("channel misalignment in {path} at record {offset}: {detail}")]
    ChannelMisalignment {
        path: String,
        offset: u64,
        detail: String,
    },
    #[error("sample code out of range in {path} at sample offset {offset}: {code}")]
    CodeOutOfRange { path: String, offset: u64, code: i16 },
    #[error("refusing to write into non-empty directory {0}")]
    NotEmpty(String),
}

impl DatasetError {
    /// Stable name of the failure class.
    pub fn kind(&self) -> &'static str {
        match self {
            DatasetError::Io { .. } => "Io",
            DatasetError::CorruptManifest { .. } => "CorruptManifest",
            DatasetError::BadMagic { .. } => "BadMagic",
            DatasetError::SizeMismatch { .. } => "SizeMismatch",
            DatasetError::ChannelMisalignment { .. } => "ChannelMisalignment",
            DatasetError::CodeOutOfRange { .. } => "CodeOutOfRange",
            DatasetError::NotEmpty(_) => "NotEmpty",
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub profiling: u64,
    pub attack: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelModels {
    pub power: ChannelModel,
    pub em: ChannelModel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub samples_per_trace: u32,
    pub sample_dtype: String,
    pub channels: Vec<String>,
    pub counts: Counts,
    pub masked: bool,
    pub key_present: bool,
    pub masks_present: bool,
    pub master_seed: u64,
    pub channel_models: ChannelModels,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GenConfig>,
}

impl Manifest {
    pub fn new(cfg: &GenConfig, profiling: &Split, attack: &Split) -> Self {
        let any = |f: &dyn Fn(&TraceMeta) -> bool| {
            profiling.meta.iter().chain(&attack.meta).any(f)
        };
        Manifest {
            version: FORMAT_VERSION.to_string(),
            samples_per_trace: cfg.samples_per_trace,
            sample_dtype: "int16le".to_string(),
            channels: vec!["power".into(), "em".into()],
            counts: Counts {
                profiling: profiling.len() as u64,
                attack: attack.len() as u64,
            },
            masked: cfg.masked,
            key_present: any(&|m| m.key.is_some()),
            masks_present: any(&|m| m.masks.is_some()),
            master_seed: cfg.seed,
            channel_models: ChannelModels {
                power: cfg.power,
                em: cfg.em,
            },
            generator: Some(cfg.clone()),
        }
    }
}

/// Row-major `n x spt` matrix of quantizer codes.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TraceMatrix {
    n: usize,
    spt: usize,
    data: Vec<i16>,
}

impl TraceMatrix {
    pub fn from_vec(n: usize, spt: usize, data: Vec<i16>) -> Self {
        assert_eq!(data.len(), n * spt, "trace matrix shape");
        TraceMatrix { n, spt, data }
    }

    pub fn rows(&self) -> usize {
        self.n
    }

    pub fn samples_per_trace(&self) -> usize {
        self.spt
    }

    pub fn row(&self, i: usize) -> &[i16] {
        &self.data[i * self.spt..(i + 1) * self.spt]
    }

    pub fn as_slice(&self) -> &[i16] {
        &self.data
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SplitKind {
    Profiling,
    Attack,
}

impl SplitKind {
    pub fn dir_name(self) -> &'static str {
        match self {
            SplitKind::Profiling => "profiling",
            SplitKind::Attack => "attack",
        }
    }
}

/// Power and EM traces of one split; row `i` of both shares `meta[i]`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Split {
    pub power: TraceMatrix,
    pub em: TraceMatrix,
    pub meta: Vec<TraceMeta>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    pub fn plaintexts(&self) -> Vec<[u8; 16]> {
        self.meta.iter().map(|m| m.plaintext).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceSet {
    pub manifest: Manifest,
    pub timemap: TimeMap,
    pub profiling: Split,
    pub attack: Split,
}

impl TraceSet {
    pub fn split(&self, kind: SplitKind) -> &Split {
        match kind {
            SplitKind::Profiling => &self.profiling,
            SplitKind::Attack => &self.attack,
        }
    }
}

fn encode_traces(m: &TraceMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN as usize + m.data.len() * 2);
    out.extend_from_slice(TRACE_MAGIC);
    out.extend_from_slice(&(m.n as u64).to_le_bytes());
    out.extend_from_slice(&(m.spt as u32).to_le_bytes());
    for &c in &m.data {
        out.extend_from_slice(&c.to_le_bytes());
    }
    out
}

fn encode_meta(meta: &[TraceMeta]) -> Vec<u8> {
    let mut out = Vec::with_capacity(meta.len() * 57);
    for m in meta {
        out.extend_from_slice(&m.index.to_le_bytes());
        out.extend_from_slice(&m.plaintext);
        let flags = m.key.is_some() as u8 | (m.masks.is_some() as u8) << 1;
        out.push(flags);
        if let Some(k) = &m.key {
            out.extend_from_slice(k);
        }
        if let Some(mv) = &m.masks {
            out.extend_from_slice(&mv.0);
        }
    }
    out
}

fn is_empty_dir(path: &Path) -> Result<bool, DatasetError> {
    Ok(fs::read_dir(path).map_err(io_err(path))?.next().is_none())
}

/// Writes `set` to `dir`. The directory must be absent or empty; data is
/// staged in a sibling temp directory and renamed into place.
pub fn write(set: &TraceSet, dir: &Path) -> Result<(), DatasetError> {
    if dir.exists() && (!dir.is_dir() || !is_empty_dir(dir)?) {
        return Err(DatasetError::NotEmpty(dir.display().to_string()));
    }
    let name = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    let parent = match dir.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent).map_err(io_err(&parent))?;
    let staging = parent.join(format!(".{name}.tmp-{}", std::process::id()));
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(io_err(&staging))?;
    }
    fs::create_dir_all(&staging).map_err(io_err(&staging))?;

    let put = |rel: &str, bytes: &[u8]| -> Result<(), DatasetError> {
        let p = staging.join(rel);
        fs::write(&p, bytes).map_err(io_err(&p))
    };
    let manifest = serde_json::to_string_pretty(&set.manifest).expect("manifest serializes");
    put("manifest.json", manifest.as_bytes())?;
    let timemap = serde_json::to_string_pretty(&set.timemap.windows).expect("timemap serializes");
    put("timemap.json", timemap.as_bytes())?;
    for kind in [SplitKind::Profiling, SplitKind::Attack] {
        let sub = staging.join(kind.dir_name());
        fs::create_dir_all(&sub).map_err(io_err(&sub))?;
        let split = set.split(kind);
        let d = kind.dir_name();
        put(&format!("{d}/power.traces"), &encode_traces(&split.power))?;
        put(&format!("{d}/em.traces"), &encode_traces(&split.em))?;
        put(&format!("{d}/meta.bin"), &encode_meta(&split.meta))?;
    }
    if dir.exists() {
        fs::remove_dir(dir).map_err(io_err(dir))?;
    }
    fs::rename(&staging, dir).map_err(io_err(dir))
}

fn read_manifest(dir: &Path) -> Result<Manifest, DatasetError> {
    let path = dir.join("manifest.json");
    let text = fs::read(&path).map_err(io_err(&path))?;
    let corrupt = |reason: String| DatasetError::CorruptManifest {
        path: path.display().to_string(),
        reason,
    };
    let m: Manifest = serde_json::from_slice(&text).map_err(|e| corrupt(e.to_string()))?;
    if m.version.split('.').next() != Some("1") {
        return Err(corrupt(format!("unsupported version {}", m.version)));
    }
    if m.samples_per_trace == 0 {
        return Err(corrupt("samples_per_trace must be > 0".into()));
    }
    if m.sample_dtype != "int16le" {
        return Err(corrupt(format!("unsupported sample_dtype {}", m.sample_dtype)));
    }
    if m.channels != ["power", "em"] {
        return Err(corrupt(format!("unexpected channels {:?}", m.channels)));
    }
    for model in [&m.channel_models.power, &m.channel_models.em] {
        model.validate().map_err(|e| corrupt(e.to_string()))?;
    }
    Ok(m)
}

fn read_timemap(dir: &Path, spt: u32) -> Result<TimeMap, DatasetError> {
    let path = dir.join("timemap.json");
    let text = fs::read(&path).map_err(io_err(&path))?;
    let corrupt = |reason: String| DatasetError::CorruptManifest {
        path: path.display().to_string(),
        reason,
    };
    let windows: Vec<Window> = serde_json::from_slice(&text).map_err(|e| corrupt(e.to_string()))?;
    let map = TimeMap {
        samples_per_trace: spt,
        windows,
    };
    map.validate().map_err(|e| corrupt(e.to_string()))?;
    Ok(map)
}

fn read_traces(
    path: &Path,
    expect_n: u64,
    spt: u32,
    model: &ChannelModel,
) -> Result<TraceMatrix, DatasetError> {
    let name = path.display().to_string();
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.len() < 4 || &bytes[..4] != TRACE_MAGIC {
        return Err(DatasetError::BadMagic { path: name });
    }
    if (bytes.len() as u64) < HEADER_LEN {
        return Err(DatasetError::SizeMismatch {
            path: name,
            detail: format!("{} bytes is shorter than the header", bytes.len()),
        });
    }
    let n = u64::from_le_bytes(bytes[4..12].try_into().unwrap());
    let file_spt = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
    if file_spt != spt {
        return Err(DatasetError::SizeMismatch {
            path: name,
            detail: format!("header spt {file_spt}, manifest says {spt}"),
        });
    }
    if n != expect_n {
        return Err(DatasetError::SizeMismatch {
            path: name,
            detail: format!("header holds {n} traces, manifest says {expect_n}"),
        });
    }
    let want = n
        .checked_mul(spt as u64)
        .and_then(|s| s.checked_mul(2))
        .and_then(|s| s.checked_add(HEADER_LEN));
    if want != Some(bytes.len() as u64) {
        return Err(DatasetError::SizeMismatch {
            path: name,
            detail: format!(
                "file is {} bytes, expected {}",
                bytes.len(),
                want.map_or("overflow".to_string(), |w| w.to_string())
            ),
        });
    }
    let (lo, hi) = model.code_range();
    let mut data = Vec::with_capacity((n * spt as u64) as usize);
    for (i, c) in bytes[HEADER_LEN as usize..].chunks_exact(2).enumerate() {
        let code = i16::from_le_bytes([c[0], c[1]]);
        if code < lo || code > hi {
            return Err(DatasetError::CodeOutOfRange {
                path: name,
                offset: i as u64,
                code,
            });
        }
        data.push(code);
    }
    Ok(TraceMatrix::from_vec(n as usize, spt as usize, data))
}

fn read_meta(path: &Path, n: u64, first_index: u64) -> Result<Vec<TraceMeta>, DatasetError> {
    let name = path.display().to_string();
    let bytes = fs::read(path).map_err(io_err(path))?;
    let mut out = Vec::with_capacity(n.min(1 << 24) as usize);
    let mut at = 0usize;
    let short = |rec: u64| DatasetError::SizeMismatch {
        path: name.clone(),
        detail: format!("truncated metadata record {rec}"),
    };
    let take16 = |at: &mut usize, rec: u64| -> Result<[u8; 16], DatasetError> {
        let b = bytes.get(*at..*at + 16).ok_or_else(|| short(rec))?;
        *at += 16;
        Ok(b.try_into().unwrap())
    };
    for rec in 0..n {
        let idx = bytes.get(at..at + 8).ok_or_else(|| short(rec))?;
        let index = u64::from_le_bytes(idx.try_into().unwrap());
        at += 8;
        let plaintext = take16(&mut at, rec)?;
        let flags = *bytes.get(at).ok_or_else(|| short(rec))?;
        at += 1;
        if flags & !0b11 != 0 {
            return Err(DatasetError::SizeMismatch {
                path: name.clone(),
                detail: format!("unknown flag bits {flags:#04x} in record {rec}"),
            });
        }
        let key = if flags & 1 != 0 { Some(take16(&mut at, rec)?) } else { None };
        let masks = if flags & 2 != 0 {
            Some(MaskVector(take16(&mut at, rec)?))
        } else {
            None
        };
        if index != first_index + rec {
            return Err(DatasetError::ChannelMisalignment {
                path: name.clone(),
                offset: rec,
                detail: format!("record carries index {index}, expected {}", first_index + rec),
            });
        }
        out.push(TraceMeta {
            index,
            plaintext,
            key,
            masks,
        });
    }
    if at != bytes.len() {
        return Err(DatasetError::SizeMismatch {
            path: name,
            detail: format!("{} trailing bytes after {n} records", bytes.len() - at),
        });
    }
    Ok(out)
}

/// Power and EM files of a split must declare the same number of traces.
fn check_channel_counts(sub: &Path) -> Result<(), DatasetError> {
    let header_n = |p: &Path| -> Option<u64> {
        let b = fs::read(p).ok()?;
        (b.len() >= HEADER_LEN as usize && &b[..4] == TRACE_MAGIC)
            .then(|| u64::from_le_bytes(b[4..12].try_into().unwrap()))
    };
    let (pp, ep) = (sub.join("power.traces"), sub.join("em.traces"));
    match (header_n(&pp), header_n(&ep)) {
        (Some(a), Some(b)) if a != b => Err(DatasetError::ChannelMisalignment {
            path: ep.display().to_string(),
            offset: a.min(b),
            detail: format!("power holds {a} traces, em holds {b}"),
        }),
        _ => Ok(()),
    }
}

fn read_split(
    dir: &Path,
    kind: SplitKind,
    m: &Manifest,
) -> Result<Split, DatasetError> {
    let sub = dir.join(kind.dir_name());
    let (n, first) = match kind {
        SplitKind::Profiling => (m.counts.profiling, 0),
        SplitKind::Attack => (m.counts.attack, m.counts.profiling),
    };
    let spt = m.samples_per_trace;
    check_channel_counts(&sub)?;
    let power = read_traces(&sub.join("power.traces"), n, spt, &m.channel_models.power)?;
    let em = read_traces(&sub.join("em.traces"), n, spt, &m.channel_models.em)?;
    let meta = read_meta(&sub.join("meta.bin"), n, first)?;
    Ok(Split { power, em, meta })
}

fn check_flags(m: &Manifest, splits: [&Split; 2], dir: &Path) -> Result<(), DatasetError> {
    for (s, kind) in splits.iter().zip([SplitKind::Profiling, SplitKind::Attack]) {
        for (i, r) in s.meta.iter().enumerate() {
            let bad = (r.key.is_some() && !m.key_present) || (r.masks.is_some() && !m.masks_present);
            if bad {
                return Err(DatasetError::CorruptManifest {
                    path: dir.join("manifest.json").display().to_string(),
                    reason: format!(
                        "{} record {i} carries secrets the manifest does not declare",
                        kind.dir_name()
                    ),
                });
            }
        }
    }
    Ok(())
}

/// Loads a dataset, failing on the first inconsistency.
pub fn read(dir: &Path) -> Result<TraceSet, DatasetError> {
    let manifest = read_manifest(dir)?;
    let timemap = read_timemap(dir, manifest.samples_per_trace)?;
    let profiling = read_split(dir, SplitKind::Profiling, &manifest)?;
    let attack = read_split(dir, SplitKind::Attack, &manifest)?;
    check_flags(&manifest, [&profiling, &attack], dir)?;
    Ok(TraceSet {
        manifest,
        timemap,
        profiling,
        attack,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    /// Failure class, when the check failed.
    pub error: Option<&'static str>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }

    fn push(&mut self, name: &'static str, r: Result<String, &DatasetError>) -> bool {
        let passed = r.is_ok();
        let (detail, error) = match r {
            Ok(d) => (d, None),
            Err(e) => (e.to_string(), Some(e.kind())),
        };
        self.checks.push(CheckResult {
            name,
            passed,
            detail,
            error,
        });
        passed
    }
}

/// Runs every structural check and reports each one. Never panics on
/// malformed input; later checks that depend on a failed one are skipped.
pub fn validate(dir: &Path) -> ValidationReport {
    let mut report = ValidationReport::default();
    let m = match read_manifest(dir) {
        Ok(m) => {
            report.push("manifest", Ok(format!("version {}", m.version)));
            m
        }
        Err(e) => {
            report.push("manifest", Err(&e));
            return report;
        }
    };
    let tm = read_timemap(dir, m.samples_per_trace);
    report.push(
        "timemap",
        tm.as_ref().map(|t| format!("{} windows", t.windows.len())),
    );

    let mut splits = Vec::new();
    for kind in [SplitKind::Profiling, SplitKind::Attack] {
        let sub = dir.join(kind.dir_name());
        let (n, first) = match kind {
            SplitKind::Profiling => (m.counts.profiling, 0),
            SplitKind::Attack => (m.counts.attack, m.counts.profiling),
        };
        let d = kind.dir_name();
        let spt = m.samples_per_trace;
        let p = read_traces(&sub.join("power.traces"), n, spt, &m.channel_models.power);
        let e = read_traces(&sub.join("em.traces"), n, spt, &m.channel_models.em);
        let header_err = [&p, &e].into_iter().find_map(|r| match r {
            Err(err @ (DatasetError::BadMagic { .. } | DatasetError::Io { .. })) => Some(err),
            _ => None,
        });
        match header_err {
            Some(err) => {
                report.push("magic", Err(err));
                continue;
            }
            None => report.push("magic", Ok(format!("{d}: SPT1"))),
        };
        let p_ok = report.push(
            "size",
            p.as_ref().map(|t| format!("{d}/power.traces: {} traces", t.rows())),
        );
        let e_ok = report.push(
            "size",
            e.as_ref().map(|t| format!("{d}/em.traces: {} traces", t.rows())),
        );
        let meta = check_channel_counts(&sub)
            .and_then(|_| read_meta(&sub.join("meta.bin"), n, first));
        report.push(
            "alignment",
            meta.as_ref()
                .map(|r| format!("{d}: {} records shared by both channels", r.len())),
        );
        if let (true, true, Ok(p), Ok(e), Ok(meta)) = (p_ok, e_ok, p, e, meta) {
            splits.push(Split { power: p, em: e, meta });
        }
    }
    if splits.len() == 2 {
        let r = check_flags(&m, [&splits[0], &splits[1]], dir);
        report.push(
            "metadata",
            r.as_ref().map(|_| "secret flags consistent".to_string()),
        );
    }
    report
}
