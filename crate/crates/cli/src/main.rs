//! `spero`: simulate dual-channel trace sets, run attacks and leakage
//! assessment, estimate MTD, explore antenna designs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use spero::antenna::{self, AntennaError, AntennaSpec, Link};
use spero::attack::{
    channel_volts, cpa, dpa_dom, second_order_attack, AttackError, HypothesisScore, Mode, PairModel,
    SecondOrderConfig, Summary,
};
use spero::dataset::{self, DatasetError, SplitKind, TraceSet};
use spero::eval::{
    self, default_pairs, first_order_alpha, full_byte_scorer, geometric_grid, second_order_alpha, snr_poi,
    Columns, EvalError, FirstOrderAttack, FirstOrderKind, MtdOptions, MtdResult, SecondOrderAttack, SubsetAttack,
};
use spero::leakage::{generate_dataset, Channel, GenConfig, SimError};
use spero::rt::{budgeted_features, rank_without_division, IntAccumulator, IntWidth, RtError};
use spero::tvla::{tvla_run, TvlaError};

#[derive(Parser, Debug)]
#[command(name = "spero", version, about = "Dual-channel side-channel toolkit for AES-128")]
struct Cli {
    /// Master seed; overrides the seed of presets and config files.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory (for `simulate`, the dataset directory).
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a dual-channel dataset.
    Simulate(SimulateArgs),
    /// Run one attack and write candidate scores.
    Attack(AttackArgs),
    /// Fixed-vs-random t-test on freshly simulated traces.
    Tvla(TvlaArgs),
    /// Measurements-to-disclosure over a trace-count grid.
    Mtd(MtdArgs),
    /// Antenna design sweep.
    Antenna(AntennaArgs),
    /// Check a dataset directory for structural problems.
    DatasetValidate {
        /// Dataset directory.
        path: PathBuf,
    },
    /// Integer-only streaming DPA with a feature budget.
    RtAttack(RtArgs),
}

#[derive(Args, Debug)]
struct GenSource {
    /// Named preset.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// TOML generator configuration.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    source: GenSource,
    /// Override the profiling trace count.
    #[arg(long)]
    profiling: Option<u64>,
    /// Override the attack trace count.
    #[arg(long)]
    attack: Option<u64>,
    /// Keep key and masks in the attack split.
    #[arg(long)]
    store_attack_key: bool,
    /// Print the resolved configuration and split sizes without generating.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Power,
    Em,
    Combined,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Power => Mode::Power,
            ModeArg::Em => Mode::Em,
            ModeArg::Combined => Mode::Combined,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Profiling,
    Attack,
}

impl From<SplitArg> for SplitKind {
    fn from(s: SplitArg) -> SplitKind {
        match s {
            SplitArg::Profiling => SplitKind::Profiling,
            SplitArg::Attack => SplitKind::Attack,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SummaryArg {
    Mean,
    MaxOffset,
}

impl From<SummaryArg> for Summary {
    fn from(s: SummaryArg) -> Summary {
        match s {
            SummaryArg::Mean => Summary::Mean,
            SummaryArg::MaxOffset => Summary::MaxOffset,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FirstOrderArg {
    Cpa,
    Dpa,
}

#[derive(Args, Debug)]
struct AttackArgs {
    /// Dataset directory.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum, default_value = "power")]
    mode: ModeArg,
    /// Target byte (0-15) for a first-order attack.
    #[arg(long, conflicts_with = "pair", required_unless_present = "pair")]
    byte: Option<u8>,
    /// Target byte pair (0-15 each) for the second-order attack.
    #[arg(long, num_args = 2, value_names = ["I", "J"])]
    pair: Option<Vec<u8>>,
    /// First-order statistic.
    #[arg(long, value_enum, default_value = "cpa")]
    kind: FirstOrderArg,
    /// S-box output bit for DPA.
    #[arg(long, default_value_t = 0)]
    dpa_bit: u8,
    /// Combination coefficient; chosen on the profiling split when omitted.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = 0.01)]
    alpha_step: f64,
    #[arg(long, value_enum, default_value = "attack")]
    split: SplitArg,
    /// Displacement search half-width for the second-order attack.
    #[arg(long, default_value_t = 2)]
    slide: usize,
    #[arg(long, value_enum, default_value = "mean")]
    summary: SummaryArg,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ChannelArg {
    Power,
    Em,
}

impl From<ChannelArg> for Channel {
    fn from(c: ChannelArg) -> Channel {
        match c {
            ChannelArg::Power => Channel::Power,
            ChannelArg::Em => Channel::Em,
        }
    }
}

#[derive(Args, Debug)]
struct TvlaArgs {
    #[command(flatten)]
    source: GenSource,
    #[arg(long, default_value_t = 5000)]
    n_fixed: usize,
    #[arg(long, default_value_t = 5000)]
    n_random: usize,
    #[arg(long, value_enum, default_value = "power")]
    channel: ChannelArg,
    /// Simulate the unprotected implementation instead.
    #[arg(long)]
    unmasked: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OrderArg {
    First,
    Second,
}

#[derive(Args, Debug)]
struct MtdArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum, default_value = "first")]
    order: OrderArg,
    /// Channel modes to evaluate (default: all three).
    #[arg(long, value_enum, num_args = 1..)]
    mode: Vec<ModeArg>,
    /// Bytes (first order) to evaluate; default all 16.
    #[arg(long, num_args = 1..)]
    bytes: Vec<u8>,
    #[arg(long, value_enum, default_value = "cpa")]
    kind: FirstOrderArg,
    #[arg(long, default_value_t = 0)]
    dpa_bit: u8,
    /// Samples kept per first-order attack, by profiling SNR (0 = all).
    #[arg(long, default_value_t = 8)]
    poi: usize,
    #[arg(long, default_value_t = 20)]
    repeats: usize,
    #[arg(long, default_value_t = 20)]
    confirm: usize,
    #[arg(long, default_value_t = 5)]
    grid_min: usize,
    /// Largest grid point (default: attack split size).
    #[arg(long)]
    grid_max: Option<usize>,
    #[arg(long, default_value_t = 10)]
    per_decade: usize,
    /// Stop each grid point at its first failed repeat.
    #[arg(long)]
    stop_early: bool,
    #[arg(long, default_value_t = 0.01)]
    alpha_step: f64,
    #[arg(long, default_value_t = 2)]
    slide: usize,
}

#[derive(Args, Debug)]
struct AntennaArgs {
    /// `N=a..b` (integer turns) or `C=x..y:k` (k circumferences in metres).
    #[arg(long)]
    sweep: Vec<String>,
    /// Source frequency in Hz.
    #[arg(long, default_value_t = 16e6)]
    freq: f64,
    /// Wire or trace diameter in metres.
    #[arg(long)]
    wire_diameter: Option<f64>,
    /// Test voltage for a dB magnitude readout against --v-ref.
    #[arg(long)]
    v_test: Option<f64>,
    #[arg(long, default_value_t = antenna::V_REF_DEFAULT)]
    v_ref: f64,
}

#[derive(Args, Debug)]
struct RtArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    byte: u8,
    #[arg(long, default_value_t = 0)]
    bit: u8,
    /// Features retained per channel.
    #[arg(long, default_value_t = spero::rt::DEFAULT_FEATURE_BUDGET)]
    feature_budget: usize,
    /// Accumulator width in bits (32 or 64).
    #[arg(long, default_value = "64")]
    int_width: String,
    /// `combined` streams the budgeted features of both channels.
    #[arg(long, value_enum, default_value = "power")]
    mode: ModeArg,
    /// Attack traces to stream (default: all).
    #[arg(long)]
    traces: Option<usize>,
}

/// Failure with a stable class name for scripts.
#[derive(Debug)]
struct Failure {
    class: &'static str,
    message: String,
}

impl Failure {
    fn new(class: &'static str, message: impl Into<String>) -> Self {
        Failure {
            class,
            message: message.into(),
        }
    }
}

impl From<DatasetError> for Failure {
    fn from(e: DatasetError) -> Self {
        Failure::new(e.kind(), e.to_string())
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        Failure::new("ConfigError", e.to_string())
    }
}

impl From<AttackError> for Failure {
    fn from(e: AttackError) -> Self {
        Failure::new("AttackError", e.to_string())
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        let class = match e {
            EvalError::InsufficientTraces { .. } => "InsufficientTraces",
            _ => "EvalError",
        };
        Failure::new(class, e.to_string())
    }
}

impl From<TvlaError> for Failure {
    fn from(e: TvlaError) -> Self {
        Failure::new("TvlaError", e.to_string())
    }
}

impl From<AntennaError> for Failure {
    fn from(e: AntennaError) -> Self {
        let class = match e {
            AntennaError::DegenerateAntenna => "DegenerateAntenna",
            AntennaError::NonPositiveVoltage(_) => "NonPositiveVoltage",
            _ => "AntennaError",
        };
        Failure::new(class, e.to_string())
    }
}

impl From<RtError> for Failure {
    fn from(e: RtError) -> Self {
        let class = match e {
            RtError::Overflow { .. } => "Overflow",
            _ => "RtError",
        };
        Failure::new(class, e.to_string())
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Failure + '_ {
    move |e| Failure::new("Io", format!("{}: {e}", path.display()))
}

type Echo = Vec<(String, String)>;

fn echo_header(echo: &Echo) -> String {
    echo.iter().fold(String::new(), |mut s, (k, v)| {
        let _ = writeln!(s, "# {k}: {v}");
        s
    })
}

fn write_artifact(dir: &Path, name: &str, body: &str) -> Result<PathBuf, Failure> {
    fs::create_dir_all(dir).map_err(io(dir))?;
    let path = dir.join(name);
    fs::write(&path, body).map_err(io(&path))?;
    Ok(path)
}

fn load_config(src: &GenSource, default: Option<&str>, seed: Option<u64>) -> Result<GenConfig, Failure> {
    let mut cfg = match (&src.preset, &src.config, default) {
        (Some(p), _, _) => preset(p)?,
        (None, Some(path), _) => {
            let text = fs::read_to_string(path).map_err(io(path))?;
            GenConfig::from_toml(&text)?
        }
        (None, None, Some(p)) => preset(p)?,
        (None, None, None) => {
            return Err(Failure::new("ConfigError", "give --preset or --config"));
        }
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn preset(name: &str) -> Result<GenConfig, Failure> {
    GenConfig::preset(name).ok_or_else(|| {
        Failure::new(
            "ConfigError",
            format!("unknown preset {name:?}; available: {}", GenConfig::PRESETS.join(", ")),
        )
    })
}

fn simulate(cli: &Cli, a: &SimulateArgs) -> Result<(), Failure> {
    let mut cfg = load_config(&a.source, None, cli.seed)?;
    if let Some(n) = a.profiling {
        cfg.profiling = n;
    }
    if let Some(n) = a.attack {
        cfg.attack = n;
    }
    cfg.store_attack_key |= a.store_attack_key;
    if a.dry_run {
        cfg.validate()?;
        println!("profiling = {}\nattack = {}\n\n{}", cfg.profiling, cfg.attack, cfg.to_toml());
        return Ok(());
    }
    let set = generate_dataset(&cfg)?;
    dataset::write(&set, &cli.out)?;
    println!(
        "wrote {} ({} profiling / {} attack traces, {} samples)",
        cli.out.display(),
        set.manifest.counts.profiling,
        set.manifest.counts.attack,
        set.manifest.samples_per_trace
    );
    Ok(())
}

fn profiling_key_or(set: &TraceSet, what: &str) -> Result<(), Failure> {
    if set.profiling.is_empty() || set.profiling.meta.iter().any(|m| m.key.is_none()) {
        return Err(Failure::new(
            "MissingKey",
            format!("{what} needs a profiling split with keys; pass --alpha"),
        ));
    }
    Ok(())
}

fn attack(cli: &Cli, a: &AttackArgs) -> Result<(), Failure> {
    let set = dataset::read(&a.dataset)?;
    let kind: SplitKind = a.split.into();
    let split = set.split(kind);
    let mode: Mode = a.mode.into();
    let mut echo: Echo = vec![
        ("dataset".into(), a.dataset.display().to_string()),
        ("split".into(), kind.dir_name().into()),
        ("mode".into(), mode.name().into()),
    ];
    let (score, name, correct) = if let Some(p) = &a.pair {
        let pair = (p[0], p[1]);
        let alpha = match (mode, a.alpha) {
            (Mode::Combined, None) => {
                profiling_key_or(&set, "combination coefficient selection")?;
                Some(second_order_alpha(&set, pair, a.alpha_step)?)
            }
            (_, x) => x,
        };
        let cfg = SecondOrderConfig {
            mode,
            alpha,
            slide: a.slide,
            summary: a.summary.into(),
            model: PairModel::FullByte,
        };
        echo.push(("pair".into(), format!("{} {}", pair.0, pair.1)));
        echo.push(("order".into(), "second".into()));
        echo.push(("alpha".into(), format!("{:?}", alpha)));
        echo.push(("slide".into(), a.slide.to_string()));
        echo.push(("summary".into(), format!("{:?}", cfg.summary)));
        let s = second_order_attack(&set, kind, pair, &cfg)?;
        let correct = split
            .meta
            .first()
            .and_then(|m| m.key)
            .map(|k| (k[pair.0 as usize] as usize) << 8 | k[pair.1 as usize] as usize);
        (s, format!("attack_pair{}-{}_{}.csv", pair.0, pair.1, mode.name().to_lowercase()), correct)
    } else {
        let byte = a.byte.expect("clap enforces --byte or --pair");
        let spt = set.manifest.samples_per_trace as usize;
        let models = &set.manifest.channel_models;
        let p = channel_volts(split, Channel::Power, models, 0..spt);
        let e = channel_volts(split, Channel::Em, models, 0..spt);
        let traces = match mode {
            Mode::Power => p,
            Mode::Em => e,
            Mode::Combined => {
                let alpha = match a.alpha {
                    Some(x) => x,
                    None => {
                        profiling_key_or(&set, "combination coefficient selection")?;
                        first_order_alpha(&set, byte, &Columns::All, a.alpha_step)?
                    }
                };
                echo.push(("alpha".into(), alpha.to_string()));
                p.fuse(&e, alpha)?
            }
        };
        let pts = split.plaintexts();
        let s = match a.kind {
            FirstOrderArg::Cpa => cpa(&traces, &pts, byte as usize)?,
            FirstOrderArg::Dpa => dpa_dom(&traces, &pts, byte as usize, a.dpa_bit)?,
        };
        echo.push(("byte".into(), byte.to_string()));
        echo.push(("order".into(), "first".into()));
        echo.push(("statistic".into(), format!("{:?}", a.kind).to_lowercase()));
        let correct = split.meta.first().and_then(|m| m.key).map(|k| k[byte as usize] as usize);
        (s, format!("attack_byte{byte}_{}.csv", mode.name().to_lowercase()), correct)
    };
    let body = format!("{}{}", echo_header(&echo), score.to_csv());
    let path = write_artifact(&cli.out, &name, &body)?;
    report_best(&score, correct);
    println!("scores: {}", path.display());
    Ok(())
}

fn report_best(score: &HypothesisScore, correct: Option<usize>) {
    print!("best candidate {:#x} (score {:.6})", score.best, score.scores[score.best]);
    match correct {
        Some(c) => println!(", correct candidate {c:#x} ranks {}", score.rank_of(c)),
        None => println!(),
    }
    if !score.flagged.is_empty() {
        println!("{} candidates had an undefined statistic", score.flagged.len());
    }
}

fn tvla(cli: &Cli, a: &TvlaArgs) -> Result<(), Failure> {
    let mut cfg = load_config(&a.source, Some("tvla-fixed-random"), cli.seed)?;
    if a.unmasked {
        cfg.masked = false;
    }
    let channel: Channel = a.channel.into();
    let r = tvla_run(&cfg, channel, a.n_fixed, a.n_random)?;
    let echo: Echo = vec![
        ("seed".into(), cfg.seed.to_string()),
        ("masked".into(), cfg.masked.to_string()),
        ("channel".into(), format!("{channel:?}").to_lowercase()),
    ];
    let stem = format!("tvla_{}", format!("{channel:?}").to_lowercase());
    write_artifact(&cli.out, &format!("{stem}.csv"), &format!("{}{}", echo_header(&echo), r.to_csv()))?;
    write_artifact(&cli.out, &format!("{stem}.svg"), &r.to_svg())?;
    println!(
        "max |t| = {:.3} over {} samples; threshold {} -> {:?}",
        r.max_abs_t,
        r.t.len(),
        r.threshold,
        r.verdict
    );
    Ok(())
}

fn mtd(cli: &Cli, a: &MtdArgs) -> Result<(), Failure> {
    let set = dataset::read(&a.dataset)?;
    let key = eval::split_key(&set, SplitKind::Attack)?;
    let modes: Vec<Mode> = if a.mode.is_empty() {
        Mode::ALL.to_vec()
    } else {
        a.mode.iter().map(|&m| m.into()).collect()
    };
    let available = set.attack.len();
    let grid = geometric_grid(a.grid_min, a.grid_max.unwrap_or(available).min(available), a.per_decade);
    let opts = MtdOptions {
        repeats: a.repeats,
        confirm: a.confirm,
        seed: cli.seed.unwrap_or(set.manifest.master_seed),
        stop_early: a.stop_early,
    };
    let mut results: Vec<MtdResult> = Vec::new();
    let mut echo: Echo = vec![
        ("dataset".into(), a.dataset.display().to_string()),
        ("order".into(), format!("{:?}", a.order).to_lowercase()),
        ("repeats".into(), opts.repeats.to_string()),
        ("confirm".into(), opts.confirm.to_string()),
        ("seed".into(), opts.seed.to_string()),
        ("stop_early".into(), opts.stop_early.to_string()),
        ("grid".into(), format!("{:?}", grid)),
    ];
    let needs_alpha = modes.contains(&Mode::Combined);
    if needs_alpha {
        profiling_key_or(&set, "combination coefficient selection")?;
    }
    match a.order {
        OrderArg::First => {
            let bytes: Vec<u8> = if a.bytes.is_empty() { (0..16).collect() } else { a.bytes.clone() };
            let kind = match a.kind {
                FirstOrderArg::Cpa => FirstOrderKind::Cpa,
                FirstOrderArg::Dpa => FirstOrderKind::Dpa(a.dpa_bit),
            };
            echo.push(("statistic".into(), format!("{kind:?}").to_lowercase()));
            echo.push(("poi".into(), a.poi.to_string()));
            for byte in bytes {
                let cols = if a.poi == 0 {
                    Columns::All
                } else {
                    Columns::List(snr_poi(&set, byte, a.poi)?)
                };
                let alpha = if needs_alpha {
                    Some(first_order_alpha(&set, byte, &cols, a.alpha_step)?)
                } else {
                    None
                };
                for &mode in &modes {
                    let at = FirstOrderAttack::new(&set.attack, &set, kind, mode, alpha, byte, &cols, &key)?;
                    results.push(run_mtd(&at, &grid, &opts)?);
                }
            }
        }
        OrderArg::Second => {
            echo.push(("slide".into(), a.slide.to_string()));
            let scorer = full_byte_scorer();
            for pair in default_pairs() {
                let alpha = if needs_alpha {
                    Some(second_order_alpha(&set, pair, a.alpha_step)?)
                } else {
                    None
                };
                let f = spero::attack::PairFeatures::extract(
                    &set.attack,
                    &set.timemap,
                    &set.manifest.channel_models,
                    pair,
                    a.slide,
                )?;
                for &mode in &modes {
                    let at = SecondOrderAttack::new(f.clone(), scorer.clone(), mode, alpha, Summary::Mean, &key)?;
                    results.push(run_mtd(&at, &grid, &opts)?);
                }
            }
        }
    }
    let table = eval::report(&results, &echo);
    let stem = format!("mtd_{}", format!("{:?}", a.order).to_lowercase());
    write_artifact(&cli.out, &format!("{stem}.csv"), &table.to_csv())?;
    write_artifact(&cli.out, &format!("{stem}.md"), &table.to_markdown())?;
    write_artifact(&cli.out, &format!("{stem}_curves.svg"), &eval::success_curves_svg(&results))?;
    let json = serde_json::to_string_pretty(&results).map_err(|e| Failure::new("Io", e.to_string()))?;
    write_artifact(&cli.out, &format!("{stem}.json"), &json)?;
    print!("{}", table.to_markdown());
    Ok(())
}

fn run_mtd(at: &dyn SubsetAttack, grid: &[usize], opts: &MtdOptions) -> Result<MtdResult, Failure> {
    let r = eval::mtd(at, grid, opts)?;
    eprintln!("{} {}: {}", r.target.label(), r.mode.name(), r.display_mtd());
    Ok(r)
}

/// Parses `N=a..b` or `C=x..y:k`.
fn parse_sweep(spec: &str) -> Result<(char, Vec<f64>), Failure> {
    let bad = || {
        Failure::new(
            "ConfigError",
            format!("bad sweep {spec:?}; expected N=a..b or C=x..y:k"),
        )
    };
    let (var, range) = spec.split_once('=').ok_or_else(bad)?;
    let (lo, rest) = range.split_once("..").ok_or_else(bad)?;
    match var.trim() {
        "N" => {
            let lo: u64 = lo.trim().parse().map_err(|_| bad())?;
            let hi: u64 = rest.trim().parse().map_err(|_| bad())?;
            if hi < lo {
                return Err(bad());
            }
            Ok(('N', (lo..=hi).map(|n| n as f64).collect()))
        }
        "C" => {
            let (hi, k) = rest.split_once(':').unwrap_or((rest, "8"));
            let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
            let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
            let k: usize = k.trim().parse().map_err(|_| bad())?;
            if k < 1 || hi < lo {
                return Err(bad());
            }
            let step = if k > 1 { (hi - lo) / (k - 1) as f64 } else { 0.0 };
            Ok(('C', (0..k).map(|i| lo + step * i as f64).collect()))
        }
        _ => Err(bad()),
    }
}

fn antenna_cmd(cli: &Cli, a: &AntennaArgs) -> Result<(), Failure> {
    let mut base = AntennaSpec::square_loop(a.freq);
    if let Some(b) = a.wire_diameter {
        base.wire_diameter_m = b;
    }
    base.validate()?;
    let mut turns = vec![base.turns];
    let mut circ = vec![base.circumference_m];
    for s in &a.sweep {
        match parse_sweep(s)? {
            ('N', v) => turns = v.into_iter().map(|x| x as u64).collect(),
            (_, v) => circ = v,
        }
    }
    let rows = antenna::sweep(&base, &Link::default(), &turns, &circ)?;
    let echo: Echo = vec![
        ("freq_hz".into(), a.freq.to_string()),
        ("wire_diameter_m".into(), base.wire_diameter_m.to_string()),
        ("conductivity_s_per_m".into(), base.conductivity_s_per_m.to_string()),
        ("r_inst_ohm".into(), base.r_inst_ohm.to_string()),
    ];
    let body = format!("{}{}", echo_header(&echo), antenna::sweep_csv(&rows));
    let path = write_artifact(&cli.out, "antenna_sweep.csv", &body)?;
    print!("{}", antenna::sweep_csv(&rows));
    if let Some(v) = a.v_test {
        println!("magnitude: {:.4} dB", antenna::magnitude_db(v, a.v_ref)?);
    }
    eprintln!("sweep: {}", path.display());
    Ok(())
}

fn validate_cmd(path: &Path) -> Result<(), Failure> {
    let report = dataset::validate(path);
    for c in &report.checks {
        match c.error {
            None => println!("PASS {:<10} {}", c.name, c.detail),
            Some(kind) => println!("FAIL {:<10} [{kind}] {}", c.name, c.detail),
        }
    }
    let first = report
        .failures()
        .next()
        .map(|c| Failure::new(c.error.unwrap_or("Invalid"), format!("{}: {}", c.name, c.detail)));
    first.map_or(Ok(()), Err)
}

fn rt_attack(cli: &Cli, a: &RtArgs) -> Result<(), Failure> {
    let set = dataset::read(&a.dataset)?;
    let width: IntWidth = a.int_width.parse()?;
    profiling_key_or(&set, "feature selection")?;
    let prof = &set.profiling;
    let spt = set.manifest.samples_per_trace;
    let keys: Vec<[u8; 16]> = prof.meta.iter().filter_map(|m| m.key).collect();
    let pts = prof.plaintexts();
    let models = &set.manifest.channel_models;
    let channels: Vec<Channel> = match Mode::from(a.mode) {
        Mode::Power => vec![Channel::Power],
        Mode::Em => vec![Channel::Em],
        Mode::Combined => vec![Channel::Power, Channel::Em],
    };
    // Combined traces are the two channels concatenated; EM features are
    // offset by the trace length.
    let mut features = Vec::new();
    for (c, &ch) in channels.iter().enumerate() {
        let m = channel_volts(prof, ch, models, 0..spt as usize);
        let f = budgeted_features(&m, &pts, &keys, a.byte, a.bit, a.feature_budget)?;
        features.extend(f.into_iter().map(|i| i + c * spt as usize));
    }
    let mut acc = IntAccumulator::new(features, a.byte, a.bit, width)?;
    let n = a.traces.unwrap_or(set.attack.len()).min(set.attack.len());
    let mut row = Vec::with_capacity(spt as usize * channels.len());
    for i in 0..n {
        row.clear();
        for &ch in &channels {
            let m = match ch {
                Channel::Power => &set.attack.power,
                Channel::Em => &set.attack.em,
            };
            row.extend_from_slice(m.row(i));
        }
        acc.stream_trace(&row, &set.attack.meta[i].plaintext)?;
    }
    let score = rank_without_division(&acc);
    let echo: Echo = vec![
        ("dataset".into(), a.dataset.display().to_string()),
        ("byte".into(), a.byte.to_string()),
        ("bit".into(), a.bit.to_string()),
        ("feature_budget".into(), a.feature_budget.to_string()),
        ("int_width".into(), width.bits().to_string()),
        ("traces".into(), n.to_string()),
        ("state_bytes".into(), acc.state_bytes().to_string()),
    ];
    let path = write_artifact(
        &cli.out,
        &format!("rt_byte{}.csv", a.byte),
        &format!("{}{}", echo_header(&echo), score.to_csv()),
    )?;
    let correct = set.attack.meta.first().and_then(|m| m.key).map(|k| k[a.byte as usize] as usize);
    report_best(&score, correct);
    println!("scores: {}", path.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Failure> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Failure::new("ConfigError", e.to_string()))?;
    }
    match &cli.command {
        Command::Simulate(a) => simulate(cli, a),
        Command::Attack(a) => attack(cli, a),
        Command::Tvla(a) => tvla(cli, a),
        Command::Mtd(a) => mtd(cli, a),
        Command::Antenna(a) => antenna_cmd(cli, a),
        Command::DatasetValidate { path } => validate_cmd(path),
        Command::RtAttack(a) => rt_attack(cli, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error[{}]: {}", f.class, f.message);
            ExitCode::from(2)
        }
    }
}
