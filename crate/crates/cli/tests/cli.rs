use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn spero(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spero"))
        .args(args)
        .output()
        .expect("run spero")
}

fn ok(args: &[&str]) -> String {
    let out = spero(args);
    assert!(
        out.status.success(),
        "spero {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn data_rows(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(str::to_string)
        .collect()
}

fn small_set(dir: &Path, preset: &str, seed: &str) {
    ok(&[
        "--seed",
        seed,
        "--out",
        dir.to_str().unwrap(),
        "simulate",
        "--preset",
        preset,
        "--profiling",
        "1000",
        "--attack",
        "3000",
    ]);
}

#[test]
fn spero_preset_split_sizes() {
    let text = ok(&["simulate", "--preset", "spero-unmasked", "--dry-run"]);
    assert!(text.contains("profiling = 100000\nattack = 31072\n"), "{text}");
    assert!(text.contains("samples_per_trace = 2000"));
}

#[test]
fn pair_attack_writes_all_hypotheses() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = tmp.path().join("ds");
    small_set(&ds, "bench-masked", "5");
    let out = tmp.path().join("o");
    let text = ok(&[
        "--out",
        out.to_str().unwrap(),
        "attack",
        "--dataset",
        ds.to_str().unwrap(),
        "--mode",
        "combined",
        "--pair",
        "3",
        "4",
    ]);
    assert!(text.contains("ranks 1"), "{text}");
    let rows = data_rows(&out.join("attack_pair3-4_combined.csv"));
    assert_eq!(rows.len(), 65536);
    let header = fs::read_to_string(out.join("attack_pair3-4_combined.csv")).unwrap();
    assert!(header.contains("# mode: Combined"));
}

#[test]
fn antenna_sweep_efficiency_increases() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&["--out", tmp.path().to_str().unwrap(), "antenna", "--sweep", "N=1..8"]);
    let rows = data_rows(&tmp.path().join("antenna_sweep.csv"));
    assert_eq!(rows.len(), 8);
    let e: Vec<f64> = rows
        .iter()
        .map(|r| r.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert!(e.windows(2).all(|w| w[1] > w[0]), "{e:?}");
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for run in ["a", "b"] {
        let ds = tmp.path().join(run);
        small_set(&ds, "bench-unmasked", "9");
        let out = tmp.path().join(format!("{run}-out"));
        ok(&[
            "--out",
            out.to_str().unwrap(),
            "attack",
            "--dataset",
            ds.to_str().unwrap(),
            "--byte",
            "7",
        ]);
        let mut all = Vec::new();
        for f in ["profiling/power.traces", "attack/em.traces", "attack/meta.bin", "manifest.json"] {
            all.push(fs::read(ds.join(f)).unwrap());
        }
        let csv = fs::read_to_string(out.join("attack_byte7_power.csv")).unwrap();
        let csv: String = csv.lines().filter(|l| !l.starts_with("# dataset")).collect();
        all.push(csv.into_bytes());
        files.push(all);
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn validator_names_the_error() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = tmp.path().join("ds");
    small_set(&ds, "bench-unmasked", "2");
    ok(&["dataset-validate", ds.to_str().unwrap()]);
    let f = ds.join("attack/power.traces");
    let bytes = fs::read(&f).unwrap();
    fs::write(&f, &bytes[..bytes.len() - 100]).unwrap();
    let out = spero(&["dataset-validate", ds.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error[SizeMismatch]"));
}

#[test]
fn config_errors_are_classified() {
    let out = spero(&["simulate", "--preset", "nope", "--out", "unused"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("error[ConfigError]") && err.contains("spero-masked"), "{err}");
    let out = spero(&["antenna", "--sweep", "N=3..1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn tvla_writes_csv_and_svg() {
    let tmp = tempfile::tempdir().unwrap();
    let text = ok(&[
        "--out",
        tmp.path().to_str().unwrap(),
        "tvla",
        "--unmasked",
        "--n-fixed",
        "1000",
        "--n-random",
        "1000",
    ]);
    assert!(text.contains("Fail"), "{text}");
    assert_eq!(data_rows(&tmp.path().join("tvla_power.csv")).len(), 256);
    assert!(fs::read_to_string(tmp.path().join("tvla_power.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn mtd_and_rt_attack_run() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = tmp.path().join("ds");
    small_set(&ds, "bench-unmasked", "4");
    let out = tmp.path().join("o");
    let table = ok(&[
        "--out",
        out.to_str().unwrap(),
        "mtd",
        "--dataset",
        ds.to_str().unwrap(),
        "--bytes",
        "0",
        "1",
        "--stop-early",
    ]);
    assert!(table.contains("| Avg. |"), "{table}");
    assert!(out.join("mtd_first.csv").exists() && out.join("mtd_first_curves.svg").exists());
    let text = ok(&[
        "--out",
        out.to_str().unwrap(),
        "rt-attack",
        "--dataset",
        ds.to_str().unwrap(),
        "--byte",
        "2",
        "--mode",
        "combined",
        "--feature-budget",
        "8",
    ]);
    assert!(text.contains("ranks 1"), "{text}");
}
