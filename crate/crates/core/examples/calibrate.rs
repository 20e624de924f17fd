//! Pilot runs used to choose the trace budgets recorded in
//! `tests/data/calibration.toml`.
//!
//! cargo run --release -p spero --example calibrate [seed]

use std::time::Instant;

use spero::attack::{Mode, Summary};
use spero::dataset::{SplitKind, TraceSet};
use spero::eval::{
    default_pairs, first_order_alpha, full_byte_scorer, geometric_grid, mtd, second_order_alpha, snr_poi, split_key,
    Columns, FirstOrderAttack, FirstOrderKind, MtdOptions, SecondOrderAttack,
};
use spero::attack::PairFeatures;
use spero::leakage::{generate_dataset, Channel, GenConfig};
use spero::tvla::tvla_run;

fn gen(name: &str, seed: u64) -> TraceSet {
    let mut cfg = GenConfig::preset(name).unwrap();
    cfg.seed = seed;
    let t = Instant::now();
    let set = generate_dataset(&cfg).unwrap();
    eprintln!("{name}: generated {} traces in {:?}", cfg.total(), t.elapsed());
    set
}

fn main() {
    let seed: u64 = std::env::args().nth(1).map_or(1, |s| s.parse().unwrap());
    let opts = MtdOptions {
        seed,
        stop_early: true,
        ..Default::default()
    };

    let un = gen("bench-unmasked", seed);
    let key = split_key(&un, SplitKind::Attack).unwrap();
    let t = Instant::now();
    for byte in [0u8, 5, 15] {
        let cols = Columns::List(snr_poi(&un, byte, 8).unwrap());
        let alpha = first_order_alpha(&un, byte, &cols, 0.01).unwrap();
        for mode in Mode::ALL {
            let a = FirstOrderAttack::new(&un.attack, &un, FirstOrderKind::Cpa, mode, Some(alpha), byte, &cols, &key)
                .unwrap();
            let r = mtd(&a, &geometric_grid(5, 2000, 10), &opts).unwrap();
            println!("unmasked cpa byte {byte} {} alpha {alpha:.2}: {}", mode.name(), r.display_mtd());
        }
    }
    eprintln!("first-order: {:?}", t.elapsed());

    let m = gen("bench-masked", seed);
    let scorer = full_byte_scorer();
    let t = Instant::now();
    for (i, j) in default_pairs().into_iter().take(3) {
        let alpha = second_order_alpha(&m, (i, j), 0.01).unwrap();
        let f = PairFeatures::extract(&m.attack, &m.timemap, &m.manifest.channel_models, (i, j), 0).unwrap();
        for mode in Mode::ALL {
            let a = SecondOrderAttack::new(f.clone(), scorer.clone(), mode, Some(alpha), Summary::Mean, &key).unwrap();
            let r = mtd(&a, &geometric_grid(100, 20000, 10), &opts).unwrap();
            println!("masked 2nd pair ({i},{j}) {} alpha {alpha:.2}: {}", mode.name(), r.display_mtd());
        }
    }
    eprintln!("second-order: {:?}", t.elapsed());

    let t = Instant::now();
    let mut tv = GenConfig::preset("tvla-fixed-random").unwrap();
    tv.seed = seed;
    let masked = tvla_run(&tv, Channel::Power, 20_000, 20_000).unwrap();
    eprintln!("tvla masked 20k+20k: max|t| {:.2} in {:?}", masked.max_abs_t, t.elapsed());
    tv.masked = false;
    let unmasked = tvla_run(&tv, Channel::Power, 5_000, 5_000).unwrap();
    println!("tvla unmasked 5k+5k max|t| {:.2}", unmasked.max_abs_t);
}
