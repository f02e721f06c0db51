//! Forward-sampling throughput on the bundled models.
//!
//! `cargo run --release -p tracelam-core --example forward_throughput`

use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tracelam::builtins::Registry;
use tracelam::church::compile;
use tracelam::eval::Evaluator;

const RUNS: u32 = 2000;

fn main() {
    let reg = Registry::standard();
    let ev = Evaluator::new(&reg);
    for (name, src) in [
        ("geometric", include_str!("../models/geometric.church")),
        ("linear-regression-score", include_str!("../models/linear-regression-score.church")),
    ] {
        let term = Arc::new(compile(src, &reg).expect("bundled model compiles"));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let start = Instant::now();
        let mut steps = 0;
        for _ in 0..RUNS {
            steps += ev.forward_sample(&term, &mut rng).expect("closed model").outcome.steps;
        }
        println!("{name}: {:?} per run, {} steps on average", start.elapsed() / RUNS, steps / u64::from(RUNS));
    }
}
