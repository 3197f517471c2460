use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use radnet::aco::{optimize, AcoConfig, FronthaulSpec};
use radnet::scene::{MeasurementSet, WeightMatrix};
use radnet::{FronthaulMode, QuantMode};

fn main() {
    // Rebuild corpus[21]: N=2 M=3 K=2 G=1 rvq dedicated, seed path identical
    // to tests/common random_corpus(20260810, 52).
    let mut rng = StdRng::seed_from_u64(20260810);
    for idx in 0..52usize {
        let mode = if idx % 2 == 0 { QuantMode::Afvq } else { QuantMode::Rvq };
        let fronthaul = if (idx / 2) % 2 == 0 { FronthaulMode::Dedicated } else { FronthaulMode::Shared };
        let n = rng.gen_range(1..=4usize);
        let m = rng.gen_range(1..=3usize);
        let k = rng.gen_range(1..=3usize);
        let g = rng.gen_range(1..=16usize);
        let p = m * k;
        let mut blocks: Vec<DMatrix<Complex64>> = (0..n)
            .map(|_| DMatrix::from_fn(p, g, |_, _| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))))
            .collect();
        if idx % 5 == 4 && n > 1 {
            blocks[0] = DMatrix::zeros(p, g);
        }
        let noise: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..2.0)).collect();
        let measurement = MeasurementSet::from_blocks(blocks, 1.0, noise, mode).unwrap();
        let weights = if idx % 3 == 0 {
            let raw: Vec<f64> = (0..g).map(|_| rng.gen_range(0.1..1.0)).collect();
            let sum: f64 = raw.iter().sum();
            WeightMatrix { w: raw.into_iter().map(|w| w / sum).collect() }
        } else {
            WeightMatrix::uniform(g)
        };
        let capacities: Vec<f64> = (0..n)
            .map(|_| if idx % 7 == 6 { 1e3 } else { rng.gen_range(0.4..(6.0 * p as f64)) })
            .collect();
        if idx != 21 { continue; }
        eprintln!("instance {idx}: N={n} M={m} K={k} G={g} {mode} {fronthaul} caps {capacities:?}");
        let fh = FronthaulSpec { mode: fronthaul, capacities, sample_rate: 1.0 };
        match optimize(&measurement, &weights, &fh, &AcoConfig::default()) {
            Ok(run) => eprintln!("ok: obj {}", run.solution.objective),
            Err(e) => eprintln!("abort: {e}"),
        }
    }
}
