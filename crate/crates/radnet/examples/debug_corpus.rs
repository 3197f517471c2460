use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use radnet::aco::{optimize, AcoConfig, FronthaulSpec};
use radnet::scene::{MeasurementSet, WeightMatrix};
use radnet::{FronthaulMode, QuantMode};

fn main() {
    let mut rng = StdRng::seed_from_u64(20260810);
    let mut worst_stat: f64 = 0.0;
    let mut worst_primal: f64 = 0.0;
    let started = std::time::Instant::now();
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
        if idx % 5 == 4 && n > 1 { blocks[0] = DMatrix::zeros(p, g); }
        let noise: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..2.0)).collect();
        let measurement = MeasurementSet::from_blocks(blocks, 1.0, noise, mode).unwrap();
        let weights = if idx % 3 == 0 {
            let raw: Vec<f64> = (0..g).map(|_| rng.gen_range(0.1..1.0)).collect();
            let sum: f64 = raw.iter().sum();
            WeightMatrix { w: raw.into_iter().map(|w| w / sum).collect() }
        } else { WeightMatrix::uniform(g) };
        let capacities: Vec<f64> = (0..n)
            .map(|_| if idx % 7 == 6 { 1e3 } else { rng.gen_range(0.4..(6.0 * p as f64).min(10.0)) })
            .collect();
        let fh = FronthaulSpec { mode: fronthaul, capacities, sample_rate: 1.0 };
        match optimize(&measurement, &weights, &fh, &AcoConfig::default()) {
            Ok(run) => {
                let kkt = &run.solution.kkt;
                if kkt.stationarity > worst_stat { worst_stat = kkt.stationarity;
                    eprintln!("[{idx}] stationarity {:.3e} N={n} p={p} G={g} {:?} {:?} caps {:?} t={:.1e} slacks {:?} iters {}",
                        kkt.stationarity, mode, fronthaul, fh.capacities, run.solution.barrier_t,
                        run.solution.rate_slacks, run.trace.records.len());
                }
                worst_primal = worst_primal.max(kkt.primal_feasibility);
                // monotonicity
                for w in run.trace.records.windows(2) {
                    let band = 1e-9 * (1.0 + w[0].surrogate.abs());
                    if w[1].surrogate - w[0].surrogate > band {
                        eprintln!("[{idx}] MONOTONICITY VIOLATION {:.3e}", w[1].surrogate - w[0].surrogate);
                    }
                }
            }
            Err(e) => eprintln!("[{idx}] ABORT: {e}"),
        }
    }
    eprintln!("worst stationarity {worst_stat:.3e}; worst primal {worst_primal:.3e}; elapsed {:.1}s", started.elapsed().as_secs_f64());
}
