//! Shared test fixtures: a randomized instance corpus and the reconstructed
//! room scenario used by the scene-level acceptance checks.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use radnet::aco::FronthaulSpec;
use radnet::scene::{
    build_measurement_set, build_weights, linear_array, MeasurementSet, RadarNode, Rect,
    SceneConfig, Segment, WeightMatrix, WeightSpec, SPEED_OF_LIGHT,
};
use radnet::{FronthaulMode, QuantMode};

pub struct CorpusInstance {
    pub name: String,
    pub measurement: MeasurementSet,
    pub weights: WeightMatrix,
    pub fronthaul: FronthaulSpec,
}

/// Randomized desk-scale corpus cycling through both quantization modes and
/// both fronthaul types, with dimensions N in 1..=4, M,K in 1..=3 and
/// G in 1..=16.
pub fn random_corpus(seed: u64, count: usize) -> Vec<CorpusInstance> {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for idx in 0..count {
        let mode = if idx % 2 == 0 { QuantMode::Afvq } else { QuantMode::Rvq };
        let fronthaul =
            if (idx / 2) % 2 == 0 { FronthaulMode::Dedicated } else { FronthaulMode::Shared };
        let n = rng.gen_range(1..=4usize);
        let m = rng.gen_range(1..=3usize);
        let k = rng.gen_range(1..=3usize);
        let g = rng.gen_range(1..=16usize);
        let p = m * k;

        let mut blocks: Vec<DMatrix<Complex64>> = (0..n)
            .map(|_| {
                DMatrix::from_fn(p, g, |_, _| {
                    Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
                })
            })
            .collect();
        // Every fifth instance has one radar fully blind (zero block).
        if idx % 5 == 4 && n > 1 {
            blocks[0] = DMatrix::zeros(p, g);
        }
        let noise: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..2.0)).collect();
        let measurement =
            MeasurementSet::from_blocks(blocks, 1.0, noise, mode).expect("corpus instance");

        let weights = if idx % 3 == 0 {
            let raw: Vec<f64> = (0..g).map(|_| rng.gen_range(0.1..1.0)).collect();
            let sum: f64 = raw.iter().sum();
            WeightMatrix { w: raw.into_iter().map(|w| w / sum).collect() }
        } else {
            WeightMatrix::uniform(g)
        };

        let capacities: Vec<f64> = (0..n)
            .map(|_| {
                if idx % 7 == 6 {
                    1e3 // effectively unconstrained
                } else {
                    rng.gen_range(0.4..(6.0 * p as f64).min(10.0))
                }
            })
            .collect();

        out.push(CorpusInstance {
            name: format!("corpus[{idx}] N={n} M={m} K={k} G={g} {mode} {fronthaul}"),
            measurement,
            weights,
            fronthaul: FronthaulSpec { mode: fronthaul, capacities, sample_rate: 1.0 },
        });
    }
    out
}

/// Reconstructed room scenario: a 7 m x 2 m scene with four radars, a wall
/// that hides the right-hand area of interest from the two left radars, and
/// the stepped-frequency plan f0 = 0.1 GHz, B_R = 150 MHz, K = 3, M = 4.
pub fn room_scene(grid_nx: usize, grid_ny: usize, weight_spec: WeightSpec) -> SceneConfig {
    let scene_center = [3.5, 1.0];
    let spacing = SPEED_OF_LIGHT / 0.1e9 / 2.0;
    let tx_positions = [[0.0, 0.5], [2.0, 2.0], [5.0, 2.0], [4.0, 0.0]];
    let radars = tx_positions
        .iter()
        .map(|&tx| RadarNode {
            tx,
            rx: linear_array(tx, 4, spacing, scene_center),
            power: 1.0,
            noise_power: 1.0,
        })
        .collect();
    SceneConfig {
        extent: Rect { x_min: 0.0, x_max: 7.0, y_min: 0.0, y_max: 2.0 },
        grid_nx,
        grid_ny,
        radars,
        // Extended past the room so rays to the outboard array elements
        // cannot slip around the wall ends.
        obstacles: vec![Segment { a: [3.5, -8.0], b: [3.5, 10.0] }],
        f0_hz: 0.1e9,
        bandwidth_hz: 150e6,
        steps: 3,
        rcs_power: 1.0,
        weight_spec,
    }
}

pub const AOI_CENTER: [f64; 2] = [5.5, 1.0];
pub const AOI_RADIUS: f64 = 0.5;
pub const ALPHA: [f64; 4] = [0.75, 1.25, 1.25, 0.75];

/// Fronthaul capacities `C_n = B_C log2(1 + alpha_n 10^(snr/10))` with
/// `B_C = multiplier * f_s`.
pub fn room_capacities(snr_db: f64, b_c_multiplier: f64, sample_rate: f64) -> Vec<f64> {
    let snr = 10f64.powf(snr_db / 10.0);
    ALPHA
        .iter()
        .map(|&a| b_c_multiplier * sample_rate * (1.0 + a * snr).log2())
        .collect()
}

pub struct RoomSetup {
    pub measurement: MeasurementSet,
    pub weights: WeightMatrix,
}

pub fn room_setup(mode: QuantMode, aoi: bool) -> RoomSetup {
    let spec = if aoi {
        WeightSpec::Circle { center: AOI_CENTER, radius: AOI_RADIUS }
    } else {
        WeightSpec::Uniform
    };
    let cfg = room_scene(10, 3, spec);
    let measurement = build_measurement_set(&cfg, mode).expect("room scene");
    let weights = build_weights(&cfg).expect("room weights");
    RoomSetup { measurement, weights }
}
