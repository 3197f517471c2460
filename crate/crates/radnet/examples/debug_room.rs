use radnet::aco::{optimize, AcoConfig, FronthaulSpec};
use radnet::scene::{build_measurement_set, build_weights, linear_array, RadarNode, Rect, SceneConfig, Segment, WeightSpec, SPEED_OF_LIGHT};
use radnet::{FronthaulMode, QuantMode};

fn main() {
    let scene_center = [3.5, 1.0];
    let spacing = SPEED_OF_LIGHT / 0.1e9 / 2.0;
    let tx_positions = [[0.0, 0.5], [2.0, 2.0], [5.0, 2.0], [4.0, 0.0]];
    let radars = tx_positions
        .iter()
        .map(|&tx| RadarNode { tx, rx: linear_array(tx, 4, spacing, scene_center), power: 1.0, noise_power: 1.0 })
        .collect();
    let cfg = SceneConfig {
        extent: Rect { x_min: 0.0, x_max: 7.0, y_min: 0.0, y_max: 2.0 },
        grid_nx: 10,
        grid_ny: 3,
        radars,
        obstacles: vec![Segment { a: [3.5, -8.0], b: [3.5, 10.0] }],
        f0_hz: 0.1e9,
        bandwidth_hz: 150e6,
        steps: 3,
        rcs_power: 1.0,
        weight_spec: WeightSpec::Circle { center: [5.5, 1.0], radius: 0.5 },
    };
    let mode = std::env::args().nth(1).map(|s| if s == "rvq" { QuantMode::Rvq } else { QuantMode::Afvq }).unwrap_or(QuantMode::Afvq);
    let meas = build_measurement_set(&cfg, mode).unwrap();
    let w = build_weights(&cfg).unwrap();
    let snr = 10f64.powf(0.0 / 10.0);
    let caps: Vec<f64> = [0.75, 1.25, 1.25, 0.75].iter().map(|&a| 5.0 * (1.0 + a * snr).log2()).collect();
    eprintln!("caps {caps:?}");
    let fh = FronthaulSpec { mode: FronthaulMode::Shared, capacities: caps, sample_rate: 1.0 };
    match optimize(&meas, &w, &fh, &AcoConfig::default()) {
        Ok(run) => eprintln!("ok: obj {} iters {}", run.solution.objective, run.trace.records.len()),
        Err(e) => eprintln!("abort: {e}"),
    }
}
