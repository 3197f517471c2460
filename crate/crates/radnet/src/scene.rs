//! Scene geometry, frequency plan, channel gains, blockage, measurement
//! matrices and estimation weights.
//!
//! A scene is a rectangle divided into `nx * ny` equally spaced grid cells.
//! Each radar transmits a stepped-frequency waveform from a single antenna
//! and receives on `M` antennas; the complex measurement matrix maps grid
//! cell reflectivities to the stacked antenna/frequency samples of a radar.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::QuantMode;

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Cells closer than this (in meters) to any antenna are rejected; the
/// free-space gain (tau*c)^-2 blows up at zero range.
pub const MIN_ANTENNA_CLEARANCE_M: f64 = 0.01;

/// Axis-aligned scene rectangle in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

/// Line segment obstacle in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: [f64; 2],
    pub b: [f64; 2],
}

/// One radar node: a single transmit antenna and `M` receive antennas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadarNode {
    /// Transmit antenna position (m).
    pub tx: [f64; 2],
    /// Receive antenna positions (m); length M >= 1.
    pub rx: Vec<[f64; 2]>,
    /// Transmit power P_n (dimensionless).
    pub power: f64,
    /// Receive noise power sigma_n^2.
    pub noise_power: f64,
}

impl RadarNode {
    pub fn num_antennas(&self) -> usize {
        self.rx.len()
    }
}

/// Which grid cells the weighted bound emphasizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightSpec {
    /// Every cell weighted 1/G.
    Uniform,
    /// Cells whose centers fall inside the circle share the weight equally.
    Circle { center: [f64; 2], radius: f64 },
}

/// Declarative description of the scene and waveform plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub extent: Rect,
    /// Grid cells along x.
    pub grid_nx: usize,
    /// Grid cells along y.
    pub grid_ny: usize,
    pub radars: Vec<RadarNode>,
    #[serde(default)]
    pub obstacles: Vec<Segment>,
    /// Start of the sensing band (Hz).
    pub f0_hz: f64,
    /// Total sensing bandwidth B_R (Hz), shared equally among radars.
    pub bandwidth_hz: f64,
    /// Stepped frequencies per radar (K).
    pub steps: usize,
    /// Expected RCS power sigma^2 of a cell reflectivity.
    pub rcs_power: f64,
    pub weight_spec: WeightSpec,
}

impl SceneConfig {
    pub fn num_radars(&self) -> usize {
        self.radars.len()
    }

    pub fn num_cells(&self) -> usize {
        self.grid_nx * self.grid_ny
    }

    /// Center of cell `g`; cells are indexed row-major from the lower-left
    /// corner (x varies fastest).
    pub fn cell_center(&self, g: usize) -> [f64; 2] {
        let dx = (self.extent.x_max - self.extent.x_min) / self.grid_nx as f64;
        let dy = (self.extent.y_max - self.extent.y_min) / self.grid_ny as f64;
        let ix = g % self.grid_nx;
        let iy = g / self.grid_nx;
        [
            self.extent.x_min + (ix as f64 + 0.5) * dx,
            self.extent.y_min + (iy as f64 + 0.5) * dy,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_nx == 0 || self.grid_ny == 0 {
            return Err(Error::InvalidConfig("grid must have at least one cell".into()));
        }
        if self.steps == 0 {
            return Err(Error::InvalidConfig("steps (K) must be >= 1".into()));
        }
        if !(self.bandwidth_hz > 0.0) {
            return Err(Error::InvalidConfig("bandwidth must be positive".into()));
        }
        if !(self.extent.x_max > self.extent.x_min) || !(self.extent.y_max > self.extent.y_min) {
            return Err(Error::InvalidConfig("scene extent is empty".into()));
        }
        if self.radars.is_empty() {
            return Err(Error::InvalidConfig("at least one radar is required".into()));
        }
        if !(self.rcs_power > 0.0) {
            return Err(Error::InvalidConfig("rcs_power must be positive".into()));
        }
        for (n, r) in self.radars.iter().enumerate() {
            if r.rx.is_empty() {
                return Err(Error::InvalidConfig(format!("radar {n} has no receive antennas")));
            }
            if !(r.power > 0.0) {
                return Err(Error::InvalidConfig(format!("radar {n} power must be positive")));
            }
            if !(r.noise_power > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "radar {n} noise_power must be positive"
                )));
            }
        }
        if let WeightSpec::Circle { radius, .. } = self.weight_spec {
            if !(radius > 0.0) {
                return Err(Error::InvalidConfig("weight circle radius must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Nonnegative per-cell estimation weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    pub w: Vec<f64>,
}

impl WeightMatrix {
    pub fn uniform(g: usize) -> Self {
        WeightMatrix { w: vec![1.0 / g as f64; g] }
    }

    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.w.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig(format!("weights sum to {sum}, expected 1")));
        }
        if self.w.iter().any(|&w| !(0.0..=1.0).contains(&w)) {
            return Err(Error::InvalidConfig("weights must lie in [0,1]".into()));
        }
        Ok(())
    }
}

/// Per-radar measurement matrices and signal/noise covariances.
///
/// Row `i = m*K + k` of `a_blocks[n]` holds the sample of antenna `m` at
/// step frequency `k` (k varies fastest, matching column-wise vectorization
/// of the K x M signal matrix).
#[derive(Debug, Clone)]
pub struct MeasurementSet {
    /// N complex KM_n x G measurement matrices.
    pub a_blocks: Vec<DMatrix<Complex64>>,
    /// Vertical stack of the blocks in radar order.
    pub a_stacked: DMatrix<Complex64>,
    /// N Hermitian-PSD signal covariances K_n; diagonal in AFVQ mode.
    pub k_blocks: Vec<DMatrix<Complex64>>,
    /// Receive noise power sigma_n^2 per radar (Omega_n = sigma_n^2 I).
    pub noise_power: Vec<f64>,
    pub mode: QuantMode,
}

impl MeasurementSet {
    /// Assembles a measurement set directly from raw per-radar matrices.
    /// `K_n = A_n A_n^H sigma^2 + sigma_n^2 I`, reduced to its diagonal in
    /// AFVQ mode.
    pub fn from_blocks(
        a_blocks: Vec<DMatrix<Complex64>>,
        rcs_power: f64,
        noise_power: Vec<f64>,
        mode: QuantMode,
    ) -> Result<Self> {
        if a_blocks.is_empty() || a_blocks.len() != noise_power.len() {
            return Err(Error::InvalidArgument(
                "need one noise power per measurement block".into(),
            ));
        }
        let g = a_blocks[0].ncols();
        if a_blocks.iter().any(|a| a.ncols() != g) {
            return Err(Error::InvalidArgument("blocks must share the column count".into()));
        }
        if noise_power.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidArgument("noise powers must be positive".into()));
        }
        let k_blocks = a_blocks
            .iter()
            .zip(&noise_power)
            .map(|(a, &s2)| signal_covariance(a, rcs_power, s2, mode))
            .collect();
        let a_stacked = stack_blocks(&a_blocks, g);
        Ok(MeasurementSet { a_blocks, a_stacked, k_blocks, noise_power, mode })
    }

    pub fn num_radars(&self) -> usize {
        self.a_blocks.len()
    }

    pub fn num_cells(&self) -> usize {
        self.a_stacked.ncols()
    }

    /// Rows of each per-radar block (K*M_n).
    pub fn block_dims(&self) -> Vec<usize> {
        self.a_blocks.iter().map(|a| a.nrows()).collect()
    }

    /// True for cells observed by at least one radar (nonzero column of A).
    pub fn observed_mask(&self) -> Vec<bool> {
        (0..self.num_cells())
            .map(|g| self.a_stacked.column(g).iter().any(|z| z.norm_sqr() > 0.0))
            .collect()
    }
}

fn stack_blocks(blocks: &[DMatrix<Complex64>], g: usize) -> DMatrix<Complex64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, g);
    let mut r0 = 0;
    for b in blocks {
        out.view_mut((r0, 0), (b.nrows(), g)).copy_from(b);
        r0 += b.nrows();
    }
    out
}

fn signal_covariance(
    a: &DMatrix<Complex64>,
    rcs_power: f64,
    noise_power: f64,
    mode: QuantMode,
) -> DMatrix<Complex64> {
    let p = a.nrows();
    let mut k = a * a.adjoint() * Complex64::new(rcs_power, 0.0);
    for i in 0..p {
        k[(i, i)] += Complex64::new(noise_power, 0.0);
    }
    // Kill rounding asymmetry from the Gram product.
    let kh = k.adjoint();
    k = (k + kh) * Complex64::new(0.5, 0.0);
    match mode {
        QuantMode::Rvq => k,
        QuantMode::Afvq => DMatrix::from_fn(p, p, |i, j| {
            if i == j {
                Complex64::new(k[(i, i)].re, 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        }),
    }
}

/// Step frequency of radar `n` (0-based) at step `k` (0-based):
/// `f0 + n*B_R/N + k*B_R/(N*K)`. Plans of distinct radars are disjoint.
pub fn frequency_plan(n: usize, k: usize, cfg: &SceneConfig) -> Result<f64> {
    let num_radars = cfg.num_radars();
    if n >= num_radars {
        return Err(Error::InvalidArgument(format!(
            "radar index {n} out of range (N={num_radars})"
        )));
    }
    if k >= cfg.steps {
        return Err(Error::InvalidArgument(format!(
            "step index {k} out of range (K={})",
            cfg.steps
        )));
    }
    let per_radar = cfg.bandwidth_hz / num_radars as f64;
    Ok(cfg.f0_hz + n as f64 * per_radar + k as f64 * per_radar / cfg.steps as f64)
}

/// Round-trip propagation delay tx -> cell -> rx antenna `m`, in seconds.
pub fn round_trip_delay(radar: &RadarNode, m: usize, cell_center: [f64; 2]) -> f64 {
    let rx = radar.rx[m];
    (dist(radar.tx, cell_center) + dist(cell_center, rx)) / SPEED_OF_LIGHT
}

fn dist(p: [f64; 2], q: [f64; 2]) -> f64 {
    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
}

/// Free-space two-way channel attenuation `h = (tau*c)^-2` with unit
/// proportionality constant. Rejects degenerate paths shorter than twice
/// the antenna clearance.
pub fn channel_gain(tau: f64) -> Result<f64> {
    let path = tau * SPEED_OF_LIGHT;
    if path <= 2.0 * MIN_ANTENNA_CLEARANCE_M {
        return Err(Error::InvalidConfig(format!(
            "round-trip path {path:.4} m is inside the antenna clearance; \
             a grid cell overlaps a radar"
        )));
    }
    Ok(path.powi(-2))
}

/// True iff the open segment p-q properly crosses any obstacle segment.
pub fn segment_blocked(p: [f64; 2], q: [f64; 2], obstacles: &[Segment]) -> bool {
    obstacles.iter().any(|s| segments_properly_intersect(p, q, s.a, s.b))
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn segments_properly_intersect(p: [f64; 2], q: [f64; 2], a: [f64; 2], b: [f64; 2]) -> bool {
    let d1 = orient(p, q, a);
    let d2 = orient(p, q, b);
    let d3 = orient(a, b, p);
    let d4 = orient(a, b, q);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    // Collinear overlap of positive length also counts as blocked.
    if d1 == 0.0 && d2 == 0.0 && d3 == 0.0 && d4 == 0.0 {
        let (lo_p, hi_p) = proj_range(p, q, a, b);
        return hi_p > lo_p;
    }
    false
}

fn proj_range(p: [f64; 2], q: [f64; 2], a: [f64; 2], b: [f64; 2]) -> (f64, f64) {
    // Project all four collinear points onto the dominant axis of p-q.
    let axis = if (q[0] - p[0]).abs() >= (q[1] - p[1]).abs() { 0 } else { 1 };
    let (p1, q1) = (p[axis].min(q[axis]), p[axis].max(q[axis]));
    let (a1, b1) = (a[axis].min(b[axis]), a[axis].max(b[axis]));
    (p1.max(a1), q1.min(b1))
}

/// Builds the per-radar measurement matrices and signal covariances.
///
/// Entry `(i, g)` of block `n` is `sqrt(P_n) * h * exp(-j 2 pi f_{n,k} tau)`
/// with `i = m*K + k`; the gain is zero when either the tx-cell or cell-rx
/// path is blocked by an obstacle.
pub fn build_measurement_set(cfg: &SceneConfig, mode: QuantMode) -> Result<MeasurementSet> {
    cfg.validate()?;
    let g_total = cfg.num_cells();
    let k_steps = cfg.steps;
    let mut a_blocks = Vec::with_capacity(cfg.num_radars());

    for (n, radar) in cfg.radars.iter().enumerate() {
        let m_ant = radar.num_antennas();
        let mut a = DMatrix::zeros(k_steps * m_ant, g_total);
        for g in 0..g_total {
            let cell = cfg.cell_center(g);
            if dist(radar.tx, cell) < MIN_ANTENNA_CLEARANCE_M {
                return Err(Error::InvalidConfig(format!(
                    "cell {g} lies within {MIN_ANTENNA_CLEARANCE_M} m of radar {n}'s tx antenna"
                )));
            }
            let tx_blocked = segment_blocked(radar.tx, cell, &cfg.obstacles);
            for m in 0..m_ant {
                if dist(cell, radar.rx[m]) < MIN_ANTENNA_CLEARANCE_M {
                    return Err(Error::InvalidConfig(format!(
                        "cell {g} lies within {MIN_ANTENNA_CLEARANCE_M} m of radar {n}'s rx \
                         antenna {m}"
                    )));
                }
                if tx_blocked || segment_blocked(cell, radar.rx[m], &cfg.obstacles) {
                    continue; // gain 0: leave the K entries of this (m, g) pair at zero
                }
                let tau = round_trip_delay(radar, m, cell);
                let h = channel_gain(tau)?;
                let amp = radar.power.sqrt() * h;
                for k in 0..k_steps {
                    let f = frequency_plan(n, k, cfg)?;
                    let phase = -2.0 * std::f64::consts::PI * f * tau;
                    a[(m * k_steps + k, g)] = Complex64::from_polar(amp, phase);
                }
            }
        }
        a_blocks.push(a);
    }

    let noise = cfg.radars.iter().map(|r| r.noise_power).collect();
    MeasurementSet::from_blocks(a_blocks, cfg.rcs_power, noise, mode)
}

/// Uniform linear array of `elements` receive antennas centered on `tx`,
/// broadside toward `toward` (the array axis is perpendicular to that
/// direction).
pub fn linear_array(
    tx: [f64; 2],
    elements: usize,
    spacing: f64,
    toward: [f64; 2],
) -> Vec<[f64; 2]> {
    let dir = [toward[0] - tx[0], toward[1] - tx[1]];
    let norm = (dir[0] * dir[0] + dir[1] * dir[1]).sqrt();
    let perp = if norm > 0.0 { [-dir[1] / norm, dir[0] / norm] } else { [0.0, 1.0] };
    (0..elements)
        .map(|i| {
            let o = (i as f64 - (elements as f64 - 1.0) / 2.0) * spacing;
            [tx[0] + o * perp[0], tx[1] + o * perp[1]]
        })
        .collect()
}

/// Builds the per-cell weight vector from the scene's weight spec.
pub fn build_weights(cfg: &SceneConfig) -> Result<WeightMatrix> {
    let g_total = cfg.num_cells();
    let w = match cfg.weight_spec {
        WeightSpec::Uniform => WeightMatrix::uniform(g_total),
        WeightSpec::Circle { center, radius } => {
            let inside: Vec<usize> = (0..g_total)
                .filter(|&g| dist(cfg.cell_center(g), center) <= radius)
                .collect();
            if inside.is_empty() {
                return Err(Error::InvalidConfig(
                    "weight circle covers no grid cell centers".into(),
                ));
            }
            let mut w = vec![0.0; g_total];
            for &g in &inside {
                w[g] = 1.0 / inside.len() as f64;
            }
            WeightMatrix { w }
        }
    };
    w.validate()?;
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_cfg(n_radars: usize, m_ant: usize, k_steps: usize) -> SceneConfig {
        let radars = (0..n_radars)
            .map(|n| RadarNode {
                tx: [n as f64 * 3.0, -5.0],
                rx: (0..m_ant).map(|m| [n as f64 * 3.0 + 0.1 * m as f64, -5.0]).collect(),
                power: 1.0,
                noise_power: 1.0,
            })
            .collect();
        SceneConfig {
            extent: Rect { x_min: 0.0, x_max: 4.0, y_min: 0.0, y_max: 2.0 },
            grid_nx: 2,
            grid_ny: 2,
            radars,
            obstacles: vec![],
            f0_hz: 0.1e9,
            bandwidth_hz: 150e6,
            steps: k_steps,
            rcs_power: 1.0,
            weight_spec: WeightSpec::Uniform,
        }
    }

    #[test]
    fn frequency_plan_matches_hand_values() {
        let cfg = test_cfg(4, 1, 3);
        // First radar, first step: the band start.
        assert_eq!(frequency_plan(0, 0, &cfg).unwrap(), 0.1e9);
        // Second radar, first step: f0 + B_R/N.
        assert_eq!(frequency_plan(1, 0, &cfg).unwrap(), 0.1375e9);
        // First radar, second step: f0 + B_R/(N*K).
        assert_eq!(frequency_plan(0, 1, &cfg).unwrap(), 0.1125e9);
    }

    #[test]
    fn frequency_plan_rejects_out_of_range() {
        let cfg = test_cfg(2, 1, 2);
        assert!(frequency_plan(2, 0, &cfg).is_err());
        assert!(frequency_plan(0, 2, &cfg).is_err());
    }

    #[test]
    fn frequency_plans_are_disjoint_across_radars() {
        let cfg = test_cfg(4, 1, 3);
        let per_radar = cfg.bandwidth_hz / 4.0;
        for n in 0..4 {
            let lo = cfg.f0_hz + n as f64 * per_radar;
            for k in 0..3 {
                let f = frequency_plan(n, k, &cfg).unwrap();
                assert!(f >= lo && f < lo + per_radar);
                assert!(f >= cfg.f0_hz && f < cfg.f0_hz + cfg.bandwidth_hz);
            }
        }
    }

    #[test]
    fn round_trip_delay_examples() {
        let radar = RadarNode {
            tx: [0.0, 0.0],
            rx: vec![[0.0, 0.0], [6.0, 0.0]],
            power: 1.0,
            noise_power: 1.0,
        };
        let tau = round_trip_delay(&radar, 0, [SPEED_OF_LIGHT, 0.0]);
        assert!((tau - 2.0).abs() < 1e-12);
        // 3-4-5 triangle: 5 m out, 5 m back.
        let tau = round_trip_delay(&radar, 0, [3.0, 4.0]);
        assert!((tau - 10.0 / SPEED_OF_LIGHT).abs() < 1e-24);
        // Two different 5 m legs.
        let tau = round_trip_delay(&radar, 1, [3.0, 4.0]);
        assert!((tau - 10.0 / SPEED_OF_LIGHT).abs() < 1e-24);
    }

    #[test]
    fn channel_gain_is_inverse_square() {
        assert!((channel_gain(1.0 / SPEED_OF_LIGHT).unwrap() - 1.0).abs() < 1e-12);
        assert!((channel_gain(2.0 / SPEED_OF_LIGHT).unwrap() - 0.25).abs() < 1e-12);
        assert!((channel_gain(10.0 / SPEED_OF_LIGHT).unwrap() - 0.01).abs() < 1e-12);
        assert!(channel_gain(0.005 / SPEED_OF_LIGHT).is_err());
    }

    #[test]
    fn segment_blocked_examples() {
        let wall = Segment { a: [1.0, -1.0], b: [1.0, 1.0] };
        assert!(segment_blocked([0.0, 0.0], [2.0, 0.0], &[wall]));
        let far = Segment { a: [3.0, -1.0], b: [3.0, 1.0] };
        assert!(!segment_blocked([0.0, 0.0], [2.0, 0.0], &[far]));
        assert!(!segment_blocked([0.0, 0.0], [2.0, 0.0], &[]));
    }

    #[test]
    fn segment_touching_endpoint_is_not_proper() {
        let wall = Segment { a: [1.0, 0.0], b: [1.0, 1.0] };
        assert!(!segment_blocked([0.0, 0.0], [2.0, 0.0], &[wall]));
    }

    #[test]
    fn single_entry_measurement() {
        // One radar, M=K=G=1, tx/rx placed so the round trip is exactly 1 m
        // at a frequency whose phase is a whole number of cycles.
        let mut cfg = test_cfg(1, 1, 1);
        cfg.extent = Rect { x_min: -0.25, x_max: 0.25, y_min: 0.25, y_max: 0.75 };
        cfg.grid_nx = 1;
        cfg.grid_ny = 1;
        cfg.radars[0].tx = [0.0, 0.0];
        cfg.radars[0].rx = vec![[0.0, 0.0]];
        cfg.f0_hz = SPEED_OF_LIGHT; // 1 m round trip -> phase = -2*pi
        let ms = build_measurement_set(&cfg, QuantMode::Rvq).unwrap();
        let a = ms.a_blocks[0][(0, 0)];
        assert!((a.re - 1.0).abs() < 1e-9, "entry {a}");
        assert!(a.im.abs() < 1e-9);
        // K = sigma^2 |a|^2 + noise = 2.
        assert!((ms.k_blocks[0][(0, 0)].re - 2.0).abs() < 1e-9);
    }

    #[test]
    fn entry_modulus_is_power_times_gain() {
        let mut cfg = test_cfg(2, 2, 2);
        cfg.radars[0].power = 4.0;
        let ms = build_measurement_set(&cfg, QuantMode::Rvq).unwrap();
        for (n, radar) in cfg.radars.iter().enumerate() {
            for g in 0..cfg.num_cells() {
                let cell = cfg.cell_center(g);
                for m in 0..radar.num_antennas() {
                    let tau = round_trip_delay(radar, m, cell);
                    let expect = radar.power.sqrt() * channel_gain(tau).unwrap();
                    for k in 0..cfg.steps {
                        let got = ms.a_blocks[n][(m * cfg.steps + k, g)].norm();
                        assert!((got - expect).abs() <= 1e-12 * expect.max(1.0));
                    }
                }
            }
        }
    }

    #[test]
    fn blocked_cell_zeroes_one_radars_column() {
        let mut cfg = test_cfg(2, 1, 1);
        // Radar 0 at x=0, radar 1 at x=3 (both at y=-5). Wall below cell 0
        // only in front of radar 0.
        cfg.radars[0].tx = [1.0, -5.0];
        cfg.radars[0].rx = vec![[1.0, -5.0]];
        cfg.radars[1].tx = [1.0, 5.0];
        cfg.radars[1].rx = vec![[1.0, 5.0]];
        cfg.obstacles = vec![Segment { a: [-1.0, -1.0], b: [3.0, -1.0] }];
        let ms = build_measurement_set(&cfg, QuantMode::Rvq).unwrap();
        // Cell 0 center (1.0, 0.5): the wall at y=-1 cuts radar 0's path.
        assert_eq!(ms.a_blocks[0][(0, 0)], Complex64::new(0.0, 0.0));
        assert!(ms.a_blocks[1][(0, 0)].norm() > 0.0);
    }

    #[test]
    fn afvq_covariance_is_diagonal_of_rvq() {
        let cfg = test_cfg(2, 2, 2);
        let rvq = build_measurement_set(&cfg, QuantMode::Rvq).unwrap();
        let afvq = build_measurement_set(&cfg, QuantMode::Afvq).unwrap();
        for n in 0..2 {
            let kr = &rvq.k_blocks[n];
            let ka = &afvq.k_blocks[n];
            for i in 0..kr.nrows() {
                for j in 0..kr.ncols() {
                    if i == j {
                        assert!((kr[(i, i)].re - ka[(i, i)].re).abs() < 1e-12);
                    } else {
                        assert_eq!(ka[(i, j)], Complex64::new(0.0, 0.0));
                    }
                }
            }
        }
    }

    #[test]
    fn signal_covariance_hermitian_and_psd() {
        let cfg = test_cfg(3, 2, 3);
        let ms = build_measurement_set(&cfg, QuantMode::Rvq).unwrap();
        for (n, k) in ms.k_blocks.iter().enumerate() {
            let herm_gap = (k - k.adjoint()).camax();
            assert!(herm_gap <= 1e-12 * k.camax());
            let eig = k.clone().symmetric_eigenvalues();
            let min_eig = eig.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(
                min_eig >= ms.noise_power[n] - 1e-9 * k.camax(),
                "min eigenvalue {min_eig}"
            );
        }
    }

    #[test]
    fn stacked_matrix_matches_blocks() {
        let cfg = test_cfg(3, 2, 2);
        let ms = build_measurement_set(&cfg, QuantMode::Rvq).unwrap();
        let mut r0 = 0;
        for b in &ms.a_blocks {
            assert_eq!(ms.a_stacked.view((r0, 0), (b.nrows(), b.ncols())), *b);
            r0 += b.nrows();
        }
        assert_eq!(r0, ms.a_stacked.nrows());
    }

    #[test]
    fn weights_uniform_and_circle() {
        let mut cfg = test_cfg(1, 1, 1);
        let w = build_weights(&cfg).unwrap();
        assert_eq!(w.w, vec![0.25; 4]);

        // Circle covering the two left cells (centers x=1.0, y in {0.5,1.5}).
        cfg.weight_spec = WeightSpec::Circle { center: [1.0, 1.0], radius: 0.75 };
        let w = build_weights(&cfg).unwrap();
        assert_eq!(w.w, vec![0.5, 0.0, 0.5, 0.0]);

        // Circle covering everything reduces to uniform.
        cfg.weight_spec = WeightSpec::Circle { center: [2.0, 1.0], radius: 10.0 };
        let w = build_weights(&cfg).unwrap();
        assert_eq!(w.w, vec![0.25; 4]);

        // Empty area of interest is a configuration error.
        cfg.weight_spec = WeightSpec::Circle { center: [100.0, 100.0], radius: 0.1 };
        assert!(build_weights(&cfg).is_err());
    }

    #[test]
    fn cell_too_close_to_antenna_is_rejected() {
        let mut cfg = test_cfg(1, 1, 1);
        cfg.grid_nx = 1;
        cfg.grid_ny = 1;
        // Cell center (2,1); park the radar on top of it.
        cfg.radars[0].tx = [2.0, 1.0];
        cfg.radars[0].rx = vec![[2.0, 1.0]];
        assert!(build_measurement_set(&cfg, QuantMode::Rvq).is_err());
    }
}
