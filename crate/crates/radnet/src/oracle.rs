//! Independent verification tools: closed-form scalar optima, brute-force
//! grid search on desk-scale instances, Monte-Carlo estimator experiments,
//! and finite-difference gradient checks.
//!
//! Everything here deliberately avoids the solver's code paths so it can
//! serve as an oracle for them.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn std_normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

use crate::error::{Error, Result};
use crate::estimation::{pseudo_inverse, DEFAULT_PINV_RTOL};
use crate::ratemodel::{checked_cholesky, DistortionBlock};
use crate::scene::{MeasurementSet, WeightMatrix};
use crate::{FronthaulMode, QuantMode};

/// Desk-scale reduction: each radar contributes one scalar observation of
/// a single grid cell with weight 1.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScalarInstance {
    /// Per-radar squared channel gains |a_n|^2.
    pub gains: Vec<f64>,
    /// Expected RCS power sigma^2.
    pub rcs_power: f64,
    /// Per-radar noise powers sigma_n^2.
    pub noise: Vec<f64>,
    /// Fronthaul capacities C_n in bits/s.
    pub capacities: Vec<f64>,
    pub sample_rate: f64,
    pub fronthaul: FronthaulMode,
}

impl ScalarInstance {
    pub fn num_radars(&self) -> usize {
        self.gains.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_radars();
        if n == 0 || self.noise.len() != n || self.capacities.len() != n {
            return Err(Error::InvalidArgument("scalar instance field lengths disagree".into()));
        }
        let pos = self.gains.iter().chain(&self.noise).chain(&self.capacities);
        if pos.clone().any(|&v| !(v > 0.0)) || !(self.rcs_power > 0.0) || !(self.sample_rate > 0.0)
        {
            return Err(Error::InvalidArgument("scalar instance values must be positive".into()));
        }
        Ok(())
    }

    /// Effective signal-plus-noise power kappa_n = |a_n|^2 sigma^2 + sigma_n^2.
    pub fn kappa(&self, n: usize) -> f64 {
        self.gains[n] * self.rcs_power + self.noise[n]
    }

    /// The equivalent measurement set (real positive amplitudes).
    pub fn measurement_set(&self, mode: QuantMode) -> Result<MeasurementSet> {
        let blocks = self
            .gains
            .iter()
            .map(|&g| DMatrix::from_element(1, 1, Complex64::new(g.sqrt(), 0.0)))
            .collect();
        MeasurementSet::from_blocks(blocks, self.rcs_power, self.noise.clone(), mode)
    }

    /// Scalar rate of radar `n` at distortion `d`.
    pub fn rate(&self, n: usize, d: f64) -> f64 {
        self.sample_rate * ((self.kappa(n) + d) / d).log2()
    }

    /// Surrogate objective at per-radar distortions `d` (weight 1).
    pub fn objective(&self, d: &[f64]) -> f64 {
        let total_gain: f64 = self.gains.iter().sum();
        let mut acc = 0.0;
        for n in 0..self.num_radars() {
            acc += self.gains[n] * (d[n] + self.noise[n]);
        }
        acc / (total_gain * total_gain)
    }
}

/// Closed-form optimum of a single-radar dedicated instance: the rate
/// constraint is active, so `d* = kappa / (2^(C/f_s) - 1)` and the
/// objective is `(d* + sigma_w^2) / |a|^2`.
pub fn closed_form_single(inst: &ScalarInstance) -> Result<(f64, f64)> {
    inst.validate()?;
    if inst.num_radars() != 1 || inst.fronthaul != FronthaulMode::Dedicated {
        return Err(Error::InvalidArgument(
            "closed form requires a single radar with a dedicated link".into(),
        ));
    }
    let denom = (inst.capacities[0] / inst.sample_rate).exp2() - 1.0;
    let d = if denom.is_infinite() { 0.0 } else { inst.kappa(0) / denom };
    let objective = (d + inst.noise[0]) / inst.gains[0];
    Ok((d, objective))
}

/// Grid resolution of the brute-force search.
#[derive(Debug, Clone, Copy)]
pub struct BruteForceGrid {
    /// Log-spaced points per distortion axis, spanning
    /// `[d_closed/100, 100 d_closed]` around each radar's closed form.
    pub distortion_points: usize,
    /// Simplex step for the share grid.
    pub share_step: f64,
}

impl Default for BruteForceGrid {
    fn default() -> Self {
        BruteForceGrid { distortion_points: 400, share_step: 0.01 }
    }
}

#[derive(Debug, Clone)]
pub struct BruteForceResult {
    pub distortion: Vec<f64>,
    pub shares: Vec<f64>,
    pub objective: f64,
}

/// Exhaustive search of the surrogate objective over log-spaced distortion
/// grids and a simplex grid of shares, keeping only points whose true rate
/// fits the allocated budget. Restricted to N <= 3 radars.
pub fn brute_force(inst: &ScalarInstance, grid: &BruteForceGrid) -> Result<BruteForceResult> {
    inst.validate()?;
    let n = inst.num_radars();
    if n > 3 {
        return Err(Error::InvalidArgument("brute force supports at most 3 radars".into()));
    }
    if grid.distortion_points < 2 || !(grid.share_step > 0.0 && grid.share_step <= 1.0) {
        return Err(Error::InvalidArgument("degenerate brute-force grid".into()));
    }

    // Per-radar distortion grids around the dedicated closed form.
    let grids: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let single = ScalarInstance {
                gains: vec![inst.gains[i]],
                rcs_power: inst.rcs_power,
                noise: vec![inst.noise[i]],
                capacities: vec![inst.capacities[i]],
                sample_rate: inst.sample_rate,
                fronthaul: FronthaulMode::Dedicated,
            };
            let (d_star, _) = closed_form_single(&single)?;
            let center = if d_star > 0.0 { d_star } else { inst.kappa(i) };
            let lo = center / 100.0;
            let hi = center * 100.0;
            let m = grid.distortion_points;
            Ok((0..m)
                .map(|j| lo * (hi / lo).powf(j as f64 / (m - 1) as f64))
                .collect())
        })
        .collect::<Result<_>>()?;

    let allocations: Vec<Vec<f64>> = match inst.fronthaul {
        FronthaulMode::Dedicated => vec![vec![1.0; n]],
        FronthaulMode::Shared => simplex_grid(n, grid.share_step),
    };

    let mut best: Option<BruteForceResult> = None;
    for alloc in &allocations {
        // The objective increases in every d_n, so the cheapest feasible
        // grid point per radar is optimal for this allocation.
        let mut d = Vec::with_capacity(n);
        let mut feasible = true;
        for i in 0..n {
            let budget = alloc[i] * inst.capacities[i];
            match grids[i].iter().find(|&&dg| inst.rate(i, dg) <= budget) {
                Some(&dg) => d.push(dg),
                None => {
                    feasible = false;
                    break;
                }
            }
        }
        if !feasible {
            continue;
        }
        let objective = inst.objective(&d);
        if best.as_ref().map_or(true, |b| objective < b.objective) {
            best = Some(BruteForceResult { distortion: d, shares: alloc.clone(), objective });
        }
    }
    best.ok_or_else(|| Error::Search("no feasible grid point; widen the brute-force grid".into()))
}

fn simplex_grid(n: usize, step: f64) -> Vec<Vec<f64>> {
    // Points with sum a = 1; giving a radar more time never hurts, so the
    // optimum lies on this face of the simplex.
    let m = (1.0 / step).round() as usize;
    let mut out = Vec::new();
    match n {
        1 => out.push(vec![1.0]),
        2 => {
            for i in 0..=m {
                let a1 = i as f64 * step;
                out.push(vec![a1, 1.0 - a1]);
            }
        }
        3 => {
            for i in 0..=m {
                for j in 0..=(m - i) {
                    let a1 = i as f64 * step;
                    let a2 = j as f64 * step;
                    out.push(vec![a1, a2, 1.0 - a1 - a2]);
                }
            }
        }
        _ => unreachable!(),
    }
    out
}

/// Which linear estimator the Monte-Carlo experiment applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    /// x = A+ y.
    Ols,
    /// x = (A^H S^-1 A)^+ A^H S^-1 y with S = D + Omega.
    Gls,
}

/// Draws `trials` quantized observations `y = A x + omega + z`, applies the
/// requested estimator, and returns the empirical weighted MSE
/// `sum_g w_g avg |x_g - x_g|^2`.
///
/// Per-trial RNG streams are derived from `(seed, trial)`, so the result is
/// independent of evaluation order and reproducible bit-for-bit.
pub fn simulate_and_estimate(
    measurement: &MeasurementSet,
    distortion: &[DistortionBlock],
    weights: &WeightMatrix,
    x_true: &DVector<Complex64>,
    trials: usize,
    seed: u64,
    estimator: Estimator,
) -> Result<f64> {
    if trials == 0 {
        return Err(Error::InvalidArgument("at least one trial is required".into()));
    }
    let g = measurement.num_cells();
    if x_true.len() != g || weights.w.len() != g {
        return Err(Error::InvalidArgument("x_true/weights length mismatch".into()));
    }
    if distortion.len() != measurement.num_radars() {
        return Err(Error::InvalidArgument("one distortion block per radar".into()));
    }
    let dims = measurement.block_dims();
    let total: usize = dims.iter().sum();

    // Per-block distortion sampling factors L with L L^H = D.
    let mut z_factors = Vec::with_capacity(distortion.len());
    for d in distortion {
        z_factors.push(sampling_factor(d)?);
    }

    // Estimator matrix applied to the raw stacked observation.
    let est = match estimator {
        Estimator::Ols => pseudo_inverse(&measurement.a_stacked, DEFAULT_PINV_RTOL)?,
        Estimator::Gls => {
            // Whiten blockwise, then B+ applied to the whitened observation.
            let mut b = measurement.a_stacked.clone();
            let mut li_blocks = Vec::with_capacity(dims.len());
            let mut r0 = 0;
            for (n, &p) in dims.iter().enumerate() {
                let mut sigma = distortion[n].to_matrix();
                for i in 0..p {
                    sigma[(i, i)] += Complex64::new(measurement.noise_power[n], 0.0);
                }
                let chol = checked_cholesky(&sigma)
                    .ok_or_else(|| Error::Numeric("D + Omega is singular".into()))?;
                let mut block = b.view((r0, 0), (p, g)).clone_owned();
                chol.l().solve_lower_triangular_mut(&mut block);
                b.view_mut((r0, 0), (p, g)).copy_from(&block);
                // Explicit L^-1 for the estimator matrix.
                let mut li = DMatrix::identity(p, p);
                chol.l().solve_lower_triangular_mut(&mut li);
                li_blocks.push(li);
                r0 += p;
            }
            let b_pinv = pseudo_inverse(&b, DEFAULT_PINV_RTOL)?;
            // est = B+ * blockdiag(L^-1).
            let mut est = DMatrix::zeros(g, total);
            let mut c0 = 0;
            for (li, &p) in li_blocks.iter().zip(&dims) {
                let cols = b_pinv.view((0, c0), (g, p)) * li;
                est.view_mut((0, c0), (g, p)).copy_from(&cols);
                c0 += p;
            }
            est
        }
    };

    let clean = &measurement.a_stacked * x_true;
    let mut sum = 0.0;
    let mut comp = 0.0; // Kahan compensation
    let mut y = DVector::zeros(total);
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(trial as u64 + 1);
        y.copy_from(&clean);
        let mut r0 = 0;
        for (n, &p) in dims.iter().enumerate() {
            let sw = (measurement.noise_power[n] / 2.0).sqrt();
            for i in 0..p {
                y[r0 + i] += Complex64::new(
                    sw * std_normal(&mut rng),
                    sw * std_normal(&mut rng),
                );
            }
            match &z_factors[n] {
                SamplingFactor::Diagonal(d) => {
                    for i in 0..p {
                        let s = (d[i] / 2.0).sqrt();
                        y[r0 + i] += Complex64::new(
                            s * std_normal(&mut rng),
                            s * std_normal(&mut rng),
                        );
                    }
                }
                SamplingFactor::Full(l) => {
                    let v = DVector::from_fn(p, |_, _| {
                        Complex64::new(
                            (0.5f64).sqrt() * std_normal(&mut rng),
                            (0.5f64).sqrt() * std_normal(&mut rng),
                        )
                    });
                    let z = l * v;
                    for i in 0..p {
                        y[r0 + i] += z[i];
                    }
                }
            }
            r0 += p;
        }
        let x_hat = &est * &y;
        let mut werr = 0.0;
        for gi in 0..g {
            werr += weights.w[gi] * (x_hat[gi] - x_true[gi]).norm_sqr();
        }
        // Kahan summation keeps the accumulation order-insensitive.
        let t = werr - comp;
        let s = sum + t;
        comp = (s - sum) - t;
        sum = s;
    }
    Ok(sum / trials as f64)
}

enum SamplingFactor {
    Diagonal(DVector<f64>),
    Full(DMatrix<Complex64>),
}

fn sampling_factor(d: &DistortionBlock) -> Result<SamplingFactor> {
    match d {
        DistortionBlock::Afvq(v) => {
            if v.iter().any(|&x| x < 0.0) {
                return Err(Error::Domain("negative distortion variance".into()));
            }
            Ok(SamplingFactor::Diagonal(v.clone()))
        }
        DistortionBlock::Rvq(m) => {
            if let Some(chol) = checked_cholesky(m) {
                return Ok(SamplingFactor::Full(chol.l().into()));
            }
            // PSD but singular: factor through the eigendecomposition.
            let eig = nalgebra::SymmetricEigen::new(m.clone());
            let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
            if min < -1e-9 * m.camax().max(1.0) {
                return Err(Error::Domain("distortion covariance is indefinite".into()));
            }
            let p = m.nrows();
            let mut l = eig.eigenvectors;
            for j in 0..p {
                let s = eig.eigenvalues[j].max(0.0).sqrt();
                for i in 0..p {
                    l[(i, j)] *= Complex64::new(s, 0.0);
                }
            }
            Ok(SamplingFactor::Full(l))
        }
    }
}

/// Max relative error between an analytic gradient and central differences
/// with per-coordinate step `step_scale * (1 + |x_i|)`.
pub fn finite_diff_check<F>(
    f: F,
    point: &DVector<f64>,
    grad: &DVector<f64>,
    step_scale: f64,
) -> f64
where
    F: Fn(&DVector<f64>) -> f64,
{
    let mut max_rel = 0.0f64;
    for i in 0..point.len() {
        let h = step_scale * (1.0 + point[i].abs());
        let mut xp = point.clone();
        let mut xm = point.clone();
        xp[i] += h;
        xm[i] -= h;
        let fd = (f(&xp) - f(&xm)) / (2.0 * h);
        let rel = (fd - grad[i]).abs() / grad[i].abs().max(1.0);
        max_rel = max_rel.max(rel);
    }
    max_rel
}
