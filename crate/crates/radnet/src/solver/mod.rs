//! Convex inner subproblem: minimize the linear surrogate objective over
//! per-radar distortion blocks and TDMA time shares, subject to the
//! auxiliary-matrix rate upper bound per radar, positive semidefiniteness
//! of each distortion block, and the simplex constraint on the shares.
//!
//! The solver is a primal log-barrier interior-point method with damped
//! Newton steps. Barrier terms: `-ln det D_n` (PSD cone), `-ln(a_n C_n -
//! R_upp_n)` (rate), `-ln a_n` and `-ln(1 - sum a)` (shares; shared mode
//! only). The outer parameter follows `t <- 10 t` from `t = 1` until the
//! duality measure `m/t` drops below the requested tolerance, where `m`
//! sums the barrier degrees (a log-det block of size p counts p).

mod ipm;

pub use ipm::BlockLayout;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::estimation::pseudo_inverse;
use crate::ratemodel::{rate_upper, AuxiliaryBlock, DistortionBlock};
use crate::scene::{MeasurementSet, WeightMatrix};
use crate::{FronthaulMode, QuantMode};

pub(crate) const LN2: f64 = std::f64::consts::LN_2;

/// Linear cost decomposition of the surrogate objective:
/// `objective = constant + sum_n tr(blocks[n] * D_n)`.
#[derive(Debug, Clone)]
pub struct CostModel {
    /// Hermitian-PSD diagonal blocks of `(A+)^H W A+`.
    pub blocks: Vec<DMatrix<Complex64>>,
    /// `tr(W A+ Omega (A+)^H)`: the distortion-free surrogate value.
    pub constant: f64,
}

/// The fixed data of one inner solve.
#[derive(Debug, Clone)]
pub struct InnerProblem {
    pub cost: CostModel,
    /// Fixed auxiliary blocks from the last closed-form update.
    pub aux: Vec<AuxiliaryBlock>,
    pub k_blocks: Vec<DMatrix<Complex64>>,
    /// Fronthaul capacities C_n in bits/s.
    pub capacities: Vec<f64>,
    pub sample_rate: f64,
    pub mode: QuantMode,
    pub fronthaul: FronthaulMode,
}

/// A strictly feasible starting point for [`solve_inner`].
#[derive(Debug, Clone)]
pub struct StartPoint {
    pub distortion: Vec<DistortionBlock>,
    /// Ignored (forced to 1) in dedicated mode.
    pub shares: Vec<f64>,
}

/// Optimality certificate of a reported solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktReport {
    /// Infinity norm of the stationarity equations with multipliers
    /// recovered from the barrier (`lambda_i = 1/(t s_i)`).
    pub stationarity: f64,
    /// Largest constraint violation (0 for interior points).
    pub primal_feasibility: f64,
    /// Barrier duality measure `m/t`.
    pub duality_measure: f64,
    /// Sum of pairwise complementarity products.
    pub complementarity_gap: f64,
}

/// Result of one inner solve.
#[derive(Debug, Clone)]
pub struct InnerSolution {
    pub distortion: Vec<DistortionBlock>,
    /// TDMA shares; all exactly 1 in dedicated mode.
    pub shares: Vec<f64>,
    /// Surrogate objective including the distortion-free constant.
    pub objective: f64,
    pub kkt: KktReport,
    /// Final barrier parameter (used to recover multipliers).
    pub barrier_t: f64,
    /// Rate-constraint slacks `a_n C_n - R_upp_n` as maintained by the
    /// barrier (kept because recomputing them from scratch loses all
    /// significant digits at deep barrier stages).
    pub rate_slacks: Vec<f64>,
    /// Objective after each outer barrier stage (non-increasing).
    pub stage_objectives: Vec<f64>,
}

impl InnerProblem {
    pub fn num_radars(&self) -> usize {
        self.k_blocks.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_radars();
        if self.cost.blocks.len() != n
            || self.aux.len() != n
            || self.capacities.len() != n
            || n == 0
        {
            return Err(Error::InvalidArgument("inner problem block counts disagree".into()));
        }
        for i in 0..n {
            let p = self.k_blocks[i].nrows();
            if self.cost.blocks[i].nrows() != p || self.aux[i].dim() != p {
                return Err(Error::InvalidArgument(format!(
                    "inner problem dimensions disagree for radar {i}"
                )));
            }
            if !(self.capacities[i] > 0.0) {
                return Err(Error::InvalidArgument("capacities must be positive".into()));
            }
        }
        if !(self.sample_rate > 0.0) {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        Ok(())
    }

    /// Surrogate objective at a candidate point.
    pub fn objective(&self, distortion: &[DistortionBlock]) -> f64 {
        self.cost.constant
            + self
                .cost
                .blocks
                .iter()
                .zip(distortion)
                .map(|(m, d)| trace_product(m, d))
                .sum::<f64>()
    }
}

pub(crate) fn trace_product(m: &DMatrix<Complex64>, d: &DistortionBlock) -> f64 {
    match d {
        DistortionBlock::Afvq(v) => (0..v.len()).map(|i| m[(i, i)].re * v[i]).sum(),
        DistortionBlock::Rvq(dm) => {
            let p = m.nrows();
            let mut acc = 0.0;
            for i in 0..p {
                for j in 0..p {
                    acc += (m[(i, j)] * dm[(j, i)]).re;
                }
            }
            acc
        }
    }
}

/// Diagonal blocks `M_n` of `(A+)^H W A+`, the gradient of the surrogate
/// objective with respect to each distortion block.
pub fn linear_cost_blocks(
    a_stacked: &DMatrix<Complex64>,
    block_dims: &[usize],
    weights: &WeightMatrix,
    rtol: f64,
) -> Result<Vec<DMatrix<Complex64>>> {
    let total: usize = block_dims.iter().sum();
    if a_stacked.nrows() != total || weights.w.len() != a_stacked.ncols() {
        return Err(Error::InvalidArgument("cost block shape mismatch".into()));
    }
    let a_pinv = pseudo_inverse(a_stacked, rtol)?; // G x total
    let g = a_pinv.nrows();
    // S = sqrt(W) A+, so M = S^H S blockwise.
    let mut s = a_pinv;
    for gi in 0..g {
        let sw = weights.w[gi].max(0.0).sqrt();
        for r in 0..total {
            s[(gi, r)] *= Complex64::new(sw, 0.0);
        }
    }
    let mut blocks = Vec::with_capacity(block_dims.len());
    let mut c0 = 0;
    for &p in block_dims {
        let sb = s.view((0, c0), (g, p));
        let mut m = sb.adjoint() * sb;
        let mh = m.adjoint();
        m = (m + mh) * Complex64::new(0.5, 0.0);
        blocks.push(m);
        c0 += p;
    }
    Ok(blocks)
}

/// Cost blocks plus the distortion-free constant
/// `tr(W A+ Omega (A+)^H) = sum_n sigma_n^2 tr(M_n)`.
pub fn cost_model(
    measurement: &MeasurementSet,
    weights: &WeightMatrix,
    rtol: f64,
) -> Result<CostModel> {
    let blocks = linear_cost_blocks(
        &measurement.a_stacked,
        &measurement.block_dims(),
        weights,
        rtol,
    )?;
    let constant = blocks
        .iter()
        .zip(&measurement.noise_power)
        .map(|(m, &s2)| s2 * (0..m.nrows()).map(|i| m[(i, i)].re).sum::<f64>())
        .sum();
    Ok(CostModel { blocks, constant })
}

/// Rate-constraint value `R_upp - a C` and its gradients
/// `(f_s/ln 2)(Y - D^-1)` with respect to the distortion block and `-C`
/// with respect to the share.
pub fn constraint_value_grad(
    d: &DistortionBlock,
    a: f64,
    y: &AuxiliaryBlock,
    k: &DMatrix<Complex64>,
    capacity: f64,
    sample_rate: f64,
) -> Result<(f64, DMatrix<Complex64>, f64)> {
    let value = rate_upper(d, y, k, sample_rate)? - a * capacity;
    let p = d.dim();
    let scale = Complex64::new(sample_rate / LN2, 0.0);
    let grad = match d {
        DistortionBlock::Afvq(dv) => {
            let ym = y.to_matrix();
            DMatrix::from_fn(p, p, |i, j| {
                if i == j {
                    scale * (ym[(i, i)] - Complex64::new(1.0 / dv[i], 0.0))
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
        }
        DistortionBlock::Rvq(dm) => {
            let chol = crate::ratemodel::checked_cholesky(dm)
                .ok_or_else(|| Error::Numeric("singular distortion block".into()))?;
            let mut dinv = chol.inverse();
            let dh = dinv.adjoint();
            dinv = (dinv + dh) * Complex64::new(0.5, 0.0);
            (y.to_matrix() - dinv) * scale
        }
    };
    Ok((value, grad, -capacity))
}

/// Solves the inner subproblem from a strictly feasible start.
///
/// The returned objective is within `tol` of the subproblem optimum
/// (certified by the final duality measure); constraints are satisfied to
/// interior-point accuracy. In dedicated mode the shares are fixed at 1
/// and the simplex constraint is dropped.
pub fn solve_inner(
    problem: &InnerProblem,
    start: &StartPoint,
    tol: f64,
) -> Result<InnerSolution> {
    problem.validate()?;
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    ipm::solve(problem, start, tol)
}

/// KKT residuals of a candidate solution, with multipliers recovered from
/// the barrier at the solution's final parameter `t`.
pub fn kkt_residual(problem: &InnerProblem, solution: &InnerSolution) -> Result<KktReport> {
    let slacks = (solution.rate_slacks.len() == problem.num_radars())
        .then_some(solution.rate_slacks.as_slice());
    ipm::kkt_report(problem, &solution.distortion, &solution.shares, solution.barrier_t, slacks)
}

#[cfg(test)]
mod tests;
