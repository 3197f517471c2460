//! Fisher information, exact weighted CRLB, and the pseudoinverse-based
//! surrogate objective that the optimizer minimizes.
//!
//! The surrogate `tr(W A+ (D + Omega) (A+)^H)` is linear in the distortion
//! covariances and equals the weighted MSE of the ordinary least-squares
//! estimator; the exact bound `tr(W F^+)` is reported alongside as a
//! diagnostic. The two coincide only in special cases (e.g. scalar
//! whitened noise with full-rank A), so both are exposed.

use nalgebra::{Cholesky, DMatrix, SVD};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::ratemodel::{checked_cholesky, DistortionBlock};
use crate::scene::{MeasurementSet, WeightMatrix};

/// Default relative tolerance for discarding singular values.
pub const DEFAULT_PINV_RTOL: f64 = 1e-10;

/// Measurement model plus the distortion state it is evaluated at.
#[derive(Debug, Clone, Copy)]
pub struct NetworkState<'a> {
    pub measurement: &'a MeasurementSet,
    pub distortion: &'a [DistortionBlock],
    pub weights: &'a WeightMatrix,
}

impl<'a> NetworkState<'a> {
    pub fn new(
        measurement: &'a MeasurementSet,
        distortion: &'a [DistortionBlock],
        weights: &'a WeightMatrix,
    ) -> Result<Self> {
        if distortion.len() != measurement.num_radars() {
            return Err(Error::InvalidArgument(format!(
                "{} distortion blocks for {} radars",
                distortion.len(),
                measurement.num_radars()
            )));
        }
        for (n, (d, a)) in distortion.iter().zip(&measurement.a_blocks).enumerate() {
            if d.dim() != a.nrows() {
                return Err(Error::InvalidArgument(format!(
                    "distortion block {n} has dim {} but the radar has {} samples",
                    d.dim(),
                    a.nrows()
                )));
            }
        }
        if weights.w.len() != measurement.num_cells() {
            return Err(Error::InvalidArgument("weight vector length mismatch".into()));
        }
        Ok(NetworkState { measurement, distortion, weights })
    }
}

/// Moore-Penrose pseudoinverse via SVD. Singular values below
/// `rtol * sigma_max * max(rows, cols)` are treated as zero.
pub fn pseudo_inverse(a: &DMatrix<Complex64>, rtol: f64) -> Result<DMatrix<Complex64>> {
    if a.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::InvalidArgument("matrix entries must be finite".into()));
    }
    let (rows, cols) = a.shape();
    let svd = SVD::try_new(a.clone(), true, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numeric("SVD did not converge".into()))?;
    let u = svd.u.ok_or_else(|| Error::Numeric("SVD produced no U factor".into()))?;
    let v_t = svd.v_t.ok_or_else(|| Error::Numeric("SVD produced no V factor".into()))?;
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let cutoff = rtol * smax * rows.max(cols) as f64;
    let r = svd.singular_values.len();
    let mut sigma_plus = DMatrix::<Complex64>::zeros(r, r);
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff {
            sigma_plus[(i, i)] = Complex64::new(1.0 / s, 0.0);
        }
    }
    Ok(v_t.adjoint() * sigma_plus * u.adjoint())
}

/// Block-diagonal covariance factors `L_n` with `L_n L_n^H = D_n + Omega_n`.
fn covariance_factors(state: &NetworkState) -> Result<Vec<Cholesky<Complex64, nalgebra::Dyn>>> {
    state
        .measurement
        .a_blocks
        .iter()
        .zip(state.distortion)
        .zip(&state.measurement.noise_power)
        .map(|((a, d), &s2)| {
            let p = a.nrows();
            let mut sigma = d.to_matrix();
            for i in 0..p {
                sigma[(i, i)] += Complex64::new(s2, 0.0);
            }
            checked_cholesky(&sigma).ok_or_else(|| {
                Error::Numeric("D + Omega is numerically singular".into())
            })
        })
        .collect()
}

/// Whitened measurement stack `B = (D + Omega)^{-1/2} A` computed blockwise.
fn whitened_stack(state: &NetworkState) -> Result<DMatrix<Complex64>> {
    let g = state.measurement.num_cells();
    let rows: usize = state.measurement.a_blocks.iter().map(|a| a.nrows()).sum();
    let mut b = DMatrix::zeros(rows, g);
    let factors = covariance_factors(state)?;
    let mut r0 = 0;
    for (a, chol) in state.measurement.a_blocks.iter().zip(&factors) {
        let mut block = a.clone();
        chol.l().solve_lower_triangular_mut(&mut block);
        b.view_mut((r0, 0), (a.nrows(), g)).copy_from(&block);
        r0 += a.nrows();
    }
    Ok(b)
}

/// Fisher information matrix `F = A^H (D + Omega)^-1 A`, the sum of the
/// per-radar blocks `F_n = A_n^H (D_n + Omega_n)^-1 A_n`.
pub fn fim(state: &NetworkState) -> Result<DMatrix<Complex64>> {
    let b = whitened_stack(state)?;
    let mut f = b.adjoint() * &b;
    let fh = f.adjoint();
    f = (f + fh) * Complex64::new(0.5, 0.0);
    Ok(f)
}

/// Exact weighted CRLB with rank-deficiency report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactWcrlb {
    /// `tr(W F^+)` using the generalized inverse of the FIM.
    pub value: f64,
    /// False when some positively weighted cell lies in the null space of
    /// the FIM (the bound then covers only the identifiable subspace).
    pub identifiable: bool,
}

/// Exact weighted CRLB `tr(W F^+)`, evaluated through the whitened stack
/// `B` with `F = B^H B` (so `F^+ = B^+ (B^+)^H`), which avoids forming the
/// G x G FIM for large grids.
pub fn exact_wcrlb(state: &NetworkState) -> Result<ExactWcrlb> {
    let b = whitened_stack(state)?;
    let (rows, cols) = b.shape();
    let svd = SVD::try_new(b, true, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numeric("SVD did not converge".into()))?;
    let u = svd.u.ok_or_else(|| Error::Numeric("SVD produced no U factor".into()))?;
    let v_t = svd.v_t.ok_or_else(|| Error::Numeric("SVD produced no V factor".into()))?;
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let cutoff = DEFAULT_PINV_RTOL * smax * rows.max(cols) as f64;

    let _ = u;
    let mut value = 0.0;
    let mut row_space = vec![0.0; cols];
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s <= cutoff {
            continue;
        }
        let row = v_t.row(i);
        for (g, z) in row.iter().enumerate() {
            let m = z.norm_sqr();
            row_space[g] += m;
            value += state.weights.w[g] * m / (s * s);
        }
    }
    let identifiable = state
        .weights
        .w
        .iter()
        .zip(&row_space)
        .all(|(&w, &p)| w <= 0.0 || p >= 1.0 - 1e-6);
    Ok(ExactWcrlb { value, identifiable })
}

/// Surrogate weighted CRLB `tr(W A+ (D + Omega) (A+)^H)`: the optimizer's
/// objective, linear in the distortion covariances.
pub fn surrogate_wcrlb(state: &NetworkState) -> Result<f64> {
    let map = crlb_heatmap(state)?;
    Ok(map.iter().zip(&state.weights.w).map(|(v, w)| v * w).sum())
}

/// Per-cell surrogate values `diag(A+ (D + Omega) (A+)^H)` (linear scale).
/// Cells observed by no radar come out as exactly zero.
pub fn crlb_heatmap(state: &NetworkState) -> Result<Vec<f64>> {
    let a_pinv = pseudo_inverse(&state.measurement.a_stacked, DEFAULT_PINV_RTOL)?;
    heatmap_from_pinv(state, &a_pinv)
}

/// Same as [`crlb_heatmap`] with a caller-supplied pseudoinverse of the
/// stacked measurement matrix (useful inside iteration loops).
pub fn heatmap_from_pinv(
    state: &NetworkState,
    a_pinv: &DMatrix<Complex64>,
) -> Result<Vec<f64>> {
    let dims = state.measurement.block_dims();
    let g = state.measurement.num_cells();
    if a_pinv.nrows() != g || a_pinv.ncols() != dims.iter().sum::<usize>() {
        return Err(Error::InvalidArgument("pseudoinverse shape mismatch".into()));
    }
    let mut out = vec![0.0; g];
    let mut c0 = 0;
    for ((d, &s2), &p) in state
        .distortion
        .iter()
        .zip(&state.measurement.noise_power)
        .zip(&dims)
    {
        let mut sigma = d.to_matrix();
        for i in 0..p {
            sigma[(i, i)] += Complex64::new(s2, 0.0);
        }
        let block = a_pinv.view((0, c0), (g, p));
        // row_g * Sigma * row_g^H accumulated per cell.
        let bs = &block * sigma;
        for gi in 0..g {
            let mut acc = 0.0;
            for j in 0..p {
                acc += (bs[(gi, j)] * block[(gi, j)].conj()).re;
            }
            out[gi] += acc;
        }
        c0 += p;
    }
    Ok(out)
}
