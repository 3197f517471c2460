//! Quantization rate bounds for the Gaussian test channel, their convex
//! upper bound via an auxiliary PSD matrix, and the feasible uniform
//! initialization of the distortion covariances.
//!
//! All rates are in bits/s: `R_n(D_n) = f_s log2(|K_n + D_n| / |D_n|)`.
//! AFVQ keeps `D_n` (and `K_n`) diagonal, RVQ allows a full Hermitian block.

use nalgebra::{Cholesky, DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::QuantMode;

const LN2: f64 = std::f64::consts::LN_2;

/// One radar's quantization distortion covariance.
#[derive(Debug, Clone, PartialEq)]
pub enum DistortionBlock {
    /// Diagonal of the distortion covariance: positive entries d_{m,k}.
    Afvq(DVector<f64>),
    /// Full Hermitian-PSD distortion covariance.
    Rvq(DMatrix<Complex64>),
}

impl DistortionBlock {
    /// Uniform distortion `d * I` in the representation of `mode`.
    pub fn uniform(mode: QuantMode, dim: usize, d: f64) -> Self {
        match mode {
            QuantMode::Afvq => DistortionBlock::Afvq(DVector::from_element(dim, d)),
            QuantMode::Rvq => {
                DistortionBlock::Rvq(DMatrix::from_diagonal_element(dim, dim, Complex64::new(d, 0.0)))
            }
        }
    }

    pub fn mode(&self) -> QuantMode {
        match self {
            DistortionBlock::Afvq(_) => QuantMode::Afvq,
            DistortionBlock::Rvq(_) => QuantMode::Rvq,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            DistortionBlock::Afvq(d) => d.len(),
            DistortionBlock::Rvq(m) => m.nrows(),
        }
    }

    pub fn trace(&self) -> f64 {
        match self {
            DistortionBlock::Afvq(d) => d.sum(),
            DistortionBlock::Rvq(m) => (0..m.nrows()).map(|i| m[(i, i)].re).sum(),
        }
    }

    pub fn min_eigenvalue(&self) -> f64 {
        match self {
            DistortionBlock::Afvq(d) => d.iter().cloned().fold(f64::INFINITY, f64::min),
            DistortionBlock::Rvq(m) => m
                .clone()
                .symmetric_eigenvalues()
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min),
        }
    }

    /// Materializes the block as a dense Hermitian matrix.
    pub fn to_matrix(&self) -> DMatrix<Complex64> {
        match self {
            DistortionBlock::Afvq(d) => DMatrix::from_fn(d.len(), d.len(), |i, j| {
                if i == j {
                    Complex64::new(d[i], 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            }),
            DistortionBlock::Rvq(m) => m.clone(),
        }
    }

    /// Checks Hermitian symmetry (1e-12 relative) and PSD-ness.
    pub fn validate(&self) -> Result<()> {
        match self {
            DistortionBlock::Afvq(d) => {
                if d.iter().any(|&x| !(x > 0.0)) {
                    return Err(Error::Domain("AFVQ distortion entries must be positive".into()));
                }
            }
            DistortionBlock::Rvq(m) => {
                let gap = (m - m.adjoint()).camax();
                if gap > 1e-12 * m.camax().max(1e-300) {
                    return Err(Error::Domain("distortion block is not Hermitian".into()));
                }
                if self.min_eigenvalue() < 0.0 {
                    return Err(Error::Domain("distortion block is not PSD".into()));
                }
            }
        }
        Ok(())
    }
}

/// Auxiliary Hermitian-PSD block from the log-det upper bound; diagonal in
/// AFVQ mode.
#[derive(Debug, Clone, PartialEq)]
pub enum AuxiliaryBlock {
    Afvq(DVector<f64>),
    Rvq(DMatrix<Complex64>),
}

impl AuxiliaryBlock {
    pub fn dim(&self) -> usize {
        match self {
            AuxiliaryBlock::Afvq(y) => y.len(),
            AuxiliaryBlock::Rvq(m) => m.nrows(),
        }
    }

    pub fn to_matrix(&self) -> DMatrix<Complex64> {
        match self {
            AuxiliaryBlock::Afvq(y) => DMatrix::from_fn(y.len(), y.len(), |i, j| {
                if i == j {
                    Complex64::new(y[i], 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            }),
            AuxiliaryBlock::Rvq(m) => m.clone(),
        }
    }
}

/// Real diagonal of a Hermitian matrix.
pub(crate) fn diag_re(m: &DMatrix<Complex64>) -> DVector<f64> {
    DVector::from_fn(m.nrows(), |i, _| m[(i, i)].re)
}

/// Cholesky factorization that actually verifies positive definiteness:
/// nalgebra's complex Cholesky happily takes square roots of negative
/// pivots (they are representable as imaginary numbers), so the pivots
/// must be validated explicitly.
pub(crate) fn checked_cholesky(
    m: &DMatrix<Complex64>,
) -> Option<Cholesky<Complex64, nalgebra::Dyn>> {
    let chol = Cholesky::new(m.clone())?;
    let l = chol.l_dirty();
    for i in 0..m.nrows() {
        let piv = l[(i, i)];
        if !(piv.re > 0.0) || !piv.re.is_finite() || piv.im.abs() > 1e-12 * piv.re {
            return None;
        }
    }
    Some(chol)
}

/// log2 det of a Hermitian positive definite matrix via Cholesky.
/// Cholesky failure defines "numerically singular".
pub(crate) fn log2_det_hermitian(m: &DMatrix<Complex64>) -> Result<f64> {
    let chol = checked_cholesky(m)
        .ok_or_else(|| Error::Numeric("Cholesky failed: matrix not positive definite".into()))?;
    let l = chol.l();
    let mut acc = 0.0;
    for i in 0..l.nrows() {
        let d = l[(i, i)].re;
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::Numeric("Cholesky produced a non-positive pivot".into()));
        }
        acc += d.ln();
    }
    Ok(2.0 * acc / LN2)
}

/// Quantizer output-rate lower bound `f_s log2(|K_n + D_n| / |D_n|)`.
///
/// In AFVQ mode both matrices are diagonal and the value equals the sum of
/// per-sample scalar rates.
pub fn rate(d: &DistortionBlock, k: &DMatrix<Complex64>, sample_rate: f64) -> Result<f64> {
    match d {
        DistortionBlock::Afvq(dv) => {
            let kd = diag_re(k);
            if dv.len() != kd.len() {
                return Err(Error::InvalidArgument("dimension mismatch in rate".into()));
            }
            let mut acc = 0.0;
            for i in 0..dv.len() {
                if !(dv[i] > 0.0) {
                    return Err(Error::Domain("rate diverges: nonpositive distortion entry".into()));
                }
                acc += ((kd[i] + dv[i]) / dv[i]).log2();
            }
            Ok(sample_rate * acc)
        }
        DistortionBlock::Rvq(dm) => {
            if dm.nrows() != k.nrows() {
                return Err(Error::InvalidArgument("dimension mismatch in rate".into()));
            }
            let num = log2_det_hermitian(&(k + dm))?;
            let den = log2_det_hermitian(dm)
                .map_err(|_| Error::Domain("rate diverges: singular distortion block".into()))?;
            Ok(sample_rate * (num - den))
        }
    }
}

/// Convex upper bound on the rate for a fixed auxiliary PSD block `Y`:
///
/// `f_s * [ -log2|D| - log2|Y| + tr(Y (K + D))/ln 2 - p/ln 2 ]`
///
/// with `p` the block dimension. Equals `rate` when `Y = (K + D)^-1` and
/// dominates it for every other PSD `Y`.
pub fn rate_upper(
    d: &DistortionBlock,
    y: &AuxiliaryBlock,
    k: &DMatrix<Complex64>,
    sample_rate: f64,
) -> Result<f64> {
    match (d, y) {
        (DistortionBlock::Afvq(dv), AuxiliaryBlock::Afvq(yv)) => {
            let kd = diag_re(k);
            let p = dv.len();
            if yv.len() != p || kd.len() != p {
                return Err(Error::InvalidArgument("dimension mismatch in rate_upper".into()));
            }
            let mut acc = -(p as f64) / LN2;
            for i in 0..p {
                if !(dv[i] > 0.0) || !(yv[i] > 0.0) {
                    return Err(Error::Domain("rate_upper needs positive diagonals".into()));
                }
                acc += -dv[i].log2() - yv[i].log2() + yv[i] * (kd[i] + dv[i]) / LN2;
            }
            Ok(sample_rate * acc)
        }
        (DistortionBlock::Rvq(dm), AuxiliaryBlock::Rvq(ym)) => {
            let p = dm.nrows();
            if ym.nrows() != p || k.nrows() != p {
                return Err(Error::InvalidArgument("dimension mismatch in rate_upper".into()));
            }
            let ld_d = log2_det_hermitian(dm)?;
            let ld_y = log2_det_hermitian(ym)?;
            let mut tr = 0.0;
            let kd = k + dm;
            for i in 0..p {
                for j in 0..p {
                    tr += (ym[(i, j)] * kd[(j, i)]).re;
                }
            }
            Ok(sample_rate * (-ld_d - ld_y + tr / LN2 - p as f64 / LN2))
        }
        _ => Err(Error::InvalidArgument(
            "distortion and auxiliary blocks use different modes".into(),
        )),
    }
}

/// Closed-form minimizer of the rate upper bound: `Y = (K + D)^-1`.
pub fn optimal_auxiliary(k: &DMatrix<Complex64>, d: &DistortionBlock) -> Result<AuxiliaryBlock> {
    match d {
        DistortionBlock::Afvq(dv) => {
            let kd = diag_re(k);
            let mut y = DVector::zeros(dv.len());
            for i in 0..dv.len() {
                let s = kd[i] + dv[i];
                if !(s > 0.0) {
                    return Err(Error::Numeric("K + D has a nonpositive diagonal entry".into()));
                }
                y[i] = 1.0 / s;
            }
            Ok(AuxiliaryBlock::Afvq(y))
        }
        DistortionBlock::Rvq(dm) => {
            let s = k + dm;
            let chol = checked_cholesky(&s).ok_or_else(|| {
                let eig = s.symmetric_eigenvalues();
                let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
                Error::Numeric(format!(
                    "K + D is numerically singular (eigenvalue range [{min:.3e}, {max:.3e}], \
                     condition {:.3e})",
                    max / min.abs().max(f64::MIN_POSITIVE)
                ))
            })?;
            let mut inv = chol.inverse();
            let invh = inv.adjoint();
            inv = (inv + invh) * Complex64::new(0.5, 0.0);
            Ok(AuxiliaryBlock::Rvq(inv))
        }
    }
}

/// Uniform distortion level `d` such that `f_s log2|d^-1 K + I| = target`
/// (the per-radar rate budget `C_n / N`), found by bisection.
///
/// The analytic point `d = N f_s tr(K) / C_n` seeds the bracket; the upper
/// end is doubled when that point is still infeasible for the base-2 rate.
/// For astronomically large budgets the equation has no representable root;
/// the bracket's lower end (a feasible point with rate below the budget) is
/// returned instead.
pub fn init_distortion(
    k: &DMatrix<Complex64>,
    capacity: f64,
    num_radars: usize,
    sample_rate: f64,
) -> Result<f64> {
    if !(capacity > 0.0) {
        return Err(Error::InvalidArgument("capacity must be positive".into()));
    }
    if num_radars == 0 {
        return Err(Error::InvalidArgument("num_radars must be >= 1".into()));
    }
    if !(sample_rate > 0.0) {
        return Err(Error::InvalidArgument("sample_rate must be positive".into()));
    }
    let eig = k.clone().symmetric_eigenvalues();
    let lambda: Vec<f64> = eig.iter().map(|&x| x.max(0.0)).collect();
    let target = capacity / num_radars as f64;
    let rate_of = |d: f64| -> f64 {
        sample_rate * lambda.iter().map(|&l| (1.0 + l / d).log2()).sum::<f64>()
    };

    let trace: f64 = lambda.iter().sum();
    if trace <= 0.0 {
        // K = 0: rate is identically zero, every d satisfies the budget.
        return Ok(1.0);
    }

    let mut hi = num_radars as f64 * sample_rate * trace / capacity;
    let mut lo = hi * 2f64.powi(-60);
    // The analytic point bounds the natural-log rate; in base 2 it can fall
    // short by up to a factor 1/ln 2, so extend the bracket upward.
    let mut guard = 0;
    while rate_of(hi) > target {
        lo = hi;
        hi *= 2.0;
        guard += 1;
        if guard > 200 {
            return Err(Error::Search("init_distortion bracket expansion failed".into()));
        }
    }
    if rate_of(lo) < target {
        // Budget so large that no representable d reaches it; lo is feasible.
        return Ok(lo);
    }

    // Geometric bisection to 1e-12 relative width.
    while hi / lo - 1.0 > 1e-12 {
        let mid = (lo * hi).sqrt();
        if rate_of(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // hi is the feasible side of the final bracket.
    Ok(hi)
}
