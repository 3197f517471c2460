//! Interior-point internals: real coordinates for Hermitian blocks, barrier
//! evaluation, Newton steps with a Sherman-Morrison correction for the
//! simplex coupling, and KKT residual recovery.
//!
//! Hermitian blocks are parameterized by p real diagonal entries followed
//! by (re, im) pairs of the strict upper triangle; a gradient matrix G maps
//! to coordinates as `[G_ii; 2 Re G_ij; 2 Im G_ij]` so that directional
//! derivatives are plain dot products.
//!
//! Late barrier stages drive the rate-constraint slacks far below the
//! rounding level of the log-det terms they are made of, so the slacks and
//! log-dets are maintained differentially across Newton steps: each update
//! evaluates `ln det(I + L^-1 dD L^-H)` in deviation form, which stays
//! accurate when the increment is small.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::ratemodel::{checked_cholesky, diag_re, DistortionBlock};
use crate::{FronthaulMode, QuantMode};

use super::{InnerProblem, InnerSolution, KktReport, StartPoint, LN2};

const BARRIER_GROWTH: f64 = 10.0;
const NEWTON_DECREMENT_TOL: f64 = 1e-10; // on lambda^2 / 2
const ARMIJO_SLOPE: f64 = 0.01;
const ARMIJO_BACKTRACK: f64 = 0.5;
const MAX_NEWTON_PER_STAGE: usize = 400;

/// Real coordinate layout of one radar's distortion block: `p` diagonal
/// entries followed by `(re, im)` pairs of the strict upper triangle in
/// RVQ mode, just the `p` diagonal entries in AFVQ mode.
#[derive(Debug, Clone, Copy)]
pub struct BlockLayout {
    pub p: usize,
    pub mode: QuantMode,
}

impl BlockLayout {
    pub fn new(p: usize, mode: QuantMode) -> Self {
        BlockLayout { p, mode }
    }

    pub fn coord_len(&self) -> usize {
        match self.mode {
            QuantMode::Afvq => self.p,
            QuantMode::Rvq => self.p * self.p,
        }
    }

    /// Coordinates of a Hermitian matrix viewed as a variable.
    pub fn pack(&self, m: &DMatrix<Complex64>) -> DVector<f64> {
        match self.mode {
            QuantMode::Afvq => diag_re(m),
            QuantMode::Rvq => {
                let p = self.p;
                let mut x = DVector::zeros(p * p);
                for i in 0..p {
                    x[i] = m[(i, i)].re;
                }
                let mut idx = p;
                for i in 0..p {
                    for j in (i + 1)..p {
                        x[idx] = m[(i, j)].re;
                        x[idx + 1] = m[(i, j)].im;
                        idx += 2;
                    }
                }
                x
            }
        }
    }

    /// Hermitian matrix described by the coordinates.
    pub fn unpack(&self, x: &[f64]) -> DMatrix<Complex64> {
        let p = self.p;
        let mut m = DMatrix::zeros(p, p);
        match self.mode {
            QuantMode::Afvq => {
                for i in 0..p {
                    m[(i, i)] = Complex64::new(x[i], 0.0);
                }
            }
            QuantMode::Rvq => {
                for i in 0..p {
                    m[(i, i)] = Complex64::new(x[i], 0.0);
                }
                let mut idx = p;
                for i in 0..p {
                    for j in (i + 1)..p {
                        m[(i, j)] = Complex64::new(x[idx], x[idx + 1]);
                        m[(j, i)] = Complex64::new(x[idx], -x[idx + 1]);
                        idx += 2;
                    }
                }
            }
        }
        m
    }

    /// Gradient coordinates of a Hermitian gradient matrix: the vector g
    /// with `dF = g . dtheta` for the parameterization above.
    pub fn grad_coords(&self, g: &DMatrix<Complex64>) -> DVector<f64> {
        let p = self.p;
        match self.mode {
            QuantMode::Afvq => diag_re(g),
            QuantMode::Rvq => {
                let mut v = DVector::zeros(p * p);
                for i in 0..p {
                    v[i] = g[(i, i)].re;
                }
                let mut idx = p;
                for i in 0..p {
                    for j in (i + 1)..p {
                        v[idx] = 2.0 * g[(i, j)].re;
                        v[idx + 1] = 2.0 * g[(i, j)].im;
                        idx += 2;
                    }
                }
                v
            }
        }
    }

    /// Hessian of `-ln det D` in coordinates: `H_ab = tr(C B_a C B_b)` with
    /// `C = D^-1`. Row `a` equals the gradient coordinates of `C B_a C`.
    pub fn hess_logdet(&self, c: &DMatrix<Complex64>) -> DMatrix<f64> {
        let p = self.p;
        match self.mode {
            QuantMode::Afvq => {
                DMatrix::from_fn(p, p, |i, j| if i == j { c[(i, i)].re.powi(2) } else { 0.0 })
            }
            QuantMode::Rvq => {
                let q = p * p;
                let mut h = DMatrix::zeros(q, q);
                let mut t = DMatrix::<Complex64>::zeros(p, p);
                for a in 0..q {
                    fill_basis_sandwich(c, a, p, &mut t);
                    let row = self.grad_coords(&t);
                    h.row_mut(a).copy_from(&row.transpose());
                }
                // Symmetrize away rounding noise.
                let ht = h.transpose();
                (h + ht) * 0.5
            }
        }
    }
}

/// Writes `C B_a C` into `out`, where `B_a` is the a-th Hermitian basis
/// element. Uses outer products of columns of `C` (Hermitian), so
/// `C E_ij C = c_i c_j^H`.
fn fill_basis_sandwich(c: &DMatrix<Complex64>, a: usize, p: usize, out: &mut DMatrix<Complex64>) {
    let (i, j, kind) = basis_index(a, p);
    match kind {
        BasisKind::Diag => {
            let ci = c.column(i);
            for r in 0..p {
                for s in 0..p {
                    out[(r, s)] = ci[r] * ci[s].conj();
                }
            }
        }
        BasisKind::Re => {
            let ci = c.column(i);
            let cj = c.column(j);
            for r in 0..p {
                for s in 0..p {
                    out[(r, s)] = ci[r] * cj[s].conj() + cj[r] * ci[s].conj();
                }
            }
        }
        BasisKind::Im => {
            let iu = Complex64::new(0.0, 1.0);
            let ci = c.column(i);
            let cj = c.column(j);
            for r in 0..p {
                for s in 0..p {
                    out[(r, s)] = iu * (ci[r] * cj[s].conj() - cj[r] * ci[s].conj());
                }
            }
        }
    }
}

enum BasisKind {
    Diag,
    Re,
    Im,
}

fn basis_index(a: usize, p: usize) -> (usize, usize, BasisKind) {
    if a < p {
        return (a, a, BasisKind::Diag);
    }
    let mut idx = p;
    for i in 0..p {
        for j in (i + 1)..p {
            if a == idx {
                return (i, j, BasisKind::Re);
            }
            if a == idx + 1 {
                return (i, j, BasisKind::Im);
            }
            idx += 2;
        }
    }
    unreachable!("basis index out of range")
}

/// `ln det(I + E)` for Hermitian `E` via a Cholesky run on the deviation
/// from the identity; accurate even when the value is near zero. `None`
/// when `I + E` is not positive definite.
fn lndet_identity_plus(e: &DMatrix<Complex64>) -> Option<f64> {
    let p = e.nrows();
    let mut f = DMatrix::<Complex64>::zeros(p, p);
    let mut lndet = 0.0;
    for j in 0..p {
        let mut w = e[(j, j)].re;
        for k in 0..j {
            w -= f[(j, k)].norm_sqr();
        }
        if !(w > -1.0) || !w.is_finite() {
            return None;
        }
        // 1 + f_jj = sqrt(1 + w), evaluated without forming 1 + w twice.
        let fjj = w / (1.0 + (1.0 + w).sqrt());
        lndet += fjj.ln_1p();
        let ljj = Complex64::new(1.0 + fjj, 0.0);
        for i in (j + 1)..p {
            let mut v = e[(i, j)];
            for k in 0..j {
                v -= f[(i, k)] * f[(j, k)].conj();
            }
            f[(i, j)] = v / ljj;
        }
        f[(j, j)] = Complex64::new(fjj, 0.0);
    }
    Some(2.0 * lndet)
}

/// Constant per-radar data for one solve.
struct RadarCtx {
    layout: BlockLayout,
    capacity: f64,
    /// Objective cost block M_n.
    m_mat: DMatrix<Complex64>,
    /// Fixed auxiliary block Y_n as a dense matrix.
    y_mat: DMatrix<Complex64>,
    /// Objective gradient coordinates (of M_n).
    gm: DVector<f64>,
    /// Coordinates of the fixed auxiliary block Y_n.
    gy: DVector<f64>,
    /// log2 det Y_n.
    ld2_y: f64,
    /// tr(Y_n K_n).
    tr_yk: f64,
}

struct ProblemCtx {
    radars: Vec<RadarCtx>,
    sample_rate: f64,
    shared: bool,
    /// Sum of barrier degrees: p per log-det block, 1 per scalar constraint.
    barrier_degree: f64,
    /// Plain count of barrier-wrapped constraints (log-det blocks count 1).
    constraint_count: f64,
    /// Global coordinate offset of each radar block.
    offsets: Vec<usize>,
    total_len: usize,
}

impl ProblemCtx {
    fn build(problem: &InnerProblem) -> Result<Self> {
        let shared = problem.fronthaul == FronthaulMode::Shared;
        let mut radars = Vec::with_capacity(problem.num_radars());
        for n in 0..problem.num_radars() {
            let p = problem.k_blocks[n].nrows();
            let layout = BlockLayout { p, mode: problem.mode };
            let ym = problem.aux[n].to_matrix();
            let ld2_y = crate::ratemodel::log2_det_hermitian(&ym).map_err(|_| {
                Error::InvalidArgument(format!("auxiliary block {n} is not positive definite"))
            })?;
            let mut tr_yk = 0.0;
            for i in 0..p {
                for j in 0..p {
                    tr_yk += (ym[(i, j)] * problem.k_blocks[n][(j, i)]).re;
                }
            }
            radars.push(RadarCtx {
                layout,
                capacity: problem.capacities[n],
                m_mat: problem.cost.blocks[n].clone(),
                gm: layout.grad_coords(&problem.cost.blocks[n]),
                gy: layout.grad_coords(&ym),
                y_mat: ym,
                ld2_y,
                tr_yk,
            });
        }
        let mut offsets = Vec::with_capacity(radars.len());
        let mut total = 0usize;
        let mut degree = 0.0;
        let mut count = 0.0;
        for r in &radars {
            offsets.push(total);
            total += r.layout.coord_len() + usize::from(shared);
            degree += r.layout.p as f64 + 1.0; // log-det block + rate slack
            count += 2.0;
            if shared {
                degree += 1.0; // a_n >= 0
                count += 1.0;
            }
        }
        if shared {
            degree += 1.0; // sum a <= 1
            count += 1.0;
        }
        Ok(ProblemCtx {
            radars,
            sample_rate: problem.sample_rate,
            shared,
            barrier_degree: degree,
            constraint_count: count,
            offsets,
            total_len: total,
        })
    }

    fn block_len(&self, n: usize) -> usize {
        self.radars[n].layout.coord_len() + usize::from(self.shared)
    }

    fn share_of(&self, x: &DVector<f64>, n: usize) -> f64 {
        if self.shared {
            x[self.offsets[n] + self.radars[n].layout.coord_len()]
        } else {
            1.0
        }
    }

    fn pack_point(&self, distortion: &[DistortionBlock], shares: &[f64]) -> DVector<f64> {
        let mut x = DVector::zeros(self.total_len);
        for (n, d) in distortion.iter().enumerate() {
            let coords = self.radars[n].layout.pack(&d.to_matrix());
            let o = self.offsets[n];
            x.rows_mut(o, coords.len()).copy_from(&coords);
            if self.shared {
                x[o + coords.len()] = shares[n];
            }
        }
        x
    }

    fn unpack_distortion(&self, x: &DVector<f64>, n: usize) -> DistortionBlock {
        let r = &self.radars[n];
        let o = self.offsets[n];
        let coords = x.as_slice()[o..o + r.layout.coord_len()].to_vec();
        match r.layout.mode {
            QuantMode::Afvq => DistortionBlock::Afvq(DVector::from_vec(coords)),
            QuantMode::Rvq => DistortionBlock::Rvq(r.layout.unpack(&coords)),
        }
    }
}

/// Feasibility-carrying state of one radar block at a point.
struct BlockState {
    /// Cholesky factor of the current D (RVQ only).
    chol: Option<Cholesky<Complex64, Dyn>>,
    /// ln det D, maintained differentially across steps.
    lndet: f64,
    /// a C - R_upp, maintained differentially across steps.
    slack: f64,
}

/// A strictly feasible iterate with its maintained quantities.
struct Point {
    x: DVector<f64>,
    blocks: Vec<BlockState>,
    share_sum: f64,
}

/// Rate upper bound from a maintained log-det.
fn r_upp_from_lndet(ctx: &ProblemCtx, n: usize, lndet: f64, tr_yd: f64) -> f64 {
    let r = &ctx.radars[n];
    ctx.sample_rate
        * (-lndet / LN2 - r.ld2_y + (r.tr_yk + tr_yd) / LN2 - r.layout.p as f64 / LN2)
}

/// Builds the state at `x` from scratch; `None` off the interior.
fn point_from_scratch(ctx: &ProblemCtx, x: DVector<f64>) -> Option<Point> {
    let mut blocks = Vec::with_capacity(ctx.radars.len());
    let mut share_sum = 0.0;
    for (n, r) in ctx.radars.iter().enumerate() {
        let o = ctx.offsets[n];
        let coords = &x.as_slice()[o..o + r.layout.coord_len()];
        let (chol, lndet) = match r.layout.mode {
            QuantMode::Afvq => {
                let mut acc = 0.0;
                for &d in coords {
                    if !(d > 0.0) {
                        return None;
                    }
                    acc += d.ln();
                }
                (None, acc)
            }
            QuantMode::Rvq => {
                let d = r.layout.unpack(coords);
                let chol = checked_cholesky(&d)?;
                let acc: f64 = (0..r.layout.p).map(|i| chol.l_dirty()[(i, i)].re.ln()).sum();
                (Some(chol), 2.0 * acc)
            }
        };
        let tr_yd: f64 = r.gy.iter().zip(coords).map(|(g, c)| g * c).sum();
        let a = ctx.share_of(&x, n);
        if ctx.shared {
            if !(a > 0.0) {
                return None;
            }
            share_sum += a;
        }
        let slack = a * r.capacity - r_upp_from_lndet(ctx, n, lndet, tr_yd);
        if !(slack > 0.0) || !slack.is_finite() {
            return None;
        }
        blocks.push(BlockState { chol, lndet, slack });
    }
    if ctx.shared && !(share_sum < 1.0) {
        return None;
    }
    Some(Point { x, blocks, share_sum })
}

/// Applies `alpha * step` to `cur`, updating log-dets and slacks through
/// accurate small-increment identities. `None` off the interior.
fn try_step(ctx: &ProblemCtx, cur: &Point, step: &DVector<f64>, alpha: f64) -> Option<Point> {
    let x_new = &cur.x + step * alpha;
    let mut blocks = Vec::with_capacity(ctx.radars.len());
    let mut share_sum = 0.0;
    for (n, r) in ctx.radars.iter().enumerate() {
        let o = ctx.offsets[n];
        let q = r.layout.coord_len();
        let cur_coords = &cur.x.as_slice()[o..o + q];
        let new_coords = &x_new.as_slice()[o..o + q];
        let (chol, delta_lndet) = match r.layout.mode {
            QuantMode::Afvq => {
                let mut acc = 0.0;
                for i in 0..q {
                    if !(new_coords[i] > 0.0) {
                        return None;
                    }
                    let rel = (new_coords[i] - cur_coords[i]) / cur_coords[i];
                    if !(rel > -1.0) {
                        return None;
                    }
                    acc += rel.ln_1p();
                }
                (None, acc)
            }
            QuantMode::Rvq => {
                let delta: Vec<f64> = (0..q)
                    .map(|i| alpha * step[o + i])
                    .collect();
                let dd = r.layout.unpack(&delta);
                let chol_cur = cur.blocks[n].chol.as_ref()?;
                // E = L^-1 dD L^-H.
                let mut e = dd;
                chol_cur.l().solve_lower_triangular_mut(&mut e);
                let mut et = e.adjoint();
                chol_cur.l().solve_lower_triangular_mut(&mut et);
                let e = et.adjoint();
                let delta_lndet = lndet_identity_plus(&e)?;
                let d_new = r.layout.unpack(new_coords);
                let chol_new = checked_cholesky(&d_new)?;
                (Some(chol_new), delta_lndet)
            }
        };
        let lndet = cur.blocks[n].lndet + delta_lndet;
        let d_tr_yd: f64 = (0..q).map(|i| r.gy[i] * alpha * step[o + i]).sum();
        let delta_rupp = ctx.sample_rate * (-delta_lndet + d_tr_yd) / LN2;
        let a_new = ctx.share_of(&x_new, n);
        let delta_budget = if ctx.shared {
            let a_cur = ctx.share_of(&cur.x, n);
            if !(a_new > 0.0) {
                return None;
            }
            share_sum += a_new;
            (a_new - a_cur) * r.capacity
        } else {
            0.0
        };
        let slack = cur.blocks[n].slack + delta_budget - delta_rupp;
        if !(slack > 0.0) || !slack.is_finite() {
            return None;
        }
        blocks.push(BlockState { chol, lndet, slack });
    }
    if ctx.shared && !(share_sum < 1.0) {
        return None;
    }
    Some(Point { x: x_new, blocks, share_sum })
}

/// Barrier objective `t * f + phi` at a point.
fn barrier_value(ctx: &ProblemCtx, point: &Point, t: f64) -> f64 {
    let mut val = 0.0;
    for (n, r) in ctx.radars.iter().enumerate() {
        let o = ctx.offsets[n];
        let theta = point.x.rows(o, r.layout.coord_len());
        val += t * r.gm.dot(&theta);
        val += -point.blocks[n].lndet - point.blocks[n].slack.ln();
        if ctx.shared {
            val -= ctx.share_of(&point.x, n).ln();
        }
    }
    if ctx.shared {
        val -= (1.0 - point.share_sum).ln();
    }
    val
}

/// D^-1 of block `n` at a point, symmetrized.
fn block_inverse(ctx: &ProblemCtx, point: &Point, n: usize) -> DMatrix<Complex64> {
    let r = &ctx.radars[n];
    let o = ctx.offsets[n];
    match r.layout.mode {
        QuantMode::Afvq => {
            let p = r.layout.p;
            let mut inv = DMatrix::zeros(p, p);
            for i in 0..p {
                inv[(i, i)] = Complex64::new(1.0 / point.x[o + i], 0.0);
            }
            inv
        }
        QuantMode::Rvq => {
            let chol = point.blocks[n].chol.as_ref().expect("RVQ block has a factor");
            let mut inv = chol.inverse();
            let invh = inv.adjoint();
            inv = (inv + invh) * Complex64::new(0.5, 0.0);
            inv
        }
    }
}

/// Assembled barrier gradient at a point (diagnostic path).
#[allow(dead_code)]
fn assemble_gradient(ctx: &ProblemCtx, point: &Point, t: f64) -> DVector<f64> {
    let inv_gap = if ctx.shared { 1.0 / (1.0 - point.share_sum) } else { 0.0 };
    let mut grad = DVector::zeros(ctx.total_len);
    for (n, r) in ctx.radars.iter().enumerate() {
        let o = ctx.offsets[n];
        let q = r.layout.coord_len();
        let slack = point.blocks[n].slack;
        let d_inv = block_inverse(ctx, point, n);
        let gdinv = r.layout.grad_coords(&d_inv);
        let g_rate = (&r.gy - &gdinv) * (ctx.sample_rate / LN2);
        for i in 0..q {
            grad[o + i] = t * r.gm[i] - gdinv[i] + g_rate[i] / slack;
        }
        if ctx.shared {
            let a = ctx.share_of(&point.x, n);
            grad[o + q] = -r.capacity / slack - 1.0 / a + inv_gap;
        }
    }
    grad
}

/// Hessian-vector product of the barrier at a point (diagnostic path).
#[allow(dead_code)]
fn apply_hessian(ctx: &ProblemCtx, point: &Point, w: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(ctx.total_len);
    let inv_gap = if ctx.shared { 1.0 / (1.0 - point.share_sum) } else { 0.0 };
    let mut u_dot_w = 0.0;
    for (n, r) in ctx.radars.iter().enumerate() {
        let o = ctx.offsets[n];
        let q = r.layout.coord_len();
        let slack = point.blocks[n].slack;
        let d_inv = block_inverse(ctx, point, n);
        let gdinv = r.layout.grad_coords(&d_inv);
        let rate_scale = ctx.sample_rate / LN2;
        let g_rate = (&r.gy - &gdinv) * rate_scale;
        let h_ld = r.layout.hess_logdet(&d_inv);
        let ld_w = 1.0 + rate_scale / slack;
        let wd = w.rows(o, q).clone_owned();
        let mut hv = &h_ld * &wd * ld_w;
        let mut rank1 = g_rate.dot(&wd);
        if ctx.shared {
            let a = ctx.share_of(&point.x, n);
            let wa = w[o + q];
            rank1 += -r.capacity * wa;
            let cross = rank1 / (slack * slack);
            out[o + q] = -r.capacity * cross + wa / (a * a);
            u_dot_w += wa;
            hv += &g_rate * cross;
        } else {
            hv += &g_rate * (rank1 / (slack * slack));
        }
        for i in 0..q {
            out[o + i] = hv[i];
        }
    }
    if ctx.shared {
        let rho = inv_gap * inv_gap;
        for (n, r) in ctx.radars.iter().enumerate() {
            let o = ctx.offsets[n];
            out[o + r.layout.coord_len()] += rho * u_dot_w;
        }
    }
    out
}

/// Newton step in locally scaled coordinates `dD = L W L^H` (with
/// `L L^H = D` the current Cholesky factor), plus the Sherman-Morrison
/// correction for the `-ln(1 - sum a)` coupling. Returns the step in the
/// original coordinates and the Newton decrement `lambda^2`.
///
/// In W-coordinates the log-det Hessian is the constant diagonal Gram
/// matrix of the Hermitian basis (1 for diagonal entries, 2 for off-diagonal
/// pairs) and the gradient of `-ln det D` is exactly `-I`, so each block
/// system is diagonal plus one rank-one term and is solved in closed form.
/// This keeps the step accurate regardless of the conditioning of `D`.
fn newton_step(ctx: &ProblemCtx, point: &Point, t: f64) -> Result<(DVector<f64>, f64)> {
    let inv_gap = if ctx.shared { 1.0 / (1.0 - point.share_sum) } else { 0.0 };
    let mut lambda2 = 0.0;
    let mut step_x = DVector::zeros(ctx.total_len);
    // Per-block pieces retained for the global share coupling.
    let mut g_blocks: Vec<DVector<f64>> = Vec::with_capacity(ctx.radars.len());
    let mut z_blocks: Vec<DVector<f64>> = Vec::with_capacity(ctx.radars.len());
    let mut v_blocks: Vec<DVector<f64>> = Vec::with_capacity(ctx.radars.len());
    let mut u_dot_z = 0.0;
    let mut u_dot_v = 0.0;
    let rate_scale = ctx.sample_rate / LN2;

    for (n, r) in ctx.radars.iter().enumerate() {
        let o = ctx.offsets[n];
        let q = r.layout.coord_len();
        let b_len = ctx.block_len(n);
        let slack = point.blocks[n].slack;
        let p = r.layout.p;

        // Cost and auxiliary blocks congruence-transformed by L.
        let (gm_w, gy_w) = match r.layout.mode {
            QuantMode::Afvq => {
                let mut gm_w = DVector::zeros(q);
                let mut gy_w = DVector::zeros(q);
                for i in 0..p {
                    let d = point.x[o + i];
                    gm_w[i] = d * r.m_mat[(i, i)].re;
                    gy_w[i] = d * r.y_mat[(i, i)].re;
                }
                (gm_w, gy_w)
            }
            QuantMode::Rvq => {
                let l = point.blocks[n].chol.as_ref().expect("RVQ factor").l();
                let m_w = l.adjoint() * &r.m_mat * &l;
                let y_w = l.adjoint() * &r.y_mat * &l;
                (r.layout.grad_coords(&m_w), r.layout.grad_coords(&y_w))
            }
        };

        // Gradient in W-coordinates: grad(-ln det) is exactly -I.
        let mut g_block = DVector::zeros(b_len);
        let mut g_rate_w = DVector::zeros(q);
        for i in 0..q {
            let ident = if i < p { 1.0 } else { 0.0 };
            g_rate_w[i] = rate_scale * (gy_w[i] - ident);
            g_block[i] = t * gm_w[i] - ident + g_rate_w[i] / slack;
        }
        if ctx.shared {
            let a = ctx.share_of(&point.x, n);
            g_block[q] = -r.capacity / slack - 1.0 / a + inv_gap;
        }

        // Block Hessian in W-coordinates: Dq + w w^T / slack^2 with Dq the
        // diagonal (1 + rate_scale/slack) * gram (plus 1/a^2 for the share)
        // and w = (g_rate_w, -C).
        let ld_w = 1.0 + rate_scale / slack;
        let mut dq = DVector::zeros(b_len);
        for i in 0..q {
            let gram = if i < p { 1.0 } else { 2.0 };
            dq[i] = ld_w * gram;
        }
        let mut w_vec = DVector::zeros(b_len);
        for i in 0..q {
            w_vec[i] = g_rate_w[i];
        }
        if ctx.shared {
            let a = ctx.share_of(&point.x, n);
            dq[q] = 1.0 / (a * a);
            w_vec[q] = -r.capacity;
        }
        let s2 = slack * slack;
        let w_dq: DVector<f64> = DVector::from_fn(b_len, |i, _| w_vec[i] / dq[i]);
        let denom = s2 + w_vec.dot(&w_dq);
        let solve_block = |rhs: &DVector<f64>| -> DVector<f64> {
            let base = DVector::from_fn(b_len, |i, _| rhs[i] / dq[i]);
            let coef = w_vec.dot(&base) / denom;
            &base - &w_dq * coef
        };

        let z_n = solve_block(&(-&g_block));
        if ctx.shared {
            let mut e_a = DVector::zeros(b_len);
            e_a[q] = 1.0;
            let v_n = solve_block(&e_a);
            u_dot_z += z_n[q];
            u_dot_v += v_n[q];
            v_blocks.push(v_n);
        } else {
            v_blocks.push(DVector::zeros(0));
        }
        g_blocks.push(g_block);
        z_blocks.push(z_n);
    }

    let gamma = if ctx.shared {
        let rho = inv_gap * inv_gap;
        rho * u_dot_z / (1.0 + rho * u_dot_v)
    } else {
        0.0
    };

    for (n, r) in ctx.radars.iter().enumerate() {
        let o = ctx.offsets[n];
        let q = r.layout.coord_len();
        let p = r.layout.p;
        let delta_w = if ctx.shared {
            &z_blocks[n] - &v_blocks[n] * gamma
        } else {
            z_blocks[n].clone()
        };
        lambda2 += -g_blocks[n].dot(&delta_w);
        // Convert the W-step back to the original coordinates.
        match r.layout.mode {
            QuantMode::Afvq => {
                for i in 0..p {
                    step_x[o + i] = point.x[o + i] * delta_w[i];
                }
            }
            QuantMode::Rvq => {
                let l = point.blocks[n].chol.as_ref().expect("RVQ factor").l();
                let w_mat = r.layout.unpack(&delta_w.as_slice()[..q]);
                let dd = &l * w_mat * l.adjoint();
                let coords = r.layout.pack(&dd);
                step_x.rows_mut(o, q).copy_from(&coords);
            }
        }
        if ctx.shared {
            step_x[o + q] = delta_w[q];
        }
    }

    if !lambda2.is_finite() {
        return Err(Error::Numeric("Newton decrement is not finite".into()));
    }
    Ok((step_x, lambda2))
}

/// Centers the barrier objective at parameter `t` starting from `point`.
fn center(ctx: &ProblemCtx, point: &mut Point, t: f64) -> Result<()> {
    let mut polish_done = false;
    let mut best_lambda2 = f64::INFINITY;
    let mut stalled = 0usize;
    let trace = std::env::var_os("RADNET_TRACE").is_some();
    for iter in 0..MAX_NEWTON_PER_STAGE {
        let (step, lambda2) = newton_step(ctx, point, t)?;
        if trace {
            let slacks: Vec<String> =
                point.blocks.iter().map(|b| format!("{:.3e}", b.slack)).collect();
            // Probe 1: does H*step equal -g (solve accuracy in H metric)?
            let g0 = assemble_gradient(ctx, point, t);
            let hstep = apply_hessian(ctx, point, &step);
            let solve_err = (&hstep + &g0).dot(&step).abs() / lambda2.max(1e-300);
            // Probe 2: does the Hessian match gradient differences?
            let h = 1e-5;
            let fd = match (try_step(ctx, point, &step, h), try_step(ctx, point, &step, -h)) {
                (Some(pp), Some(pm)) => {
                    let g1 = assemble_gradient(ctx, &pp, t);
                    let gm = assemble_gradient(ctx, &pm, t);
                    let dg = (&g1 - &gm) / (2.0 * h);
                    (&dg - &hstep).dot(&step).abs() / lambda2.max(1e-300)
                }
                _ => f64::NAN,
            };
            let _ = fd;
            let fd2 = fd;
            let mut per_block = String::new();
            for (n, r) in ctx.radars.iter().enumerate() {
                let o = ctx.offsets[n];
                let b_len = ctx.block_len(n);
                let mut acc = 0.0;
                for i in 0..b_len {
                    acc += -0.0; let _ = i;
                }
                let _ = acc;
                let d = ctx.unpack_distortion(&point.x, n);
                let eigs = d.to_matrix().symmetric_eigenvalues();
                let dmin = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
                let dmax = eigs.iter().cloned().fold(0.0f64, f64::max);
                let gseg = point.x.rows(o, b_len); let _ = gseg;
                per_block
                    .push_str(&format!(" b{n}[d {dmin:.2e}..{dmax:.2e}]"));
            }
            eprintln!(
                "t={t:.1e} iter={iter} l2/2={:.3e} solve_err={solve_err:.3e} hess_err={fd2:.3e}{per_block} slacks=[{}]",
                lambda2 / 2.0,
                slacks.join(",")
            );
        }

        if lambda2 / 2.0 <= NEWTON_DECREMENT_TOL {
            if polish_done {
                return Ok(());
            }
            // One undamped polish step to push the gradient toward zero.
            if let Some(next) = try_step(ctx, point, &step, 1.0) {
                *point = next;
            }
            polish_done = true;
            continue;
        }
        polish_done = false;

        if lambda2 <= 0.0625 {
            // Floating-point floor detection: in the quadratic phase the
            // decrement must contract; when it stops improving the stage is
            // resolved as far as f64 allows, and lambda <= 1/4 keeps the
            // gap certificate intact.
            if lambda2 < best_lambda2 * (1.0 - 1e-3) {
                best_lambda2 = lambda2;
                stalled = 0;
            } else {
                stalled += 1;
                if stalled >= 40 {
                    if best_lambda2 / 2.0 <= 0.03 {
                        return Ok(());
                    }
                    return Err(Error::Numeric(format!(
                        "Newton stagnated at stage t = {t:.3e} with decrement^2/2 = {:.3e}",
                        best_lambda2 / 2.0
                    )));
                }
            }
            // Quadratic-convergence phase (lambda <= 1/4): the full Newton
            // step is guaranteed by self-concordance, and barrier-value
            // comparisons at large t are below f64 resolution anyway.
            let mut alpha = 1.0;
            let mut accepted = false;
            while alpha >= 1e-18 {
                if let Some(next) = try_step(ctx, point, &step, alpha) {
                    if next.x == point.x {
                        // The step vanished in floating point: fully resolved.
                        return Ok(());
                    }
                    *point = next;
                    accepted = true;
                    break;
                }
                alpha *= ARMIJO_BACKTRACK;
            }
            if trace && alpha < 1.0 {
                eprintln!("  quadratic-phase alpha {alpha:.3e} at iter {iter}");
            }
            if !accepted {
                return Err(Error::Numeric(format!(
                    "Newton step left the domain at stage t = {t:.3e}, iteration {iter}"
                )));
            }
            continue;
        }

        // Damped phase: Armijo backtracking on the barrier value.
        let f0 = barrier_value(ctx, point, t);
        let slope = -lambda2;
        let mut alpha = 1.0;
        let mut accepted = false;
        while alpha >= 1e-18 {
            if let Some(next) = try_step(ctx, point, &step, alpha) {
                let f1 = barrier_value(ctx, &next, t);
                if f1 <= f0 + ARMIJO_SLOPE * alpha * slope {
                    *point = next;
                    accepted = true;
                    break;
                }
            }
            alpha *= ARMIJO_BACKTRACK;
        }
        if !accepted {
            return Err(Error::Numeric(format!(
                "Newton line search stalled at stage t = {t:.3e}, iteration {iter}, \
                 decrement^2/2 = {:.3e}",
                lambda2 / 2.0
            )));
        }
    }
    // Iteration budget exhausted: accept if the point is inside the
    // quadratic-convergence region (the gap certificate still holds with
    // lambda < 1/4), otherwise report the failure.
    let (_, lambda2) = newton_step(ctx, point, t)?;
    if lambda2 / 2.0 <= 0.03 {
        return Ok(());
    }
    Err(Error::Numeric(format!(
        "Newton did not center within {MAX_NEWTON_PER_STAGE} iterations at t = {t:.3e}          (decrement^2/2 = {:.3e})",
        lambda2 / 2.0
    )))
}

pub(super) fn solve(
    problem: &InnerProblem,
    start: &StartPoint,
    tol: f64,
) -> Result<InnerSolution> {
    let ctx = ProblemCtx::build(problem)?;
    if start.distortion.len() != ctx.radars.len()
        || (ctx.shared && start.shares.len() != ctx.radars.len())
    {
        return Err(Error::InvalidArgument("start point block count mismatch".into()));
    }
    for (n, d) in start.distortion.iter().enumerate() {
        if d.mode() != problem.mode || d.dim() != ctx.radars[n].layout.p {
            return Err(Error::InvalidArgument(format!(
                "start distortion block {n} has the wrong mode or dimension"
            )));
        }
    }
    let shares = if ctx.shared {
        start.shares.clone()
    } else {
        vec![1.0; ctx.radars.len()]
    };
    let x = ctx.pack_point(&start.distortion, &shares);
    let mut point = point_from_scratch(&ctx, x).ok_or_else(|| {
        Error::InvalidArgument("start point is not strictly feasible for the barrier".into())
    })?;

    // Stage schedule t0, 10 t0, ... capped at exactly degree/tol so the
    // final duality measure does not overshoot into needlessly deep
    // (numerically hostile) territory. The initial parameter is scaled to
    // the objective so the first centering is barrier-dominated even when
    // the cost blocks are large.
    let t_target = (ctx.constraint_count / tol).max(1.0);
    let f_lin: f64 = (0..ctx.radars.len())
        .map(|n| {
            let o = ctx.offsets[n];
            let theta = point.x.rows(o, ctx.radars[n].layout.coord_len());
            ctx.radars[n].gm.dot(&theta)
        })
        .sum();
    let mut t = (ctx.constraint_count / (1.0 + f_lin.abs())).min(1.0).min(t_target);
    let mut stage_objectives = Vec::new();
    loop {
        center(&ctx, &mut point, t)?;
        let distortion: Vec<DistortionBlock> =
            (0..ctx.radars.len()).map(|n| ctx.unpack_distortion(&point.x, n)).collect();
        stage_objectives.push(problem.objective(&distortion));
        if t >= t_target {
            break;
        }
        t = (t * BARRIER_GROWTH).min(t_target);
    }

    let distortion: Vec<DistortionBlock> =
        (0..ctx.radars.len()).map(|n| ctx.unpack_distortion(&point.x, n)).collect();
    let shares: Vec<f64> = (0..ctx.radars.len()).map(|n| ctx.share_of(&point.x, n)).collect();
    let rate_slacks: Vec<f64> = point.blocks.iter().map(|b| b.slack).collect();
    let objective = problem.objective(&distortion);
    let kkt = kkt_report_inner(problem, &distortion, &shares, t, Some(&rate_slacks))?;
    Ok(InnerSolution {
        distortion,
        shares,
        objective,
        kkt,
        barrier_t: t,
        rate_slacks,
        stage_objectives,
    })
}

pub(super) fn kkt_report(
    problem: &InnerProblem,
    distortion: &[DistortionBlock],
    shares: &[f64],
    t: f64,
    slacks: Option<&[f64]>,
) -> Result<KktReport> {
    kkt_report_inner(problem, distortion, shares, t, slacks)
}

/// Stationarity, feasibility and complementarity of a candidate point with
/// barrier-recovered multipliers `lambda_i = 1/(t slack_i)`. The solver's
/// maintained slacks are used when supplied; otherwise slacks are
/// recomputed from the point.
fn kkt_report_inner(
    problem: &InnerProblem,
    distortion: &[DistortionBlock],
    shares: &[f64],
    t: f64,
    slacks: Option<&[f64]>,
) -> Result<KktReport> {
    let ctx = ProblemCtx::build(problem)?;
    let x = ctx.pack_point(distortion, shares);
    let point = point_from_scratch(&ctx, x)
        .ok_or_else(|| Error::InvalidArgument("point is not strictly feasible".into()))?;

    let inv_gap = if ctx.shared { 1.0 / (1.0 - point.share_sum) } else { 0.0 };
    let rho = inv_gap / t; // multiplier of sum a <= 1
    let mut stationarity: f64 = 0.0;
    let mut primal: f64 = 0.0;
    let mut compl_gap = 0.0;

    for (n, r) in ctx.radars.iter().enumerate() {
        let slack = match slacks {
            Some(s) => s[n],
            None => point.blocks[n].slack,
        };
        if !(slack > 0.0) {
            return Err(Error::InvalidArgument("nonpositive slack in KKT recovery".into()));
        }
        let lambda = 1.0 / (t * slack); // rate-constraint multiplier
        let d_inv = block_inverse(&ctx, &point, n);
        let gdinv = r.layout.grad_coords(&d_inv);
        let g_rate = (&r.gy - &gdinv) * (ctx.sample_rate / LN2);
        // Stationarity over the distortion coordinates:
        // M_n + lambda * grad R_upp - Z_n with Z_n = D^-1 / t.
        for i in 0..r.layout.coord_len() {
            let res = r.gm[i] + lambda * g_rate[i] - gdinv[i] / t;
            stationarity = stationarity.max(res.abs());
        }
        if ctx.shared {
            let a = shares[n];
            let nu = 1.0 / (t * a);
            let res = -lambda * r.capacity - nu + rho;
            stationarity = stationarity.max(res.abs());
            primal = primal.max(-a);
            compl_gap += nu * a;
        }
        // Primal feasibility from the recomputed (scratch) slack.
        primal = primal.max(-point.blocks[n].slack);
        let min_eig = distortion[n].min_eigenvalue();
        primal = primal.max(-min_eig);
        compl_gap += lambda * slack;
        // PSD-cone complementarity tr(Z_n D_n) = p/t at the barrier center.
        let dm = distortion[n].to_matrix();
        let mut tr_zd = 0.0;
        for i in 0..r.layout.p {
            for j in 0..r.layout.p {
                tr_zd += (d_inv[(i, j)] * dm[(j, i)]).re / t;
            }
        }
        compl_gap += tr_zd;
    }
    if ctx.shared {
        primal = primal.max(point.share_sum - 1.0);
        compl_gap += rho * (1.0 - point.share_sum);
    }

    Ok(KktReport {
        stationarity,
        primal_feasibility: primal.max(0.0),
        duality_measure: ctx.barrier_degree / t,
        complementarity_gap: compl_gap,
    })
}



#[cfg(test)]
mod newton_consistency_tests {
    use super::*;
    use crate::ratemodel::AuxiliaryBlock;
    use crate::solver::CostModel;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn gradient_and_hessian_match_finite_differences_of_the_barrier() {
        let mut rng = StdRng::seed_from_u64(4242);
        for trial in 0..20 {
            let n = rng.gen_range(1..=3usize);
            let p = rng.gen_range(1..=3usize);
            let shared = trial % 2 == 0;
            let mode = if trial % 4 < 2 { QuantMode::Afvq } else { QuantMode::Rvq };
            let mk_pd = |rng: &mut StdRng, scale: f64| -> DMatrix<Complex64> {
                let r = DMatrix::from_fn(p, p, |_, _| {
                    Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
                });
                let mut m = &r * r.adjoint() * Complex64::new(scale, 0.0);
                for i in 0..p {
                    m[(i, i)] += Complex64::new(0.2 * scale, 0.0);
                }
                let mh = m.adjoint();
                (m + mh) * Complex64::new(0.5, 0.0)
            };
            let k_blocks: Vec<_> = (0..n).map(|_| mk_pd(&mut rng, 1.0)).collect();
            let cost_blocks: Vec<_> = (0..n).map(|_| mk_pd(&mut rng, 0.5)).collect();
            let d0: Vec<DistortionBlock> = (0..n)
                .map(|_| {
                    let scale = rng.gen_range(0.5..2.0);
                    let m = mk_pd(&mut rng, scale);
                    match mode {
                        QuantMode::Afvq => DistortionBlock::Afvq(diag_re(&m)),
                        QuantMode::Rvq => DistortionBlock::Rvq(m),
                    }
                })
                .collect();
            let aux: Vec<AuxiliaryBlock> = (0..n)
                .map(|i| {
                    let level = rng.gen_range(0.5..2.0);
                    crate::ratemodel::optimal_auxiliary(
                        &k_blocks[i],
                        &DistortionBlock::uniform(mode, p, level),
                    )
                    .unwrap()
                })
                .collect();
            // Budget with a random (sometimes small) slack above R_upp(d0).
            let capacities: Vec<f64> = (0..n)
                .map(|i| {
                    let u = crate::ratemodel::rate_upper(&d0[i], &aux[i], &k_blocks[i], 1.0)
                        .unwrap();
                    let share = if shared { (1.0 - 1e-3) / n as f64 } else { 1.0 };
                    (u + 10f64.powf(rng.gen_range(-6.0..0.0))) / share
                })
                .collect();
            let problem = InnerProblem {
                cost: CostModel { blocks: cost_blocks, constant: 0.0 },
                aux,
                k_blocks,
                capacities,
                sample_rate: 1.0,
                mode,
                fronthaul: if shared { FronthaulMode::Shared } else { FronthaulMode::Dedicated },
            };
            let ctx = ProblemCtx::build(&problem).unwrap();
            let shares = vec![(1.0 - 1e-3) / n as f64; n];
            let x = ctx.pack_point(&d0, &shares);
            let point = point_from_scratch(&ctx, x.clone()).expect("feasible test point");
            let t = 10f64.powf(rng.gen_range(0.0..6.0));

            // Assemble the analytic gradient (same code path as newton_step).
            let (step, lambda2) = newton_step(&ctx, &point, t).unwrap();
            assert!(lambda2 > 0.0);

            // FD of the barrier value against the analytic gradient, and
            // H * step against -g through a directional second difference.
            let value_at = |xq: &DVector<f64>| -> Option<f64> {
                point_from_scratch(&ctx, xq.clone()).map(|pt| barrier_value(&ctx, &pt, t))
            };
            let f0 = value_at(&x).unwrap();
            // Directional derivative along the Newton step must equal
            // -lambda^2 (i.e. g . step).
            let mut h = 1e-7 / (1.0 + step.norm());
            let mut measured = None;
            for _ in 0..20 {
                let fp = value_at(&(&x + &step * h));
                let fm = value_at(&(&x - &step * h));
                if let (Some(fp), Some(fm)) = (fp, fm) {
                    measured = Some((fp - fm) / (2.0 * h));
                    break;
                }
                h *= 0.25;
            }
            let measured = measured.expect("directional derivative");
            let expect = -lambda2;
            assert!(
                (measured - expect).abs() <= 2e-3 * expect.abs().max(1e-6) + 1e-5 * f0.abs().max(1.0) * 1e-6,
                "trial {trial}: directional derivative {measured:.6e} vs -lambda2 {expect:.6e}"
            );
        }
    }
}
