//! Dense primal-dual interior-point solver for small semidefinite programs
//! with one PSD block plus linear inequalities.
//!
//! Primal: `min ⟨C, X⟩` s.t. `⟨A_ℓ, X⟩ ≥ b_ℓ`, `⟨E_ℓ, X⟩ = c_ℓ`, `X ⪰ 0`.
//! Inequalities get nonnegative slacks; the search direction is HKM with a
//! Mehrotra predictor-corrector.

mod extract;

pub use extract::{extract_position, refine, repair, Extraction, ExtractionError, ExtractionMethod};

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SdpError {
    #[error("invalid SDP: {0}")]
    Invalid(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

/// Symmetric matrix stored as upper-triangle triplets `(i, j, v)`, `i ≤ j`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseSym {
    entries: Vec<(usize, usize, f64)>,
}

impl SparseSym {
    /// Entries with `i > j` are mirrored to the upper triangle; repeated
    /// positions add up.
    pub fn from_entries(entries: impl IntoIterator<Item = (usize, usize, f64)>) -> Self {
        Self {
            entries: entries
                .into_iter()
                .filter(|e| e.2 != 0.0)
                .map(|(i, j, v)| (i.min(j), i.max(j), v))
                .collect(),
        }
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut entries = Vec::new();
        for j in 0..m.ncols() {
            for i in 0..=j {
                let v = 0.5 * (m[(i, j)] + m[(j, i)]);
                if v != 0.0 {
                    entries.push((i, j, v));
                }
            }
        }
        Self { entries }
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    /// `⟨A, Y⟩ = tr(A Y)`; `Y` need not be symmetric.
    pub fn inner(&self, y: &DMatrix<f64>) -> f64 {
        self.entries
            .iter()
            .map(|&(i, j, v)| if i == j { v * y[(i, i)] } else { v * (y[(i, j)] + y[(j, i)]) })
            .sum()
    }

    /// `m += alpha · A`.
    pub fn add_to(&self, alpha: f64, m: &mut DMatrix<f64>) {
        for &(i, j, v) in &self.entries {
            m[(i, j)] += alpha * v;
            if i != j {
                m[(j, i)] += alpha * v;
            }
        }
    }

    pub fn to_dense(&self, dim: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(dim, dim);
        self.add_to(1.0, &mut m);
        m
    }

    fn max_index(&self) -> Option<usize> {
        self.entries.iter().map(|&(_, j, _)| j).max()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub matrix: SparseSym,
    pub rhs: f64,
}

impl LinearConstraint {
    pub fn new(matrix: SparseSym, rhs: f64) -> Self {
        Self { matrix, rhs }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpProblem {
    pub dim: usize,
    pub objective: DMatrix<f64>,
    /// `⟨A_ℓ, X⟩ ≥ b_ℓ`.
    pub inequalities: Vec<LinearConstraint>,
    /// `⟨E_ℓ, X⟩ = c_ℓ`.
    pub equalities: Vec<LinearConstraint>,
}

impl SdpProblem {
    pub fn validate(&self) -> Result<(), SdpError> {
        let d = self.dim;
        if d == 0 {
            return Err(SdpError::Invalid("block dimension must be at least 1".into()));
        }
        if self.objective.shape() != (d, d) {
            return Err(SdpError::Invalid(format!("objective is {:?}, expected {d}x{d}", self.objective.shape())));
        }
        let c = &self.objective;
        let scale = 1.0 + c.amax();
        if (c - c.transpose()).amax() > 1e-12 * scale {
            return Err(SdpError::Invalid("objective is not symmetric".into()));
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(SdpError::Invalid("objective is not finite".into()));
        }
        for con in self.inequalities.iter().chain(&self.equalities) {
            if con.matrix.max_index().is_some_and(|k| k >= d) {
                return Err(SdpError::Invalid("constraint index outside the block".into()));
            }
            if !con.rhs.is_finite() || con.matrix.entries.iter().any(|e| !e.2.is_finite()) {
                return Err(SdpError::Invalid("constraint data is not finite".into()));
            }
        }
        Ok(())
    }

    fn constraints(&self) -> impl Iterator<Item = &LinearConstraint> {
        self.inequalities.iter().chain(&self.equalities)
    }

    fn rhs(&self) -> DVector<f64> {
        DVector::from_iterator(self.inequalities.len() + self.equalities.len(), self.constraints().map(|c| c.rhs))
    }

    /// `𝒜(X)`.
    pub fn apply(&self, x: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.inequalities.len() + self.equalities.len(),
            self.constraints().map(|c| c.matrix.inner(x)),
        )
    }

    /// `𝒜*(y) = Σ y_ℓ A_ℓ`.
    pub fn adjoint(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for (c, &yl) in self.constraints().zip(y.iter()) {
            c.matrix.add_to(yl, &mut m);
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdpStatus {
    Optimal,
    MaxIterations,
    /// Factorizations broke down before reaching the tolerance; the best
    /// iterate is returned.
    Stalled,
    Infeasible,
}

/// Residuals and objectives of one interior-point iterate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterateRecord {
    pub primal_objective: f64,
    pub dual_objective: f64,
    /// `‖b − 𝒜(X) + x‖ / (1 + ‖b‖)`.
    pub primal_infeasibility: f64,
    /// `‖(C − 𝒜*(y) − S, y_I − s)‖ / (1 + ‖C‖_F)`.
    pub dual_infeasibility: f64,
    /// `|p − d| / (1 + |p| + |d|)`.
    pub gap: f64,
}

impl IterateRecord {
    fn error(&self) -> f64 {
        self.primal_infeasibility.max(self.dual_infeasibility).max(self.gap)
    }
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub x: DMatrix<f64>,
    pub s: DMatrix<f64>,
    /// Multipliers, inequalities first then equalities.
    pub y: DVector<f64>,
    pub objective: f64,
    pub status: SdpStatus,
    pub iterations: usize,
    pub gap: f64,
    pub history: Vec<IterateRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdpOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub step_fraction: f64,
    /// Certificate ratio above which the problem is declared infeasible.
    pub infeasibility_ratio: f64,
}

impl Default for SdpOptions {
    fn default() -> Self {
        Self { tolerance: 1e-7, max_iterations: 200, step_fraction: 0.99, infeasibility_ratio: 1e8 }
    }
}

struct Iterate {
    x: DMatrix<f64>,
    s: DMatrix<f64>,
    y: DVector<f64>,
    xl: DVector<f64>,
    sl: DVector<f64>,
}

struct Direction {
    dx: DMatrix<f64>,
    ds: DMatrix<f64>,
    dy: DVector<f64>,
    dxl: DVector<f64>,
    dsl: DVector<f64>,
}

pub fn solve_sdp(p: &SdpProblem, tol: f64) -> Result<SdpSolution, SdpError> {
    solve_sdp_with(p, &SdpOptions { tolerance: tol, ..SdpOptions::default() })
}

pub fn solve_sdp_with(p: &SdpProblem, opts: &SdpOptions) -> Result<SdpSolution, SdpError> {
    p.validate()?;
    let d = p.dim;
    let n_ineq = p.inequalities.len();
    let n_con = n_ineq + p.equalities.len();
    let b = p.rhs();
    let c = &p.objective;
    let c_norm = c.norm();
    let b_norm = b.norm();
    let nu = (d + n_ineq) as f64;

    let eta = 10.0 * 1f64.max(c_norm).max(b.amax());
    let mut it = Iterate {
        x: DMatrix::identity(d, d) * eta,
        s: DMatrix::identity(d, d) * eta,
        y: DVector::zeros(n_con),
        xl: DVector::from_element(n_ineq, eta),
        sl: DVector::from_element(n_ineq, eta),
    };

    let mut history = Vec::new();
    let mut best: Option<(f64, DMatrix<f64>, DMatrix<f64>, DVector<f64>, IterateRecord)> = None;
    let mut stalled = None;

    for iteration in 0..=opts.max_iterations {
        // residuals
        let mut r_p = &b - p.apply(&it.x);
        for l in 0..n_ineq {
            r_p[l] += it.xl[l];
        }
        let r_d = c - p.adjoint(&it.y) - &it.s;
        let r_lp = it.y.rows(0, n_ineq) - &it.sl;
        let pobj = c.dot(&it.x);
        let dobj = b.dot(&it.y);
        let record = IterateRecord {
            primal_objective: pobj,
            dual_objective: dobj,
            primal_infeasibility: r_p.norm() / (1.0 + b_norm),
            dual_infeasibility: (r_d.norm_squared() + r_lp.norm_squared()).sqrt() / (1.0 + c_norm),
            gap: (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs()),
        };
        history.push(record);
        if best.as_ref().is_none_or(|b| record.error() < b.0) {
            best = Some((record.error(), it.x.clone(), it.s.clone(), it.y.clone(), record));
        }

        let finish = |status, it: &Iterate, history: Vec<IterateRecord>, record: IterateRecord| SdpSolution {
            x: it.x.clone(),
            s: it.s.clone(),
            y: it.y.clone(),
            objective: record.primal_objective,
            status,
            iterations: iteration,
            gap: record.gap,
            history,
        };

        if record.error() <= opts.tolerance {
            return Ok(finish(SdpStatus::Optimal, &it, history, record));
        }
        if certifies_infeasibility(p, &it, &record, opts) {
            return Ok(finish(SdpStatus::Infeasible, &it, history, record));
        }
        if iteration == opts.max_iterations {
            break;
        }

        let mu = (it.x.dot(&it.s) + it.xl.dot(&it.sl)) / nu;
        let factors = Cholesky::new(it.s.clone())
            .ok_or_else(|| SdpError::Numerical("dual matrix lost definiteness".into()))
            .and_then(|chol_s| {
                let w = chol_s.inverse();
                let chol_x = Cholesky::new(it.x.clone())
                    .ok_or_else(|| SdpError::Numerical("primal matrix lost definiteness".into()))?;
                let system = NormalSystem::assemble(p, &it, &w)?;
                Ok((chol_s, w, chol_x, system))
            });
        let (chol_s, w, chol_x, system) = match factors {
            Ok(f) => f,
            // round-off near a rank-deficient optimum; fall back to the best iterate
            Err(e) if iteration > 0 => {
                log::debug!("SDP stalled at iteration {iteration}: {e}");
                stalled = Some(iteration);
                break;
            }
            Err(e) => return Err(e),
        };

        // predictor
        let k0 = DMatrix::zeros(d, d);
        let kl0 = DVector::zeros(n_ineq);
        let aff = system.direction(p, &it, &w, &r_p, &r_d, &r_lp, &k0, &kl0);
        let ap = step_length(&chol_x, &aff.dx, &it.xl, &aff.dxl, 1.0);
        let ad = step_length(&chol_s, &aff.ds, &it.sl, &aff.dsl, 1.0);
        let mu_aff = ((&it.x + ap * &aff.dx).dot(&(&it.s + ad * &aff.ds))
            + (&it.xl + ap * &aff.dxl).dot(&(&it.sl + ad * &aff.dsl)))
            / nu;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

        // corrector
        let k = DMatrix::identity(d, d) * (sigma * mu) - &aff.dx * &aff.ds;
        let kl = DVector::from_element(n_ineq, sigma * mu) - aff.dxl.component_mul(&aff.dsl);
        let dir = system.direction(p, &it, &w, &r_p, &r_d, &r_lp, &k, &kl);
        let ap = step_length(&chol_x, &dir.dx, &it.xl, &dir.dxl, opts.step_fraction);
        let ad = step_length(&chol_s, &dir.ds, &it.sl, &dir.dsl, opts.step_fraction);

        it.x += ap * &dir.dx;
        it.xl += ap * &dir.dxl;
        it.s += ad * &dir.ds;
        it.y += ad * &dir.dy;
        it.sl += ad * &dir.dsl;
        symmetrize(&mut it.x);
        symmetrize(&mut it.s);
    }

    let (_, x, s, y, record) = best.expect("at least one iterate recorded");
    Ok(SdpSolution {
        x,
        s,
        y,
        objective: record.primal_objective,
        status: if stalled.is_some() { SdpStatus::Stalled } else { SdpStatus::MaxIterations },
        iterations: stalled.unwrap_or(opts.max_iterations),
        gap: record.gap,
        history,
    })
}

/// A primal infeasibility certificate is a dual ray with `bᵀy > 0` and
/// `𝒜*(y) + S ≈ 0`; a dual one is a primal ray with `⟨C, X⟩ < 0` and
/// `𝒜(X) − x ≈ 0`. The iterate is accepted as a certificate when the ratio
/// of objective growth to the ray residual exceeds the configured threshold.
fn certifies_infeasibility(p: &SdpProblem, it: &Iterate, record: &IterateRecord, opts: &SdpOptions) -> bool {
    let n_ineq = p.inequalities.len();
    if record.primal_infeasibility > opts.tolerance && record.dual_objective > 0.0 {
        let ray = p.adjoint(&it.y) + &it.s;
        let lp = (it.sl.clone() - it.y.rows(0, n_ineq)).norm();
        let residual = (ray.norm_squared() + lp * lp).sqrt().max(f64::MIN_POSITIVE);
        if record.dual_objective / residual > opts.infeasibility_ratio {
            return true;
        }
    }
    if record.dual_infeasibility > opts.tolerance && record.primal_objective < 0.0 {
        let mut ray = p.apply(&it.x);
        for l in 0..n_ineq {
            ray[l] -= it.xl[l];
        }
        let residual = ray.norm().max(f64::MIN_POSITIVE);
        if -record.primal_objective / residual > opts.infeasibility_ratio {
            return true;
        }
    }
    false
}

/// Schur complement `M_ij = tr(A_i X A_j S⁻¹)` plus the slack diagonal.
struct NormalSystem {
    factor: Factor,
}

enum Factor {
    Cholesky(Cholesky<f64, nalgebra::Dyn>),
    Lu(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

impl NormalSystem {
    fn assemble(p: &SdpProblem, it: &Iterate, w: &DMatrix<f64>) -> Result<Self, SdpError> {
        let d = p.dim;
        let cons: Vec<&LinearConstraint> = p.constraints().collect();
        let m = cons.len();
        let mut schur = DMatrix::zeros(m, m);
        let mut b_j = DMatrix::zeros(d, d);
        for (j, cj) in cons.iter().enumerate() {
            // X A_j W as a sum of rank-one terms
            b_j.fill(0.0);
            for &(k, l, v) in cj.matrix.entries() {
                b_j.ger(v, &it.x.column(k), &w.row(l).transpose(), 1.0);
                if k != l {
                    b_j.ger(v, &it.x.column(l), &w.row(k).transpose(), 1.0);
                }
            }
            for (i, ci) in cons.iter().enumerate() {
                schur[(i, j)] = ci.matrix.inner(&b_j);
            }
        }
        for l in 0..p.inequalities.len() {
            schur[(l, l)] += it.xl[l] / it.sl[l];
        }
        symmetrize(&mut schur);
        let factor = match Cholesky::new(schur.clone()) {
            Some(ch) => Factor::Cholesky(ch),
            None => {
                let lu = schur.lu();
                if !lu.is_invertible() {
                    return Err(SdpError::Numerical("singular Schur complement (dependent constraints?)".into()));
                }
                Factor::Lu(lu)
            }
        };
        Ok(Self { factor })
    }

    fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        match &self.factor {
            Factor::Cholesky(ch) => ch.solve(rhs),
            Factor::Lu(lu) => lu.solve(rhs).expect("invertibility checked at assembly"),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn direction(
        &self,
        p: &SdpProblem,
        it: &Iterate,
        w: &DMatrix<f64>,
        r_p: &DVector<f64>,
        r_d: &DMatrix<f64>,
        r_lp: &DVector<f64>,
        k: &DMatrix<f64>,
        kl: &DVector<f64>,
    ) -> Direction {
        let n_ineq = p.inequalities.len();
        let base = k * w - &it.x - &it.x * r_d * w;
        let mut rhs = r_p - p.apply(&base);
        let ratio = it.xl.component_div(&it.sl);
        for l in 0..n_ineq {
            rhs[l] += kl[l] / it.sl[l] - it.xl[l] - ratio[l] * r_lp[l];
        }
        let dy = self.solve(&rhs);
        let ds = r_d - p.adjoint(&dy);
        let mut dx = k * w - &it.x - &it.x * &ds * w;
        symmetrize(&mut dx);
        let dsl = r_lp + dy.rows(0, n_ineq);
        let dxl = kl.component_div(&it.sl) - &it.xl - ratio.component_mul(&dsl);
        Direction { dx, ds, dy, dxl, dsl }
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in 0..j {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Largest step `α ≤ 1` (scaled by `fraction`) keeping `M + α dM ⪰ 0` and
/// `v + α dv ≥ 0`, where `chol` factors `M`.
fn step_length(
    chol: &Cholesky<f64, nalgebra::Dyn>,
    dm: &DMatrix<f64>,
    v: &DVector<f64>,
    dv: &DVector<f64>,
    fraction: f64,
) -> f64 {
    let mut alpha_max = f64::INFINITY;
    let l = chol.l();
    if let Some(a) = l.solve_lower_triangular(dm) {
        if let Some(mut g) = l.solve_lower_triangular(&a.transpose()) {
            symmetrize(&mut g);
            let min_eig = SymmetricEigen::new(g).eigenvalues.min();
            if min_eig < 0.0 {
                alpha_max = -1.0 / min_eig;
            }
        }
    }
    for (vi, dvi) in v.iter().zip(dv.iter()) {
        if *dvi < 0.0 {
            alpha_max = alpha_max.min(-vi / dvi);
        }
    }
    (fraction * alpha_max).min(1.0)
}
