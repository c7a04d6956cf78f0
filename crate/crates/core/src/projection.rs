//! Per-timestep consensus projection: box clamp for inputs and a nonconvex
//! pairwise-separation projection for positions.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::layout::BoxBounds;
use crate::miqp::{solve_miqp, BigMProjection, MiqpError};
use crate::qp::QpError;
use crate::sdp::{
    extract_position, solve_sdp, ExtractionError, ExtractionMethod, LinearConstraint, SdpError, SdpProblem, SdpStatus,
    SparseSym,
};

const SDP_TOLERANCE: f64 = 1e-7;
const ORACLE_STARTS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Sdr,
    Miqp,
    /// Multi-start local search; a reference for tests, not a certified
    /// solver.
    Oracle,
}

impl Backend {
    pub const ALL: [Backend; 3] = [Backend::Sdr, Backend::Miqp, Backend::Oracle];

    pub fn name(self) -> &'static str {
        match self {
            Backend::Sdr => "sdr",
            Backend::Miqp => "miqp",
            Backend::Oracle => "oracle",
        }
    }
}

impl std::str::FromStr for Backend {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Backend::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| format!("unknown backend `{s}` (expected sdr, miqp or oracle)"))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProjectionError {
    #[error("invalid projection target: {0}")]
    Invalid(String),
    #[error("SDP backend failed: {0}")]
    Sdp(#[from] SdpError),
    #[error("lifted problem reported infeasible")]
    SdpInfeasible,
    #[error("extraction failed: {0}")]
    Extraction(#[from] ExtractionError),
    #[error("MIQP backend failed: {0}")]
    Miqp(#[from] MiqpError),
    #[error("local search failed: {0}")]
    Oracle(#[from] QpError),
    #[error("backend returned a point violating pair ({i}, {j}): distance {distance}")]
    Infeasible { i: usize, j: usize, distance: f64 },
}

/// Data of one timestep's projection.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionTarget {
    pub tau: usize,
    pub c_u: DVector<f64>,
    pub c_p: DVector<f64>,
    pub pairs: Vec<(usize, usize)>,
    pub d_safe: f64,
    pub input_bounds: BoxBounds,
    pub position_dim: usize,
}

impl ProjectionTarget {
    fn vehicles(&self) -> usize {
        self.c_p.len() / self.position_dim
    }

    pub fn validate(&self) -> Result<(), ProjectionError> {
        let np = self.position_dim;
        if np == 0 || !self.c_p.len().is_multiple_of(np) {
            return Err(ProjectionError::Invalid("position target length is not a multiple of n_p".into()));
        }
        if self.input_bounds.lower.len() != self.c_u.len() {
            return Err(ProjectionError::Invalid("input bounds do not match the input target".into()));
        }
        if !(self.d_safe > 0.0) {
            return Err(ProjectionError::Invalid(format!("d_safe must be positive, got {}", self.d_safe)));
        }
        if self.c_p.iter().chain(self.c_u.iter()).any(|v| !v.is_finite()) {
            return Err(ProjectionError::Invalid(format!("non-finite target at tau = {}", self.tau)));
        }
        let n = self.vehicles();
        if let Some(&(i, j)) = self.pairs.iter().find(|&&(i, j)| i >= n || j >= n || i == j) {
            return Err(ProjectionError::Invalid(format!("pair ({i}, {j}) invalid for {n} vehicles")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProjectionDetail {
    /// The target already satisfied every pair.
    Passthrough,
    Sdr { status: SdpStatus, iterations: usize, method: ExtractionMethod },
    Miqp { nodes: usize },
    Oracle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositionProjection {
    pub positions: DVector<f64>,
    /// `‖z_p − c_p‖²`.
    pub objective: f64,
    /// Relaxation optimum, when the backend computes one.
    pub lower_bound: Option<f64>,
    pub detail: ProjectionDetail,
}

pub fn clamp_inputs(c_u: &DVector<f64>, bounds: &BoxBounds) -> DVector<f64> {
    bounds.clamp(c_u)
}

/// Projects `c_p` onto `{z : ‖z_i − z_j‖ ≥ d_safe for every pair}` with the
/// chosen backend. `seed` drives the randomized parts (SDR extraction,
/// oracle starts).
pub fn project_positions(
    target: &ProjectionTarget,
    backend: Backend,
    seed: u64,
) -> Result<PositionProjection, ProjectionError> {
    target.validate()?;
    let np = target.position_dim;
    let c = &target.c_p;
    if satisfies_pairs(c, &target.pairs, target.d_safe, np) {
        return Ok(PositionProjection {
            positions: c.clone(),
            objective: 0.0,
            lower_bound: Some(0.0),
            detail: ProjectionDetail::Passthrough,
        });
    }

    // constraints depend on differences only, so solve about the centroid
    let centroid = centroid(c, np);
    let shift = |z: &DVector<f64>, sign: f64| DVector::from_fn(z.len(), |k, _| z[k] + sign * centroid[k % np]);
    let centered = shift(c, -1.0);

    let (positions, lower_bound, detail) = match backend {
        Backend::Sdr => {
            let scale = target.d_safe.max(centered.amax());
            let c_scaled = &centered / scale;
            let d_scaled = target.d_safe / scale;
            let problem = lifted_problem(&c_scaled, &target.pairs, d_scaled, np);
            let sol = solve_sdp(&problem, SDP_TOLERANCE)?;
            match sol.status {
                SdpStatus::Infeasible => return Err(ProjectionError::SdpInfeasible),
                SdpStatus::MaxIterations | SdpStatus::Stalled => {
                    log::warn!("SDP at tau = {} stopped early, {:?} (gap {:e})", target.tau, sol.status, sol.gap)
                }
                SdpStatus::Optimal => {}
            }
            let ext = extract_position(&sol.x, &c_scaled, &target.pairs, d_scaled, np, seed)?;
            let detail = ProjectionDetail::Sdr { status: sol.status, iterations: sol.iterations, method: ext.method };
            (shift(&(ext.positions * scale), 1.0), Some(sol.objective * scale * scale), detail)
        }
        Backend::Miqp => {
            let p = BigMProjection::new(centered, target.pairs.clone(), target.d_safe, np)?;
            let sol = solve_miqp(&p)?;
            (shift(&sol.positions, 1.0), None, ProjectionDetail::Miqp { nodes: sol.nodes })
        }
        Backend::Oracle => {
            let z = multistart_search(&centered, &target.pairs, target.d_safe, np, seed)?;
            (shift(&z, 1.0), None, ProjectionDetail::Oracle)
        }
    };

    if backend != Backend::Miqp {
        for &(i, j) in &target.pairs {
            let distance = pair_distance(&positions, i, j, np);
            if distance < target.d_safe - 1e-6 {
                return Err(ProjectionError::Infeasible { i, j, distance });
            }
        }
    }
    let objective = (&positions - c).norm_squared();
    Ok(PositionProjection { positions, objective, lower_bound, detail })
}

/// Lifted relaxation over `X = [[Z, z], [zᵀ, 1]]`: objective
/// `Tr(Z) − 2cᵀz + ‖c‖²`, one trace inequality `⟨K_ij, Z⟩ ≥ d²` per pair and
/// the corner pinned to one.
pub fn lifted_problem(c: &DVector<f64>, pairs: &[(usize, usize)], d_safe: f64, position_dim: usize) -> SdpProblem {
    let n = c.len();
    let np = position_dim;
    let mut objective = DMatrix::identity(n + 1, n + 1);
    for k in 0..n {
        objective[(k, n)] = -c[k];
        objective[(n, k)] = -c[k];
    }
    objective[(n, n)] = c.norm_squared();
    let inequalities = pairs
        .iter()
        .map(|&(i, j)| {
            let entries = (0..np).flat_map(|a| {
                let (p, q) = (i * np + a, j * np + a);
                [(p, p, 1.0), (q, q, 1.0), (p.min(q), p.max(q), -1.0)]
            });
            LinearConstraint::new(SparseSym::from_entries(entries), d_safe * d_safe)
        })
        .collect();
    let equalities = vec![LinearConstraint::new(SparseSym::from_entries([(n, n, 1.0)]), 1.0)];
    SdpProblem { dim: n + 1, objective, inequalities, equalities }
}

pub fn pair_distance(z: &DVector<f64>, i: usize, j: usize, np: usize) -> f64 {
    (0..np).map(|a| (z[i * np + a] - z[j * np + a]).powi(2)).sum::<f64>().sqrt()
}

pub fn satisfies_pairs(z: &DVector<f64>, pairs: &[(usize, usize)], d_safe: f64, np: usize) -> bool {
    pairs.iter().all(|&(i, j)| pair_distance(z, i, j, np) >= d_safe)
}

fn centroid(c: &DVector<f64>, np: usize) -> Vec<f64> {
    let n = c.len() / np;
    (0..np).map(|a| (0..n).map(|i| c[i * np + a]).sum::<f64>() / n as f64).collect()
}

/// Best local optimum over perturbed starts. Each start alternates a half
/// step toward `c` with cyclic pair repair until it settles, then refines by
/// sequential convex restriction.
fn multistart_search(
    c: &DVector<f64>,
    pairs: &[(usize, usize)],
    d_safe: f64,
    np: usize,
    seed: u64,
) -> Result<DVector<f64>, ProjectionError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, d_safe).expect("positive spread");
    let mut best: Option<(f64, DVector<f64>)> = None;
    for start in 0..ORACLE_STARTS {
        let mut z = if start == 0 { c.clone() } else { c + DVector::from_fn(c.len(), |_, _| noise.sample(&mut rng)) };
        z = crate::sdp::repair(&z, pairs, d_safe, np).ok_or(ExtractionError::Failed)?;
        for _ in 0..2000 {
            let pulled = &z + 0.5 * (c - &z);
            let next = crate::sdp::repair(&pulled, pairs, d_safe, np).ok_or(ExtractionError::Failed)?;
            let change = (&next - &z).amax();
            z = next;
            if change < 1e-10 {
                break;
            }
        }
        z = crate::sdp::refine(c, z, pairs, d_safe, np)?;
        let f = (&z - c).norm_squared();
        if best.as_ref().is_none_or(|b| f < b.0) {
            best = Some((f, z));
        }
    }
    Ok(best.expect("at least one start").1)
}
