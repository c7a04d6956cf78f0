//! Recovering feasible positions from a lifted solution
//! `X = [[Z, z], [zᵀ, 1]]`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::projection::{pair_distance, satisfies_pairs};
use crate::qp::{project_polyhedron, QpError};

const SAMPLES: usize = 64;
const MAX_SWEEPS: usize = 20_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExtractionError {
    #[error("no randomized candidate could be repaired to feasibility")]
    Failed,
    #[error("invalid extraction input: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtractionMethod {
    /// The border of `X` was already a rank-one factor of the block.
    RankOne,
    Randomized,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub positions: DVector<f64>,
    /// `‖positions − target‖²`.
    pub objective: f64,
    pub method: ExtractionMethod,
}

/// Reads the border of `x` as a position candidate and falls back to
/// Gaussian randomization when the block is not rank one. Every repaired
/// sample is refined locally. Every returned point keeps each pair at
/// least `d_safe` apart.
pub fn extract_position(
    x: &DMatrix<f64>,
    target: &DVector<f64>,
    pairs: &[(usize, usize)],
    d_safe: f64,
    position_dim: usize,
    seed: u64,
) -> Result<Extraction, ExtractionError> {
    let n = target.len();
    if x.shape() != (n + 1, n + 1) {
        return Err(ExtractionError::Invalid(format!(
            "lifted matrix is {:?}, expected {}x{}",
            x.shape(),
            n + 1,
            n + 1
        )));
    }
    if position_dim == 0 || !n.is_multiple_of(position_dim) {
        return Err(ExtractionError::Invalid("target length is not a multiple of the position dimension".into()));
    }
    let vehicles = n / position_dim;
    if pairs.iter().any(|&(i, j)| i >= vehicles || j >= vehicles || i == j) {
        return Err(ExtractionError::Invalid("pair index out of range".into()));
    }

    let z_block = x.view((0, 0), (n, n)).into_owned();
    let corner = x[(n, n)];
    let z: DVector<f64> = x.view((0, n), (n, 1)).column(0) / corner;
    let cov = &z_block - &z * z.transpose();
    let objective = |p: &DVector<f64>| (p - target).norm_squared();

    if cov.norm() <= 1e-5 * (1.0 + z_block.norm()) {
        if let Some(p) = repair(&z, pairs, d_safe, position_dim) {
            return Ok(Extraction { objective: objective(&p), positions: p, method: ExtractionMethod::RankOne });
        }
    }

    let eig = SymmetricEigen::new(0.5 * (&cov + cov.transpose()));
    let mut factor = eig.eigenvectors;
    for (k, lambda) in eig.eigenvalues.iter().enumerate() {
        let scale = lambda.max(0.0).sqrt();
        factor.column_mut(k).scale_mut(scale);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut candidates: Vec<DVector<f64>> = Vec::with_capacity(SAMPLES + 1);
    let mut consider = |candidate: DVector<f64>| {
        if let Some(p) = repair(&candidate, pairs, d_safe, position_dim) {
            candidates.push(p);
        }
    };
    consider(z.clone());
    for _ in 0..SAMPLES {
        let xi = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        consider(&z + &factor * xi);
    }
    if candidates.is_empty() {
        return Err(ExtractionError::Failed);
    }
    let mut best: Option<(f64, DVector<f64>)> = None;
    for p in candidates {
        let p = refine(target, p.clone(), pairs, d_safe, position_dim).unwrap_or(p);
        let f = objective(&p);
        if best.as_ref().is_none_or(|b| f < b.0) {
            best = Some((f, p));
        }
    }
    let (f, p) = best.expect("at least one candidate");
    Ok(Extraction { positions: p, objective: f, method: ExtractionMethod::Randomized })
}

/// Pushes each violating pair apart symmetrically about its midpoint until
/// every pair is at least `d_safe` apart, sweeping the pair list cyclically.
/// Coincident points are separated along a direction fixed by the pair.
pub fn repair(
    start: &DVector<f64>,
    pairs: &[(usize, usize)],
    d_safe: f64,
    position_dim: usize,
) -> Option<DVector<f64>> {
    let np = position_dim;
    let goal = d_safe * (1.0 + 1e-9);
    let mut z = start.clone();
    for _ in 0..MAX_SWEEPS {
        let mut moved = false;
        for (k, &(i, j)) in pairs.iter().enumerate() {
            let mut diff: Vec<f64> = (0..np).map(|c| z[j * np + c] - z[i * np + c]).collect();
            let dist = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
            if dist >= d_safe {
                continue;
            }
            if dist <= 1e-12 * (1.0 + d_safe) {
                diff = fallback_direction(k, np);
            } else {
                diff.iter_mut().for_each(|v| *v /= dist);
            }
            let half = 0.5 * (goal - dist.min(goal));
            for c in 0..np {
                z[i * np + c] -= half * diff[c];
                z[j * np + c] += half * diff[c];
            }
            moved = true;
        }
        if !moved {
            return Some(z);
        }
    }
    None
}

/// Sequential convex restriction: replaces each `‖z_i − z_j‖ ≥ d` by the
/// half-space `nᵀ(z_i − z_j) ≥ d` with `n` the current unit difference, which
/// keeps every iterate feasible and the objective non-increasing.
pub fn refine(
    c: &DVector<f64>,
    start: DVector<f64>,
    pairs: &[(usize, usize)],
    d_safe: f64,
    np: usize,
) -> Result<DVector<f64>, QpError> {
    let n = c.len();
    let mut z = start;
    for _ in 0..200 {
        let mut g = DMatrix::zeros(pairs.len(), n);
        for (k, &(i, j)) in pairs.iter().enumerate() {
            let dist = pair_distance(&z, i, j, np);
            for a in 0..np {
                let u = (z[i * np + a] - z[j * np + a]) / dist;
                g[(k, i * np + a)] = u;
                g[(k, j * np + a)] = -u;
            }
        }
        let h = DVector::from_element(pairs.len(), d_safe * (1.0 + 1e-9));
        let next = project_polyhedron(c, &g, &h)?.z;
        let change = (&next - &z).amax();
        let improved = (&next - c).norm_squared() <= (&z - c).norm_squared();
        if improved && satisfies_pairs(&next, pairs, d_safe, np) {
            z = next;
        }
        if change < 1e-12 * (1.0 + c.amax()) || !improved {
            break;
        }
    }
    Ok(z)
}

fn fallback_direction(k: usize, np: usize) -> Vec<f64> {
    let angle = 2.399_963_229_728_653 * k as f64;
    let mut dir = vec![0.0; np];
    dir[0] = angle.cos();
    if np > 1 {
        dir[1] = angle.sin();
    }
    dir
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lifted(z: &DVector<f64>, extra: Option<DMatrix<f64>>) -> DMatrix<f64> {
        let n = z.len();
        let mut x = DMatrix::zeros(n + 1, n + 1);
        let mut block = z * z.transpose();
        if let Some(e) = extra {
            block += e;
        }
        x.view_mut((0, 0), (n, n)).copy_from(&block);
        x.view_mut((0, n), (n, 1)).copy_from(z);
        x.view_mut((n, 0), (1, n)).copy_from(&z.transpose());
        x[(n, n)] = 1.0;
        x
    }

    #[test]
    fn rank_one_feasible_point_is_returned_exactly() {
        let c = DVector::from_column_slice(&[0.0, 0.0, 5.0, 0.0]);
        let out = extract_position(&lifted(&c, None), &c, &[(0, 1)], 3.0, 2, 1).unwrap();
        assert_eq!(out.method, ExtractionMethod::RankOne);
        assert_eq!(out.positions, c);
        assert_eq!(out.objective, 0.0);
    }

    #[test]
    fn symmetric_degenerate_instance() {
        let zero = DVector::zeros(4);
        // relaxation optimum: block supported on the difference direction
        let k = DMatrix::from_row_slice(
            4,
            4,
            &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0, -1.0, 0.0, 1.0, 0.0, 0.0, -1.0, 0.0, 1.0],
        );
        let x = lifted(&zero, Some(k * (9.0 / 8.0)));
        let out = extract_position(&x, &zero, &[(0, 1)], 3.0, 2, 7).unwrap();
        assert_eq!(out.method, ExtractionMethod::Randomized);
        assert!(pair_distance(&out.positions, 0, 1, 2) >= 3.0);
        assert!(out.objective <= 4.5 + 1e-3, "{}", out.objective);
    }

    #[test]
    fn repair_separates_coincident_points() {
        let z = DVector::zeros(6);
        let pairs = [(0, 1), (0, 2), (1, 2)];
        let p = repair(&z, &pairs, 3.0, 2).unwrap();
        for &(i, j) in &pairs {
            assert!(pair_distance(&p, i, j, 2) >= 3.0);
        }
    }

    #[test]
    fn shape_errors() {
        let c = DVector::zeros(4);
        assert!(extract_position(&DMatrix::zeros(3, 3), &c, &[], 3.0, 2, 0).is_err());
        assert!(extract_position(&DMatrix::zeros(5, 5), &c, &[(0, 2)], 3.0, 2, 0).is_err());
    }
}
