//! Big-M mixed-integer projection solved by best-first branch-and-bound.
//!
//! Each pair `(i, j)` gets rows `±(z_i − z_j)` per axis; the binary `e_{ijr}`
//! relaxes row `r` to `P_r z ≥ d_safe − M e_{ijr}`, and at least one row per
//! pair must stay enforced (`Σ_r e_{ijr} ≤ s − 1`).

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::qp::{project_polyhedron, QpError};

const PRUNE_TOL: f64 = 1e-9;
const FEAS_TOL: f64 = 1e-9;
const NODE_LIMIT: usize = 200_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MiqpError {
    #[error("invalid big-M projection: {0}")]
    Invalid(String),
    #[error("relaxation failed: {0}")]
    Relaxation(#[from] QpError),
    #[error("no feasible assignment found within {0} nodes")]
    NodeLimit(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BigMProjection {
    pub target: DVector<f64>,
    pub pairs: Vec<(usize, usize)>,
    pub d_safe: f64,
    pub big_m: f64,
    pub position_dim: usize,
}

impl BigMProjection {
    /// Uses `M = d_safe + 2·max|c| + 10`.
    pub fn new(target: DVector<f64>, pairs: Vec<(usize, usize)>, d_safe: f64, position_dim: usize) -> Result<Self, MiqpError> {
        let big_m = d_safe + 2.0 * target.amax() + 10.0;
        Self::with_big_m(target, pairs, d_safe, position_dim, big_m)
    }

    pub fn with_big_m(
        target: DVector<f64>,
        pairs: Vec<(usize, usize)>,
        d_safe: f64,
        position_dim: usize,
        big_m: f64,
    ) -> Result<Self, MiqpError> {
        if position_dim == 0 || !target.len().is_multiple_of(position_dim) {
            return Err(MiqpError::Invalid("target length is not a multiple of the position dimension".into()));
        }
        if !(d_safe > 0.0) || target.iter().any(|v| !v.is_finite()) {
            return Err(MiqpError::Invalid("d_safe must be positive and the target finite".into()));
        }
        let vehicles = target.len() / position_dim;
        if pairs.iter().any(|&(i, j)| i >= vehicles || j >= vehicles || i == j) {
            return Err(MiqpError::Invalid("pair index out of range".into()));
        }
        let floor = d_safe + 2.0 * target.amax() + 1.0;
        if !(big_m >= floor) {
            return Err(MiqpError::Invalid(format!("M = {big_m} is below the validity floor {floor}")));
        }
        Ok(Self { target, pairs, d_safe, big_m, position_dim })
    }

    /// Half-plane rows per pair, `s = 2·n_p`.
    pub fn rows_per_pair(&self) -> usize {
        2 * self.position_dim
    }

    /// Row `r` of pair `k`: `+Δ_a` for even `r`, `−Δ_a` for odd, with
    /// `Δ = z_i − z_j` and axis `a = r / 2`.
    pub fn row(&self, k: usize, r: usize) -> DVector<f64> {
        let (i, j) = self.pairs[k];
        let np = self.position_dim;
        let sign = if r.is_multiple_of(2) { 1.0 } else { -1.0 };
        let mut g = DVector::zeros(self.target.len());
        g[i * np + r / 2] = sign;
        g[j * np + r / 2] = -sign;
        g
    }

    /// `max_r P_r z` for pair `k`.
    pub fn best_row_value(&self, k: usize, z: &DVector<f64>) -> f64 {
        let (i, j) = self.pairs[k];
        let np = self.position_dim;
        (0..np).map(|a| (z[i * np + a] - z[j * np + a]).abs()).fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiqpSolution {
    pub positions: DVector<f64>,
    /// `‖z − c‖²`.
    pub objective: f64,
    /// Relaxations solved.
    pub nodes: usize,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Fix {
    Free,
    Enforced,
    Relaxed,
}

struct Node {
    bound: f64,
    order: usize,
    fixes: Vec<Fix>,
    z: DVector<f64>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // max-heap: smallest bound first, then earliest created
    fn cmp(&self, other: &Self) -> Ordering {
        other.bound.total_cmp(&self.bound).then_with(|| other.order.cmp(&self.order))
    }
}

/// Exact optimum of the big-M program.
pub fn solve_miqp(p: &BigMProjection) -> Result<MiqpSolution, MiqpError> {
    let s = p.rows_per_pair();
    let mut nodes = 0usize;
    let mut order = 0usize;
    let mut heap = BinaryHeap::new();
    let mut incumbent: Option<(f64, DVector<f64>)> = None;

    let root = vec![Fix::Free; p.pairs.len() * s];
    if let Some((f, z)) = relaxation(p, &root)? {
        nodes += 1;
        heap.push(Node { bound: f, order, fixes: root, z });
    }

    while let Some(node) = heap.pop() {
        if incumbent.as_ref().is_some_and(|inc| node.bound >= inc.0 - PRUNE_TOL) {
            continue;
        }
        let violation = |k: usize| p.d_safe - p.best_row_value(k, &node.z);
        let worst = (0..p.pairs.len()).map(|k| (k, violation(k))).max_by(|a, b| a.1.total_cmp(&b.1));
        let Some((k, _)) = worst.filter(|w| w.1 > FEAS_TOL) else {
            if incumbent.as_ref().is_none_or(|inc| node.bound < inc.0) {
                incumbent = Some((node.bound, node.z));
            }
            continue;
        };

        let slots = &node.fixes[k * s..(k + 1) * s];
        let relaxed = slots.iter().filter(|&&f| f == Fix::Relaxed).count();
        let Some(r) = (0..s)
            .filter(|&r| slots[r] == Fix::Free)
            .max_by(|&a, &b| p.row(k, a).dot(&node.z).total_cmp(&p.row(k, b).dot(&node.z)))
        else {
            continue;
        };

        let mut children = vec![Fix::Enforced];
        if relaxed + 1 < s {
            children.push(Fix::Relaxed);
        }
        for fix in children {
            let mut fixes = node.fixes.clone();
            fixes[k * s + r] = fix;
            nodes += 1;
            if nodes > NODE_LIMIT {
                log::warn!("branch-and-bound node limit {NODE_LIMIT} reached");
                return incumbent
                    .map(|(f, z)| MiqpSolution { positions: z, objective: f, nodes })
                    .ok_or(MiqpError::NodeLimit(NODE_LIMIT));
            }
            if let Some((f, z)) = relaxation(p, &fixes)? {
                if incumbent.as_ref().is_none_or(|inc| f < inc.0 - PRUNE_TOL) {
                    order += 1;
                    heap.push(Node { bound: f, order, fixes, z });
                }
            }
        }
    }

    let (objective, positions) = incumbent.ok_or(MiqpError::NodeLimit(nodes))?;
    Ok(MiqpSolution { positions, objective, nodes })
}

/// Continuous relaxation with binaries eliminated: for the free rows `F`
/// of a pair with `n₁` rows fixed relaxed, every nonempty `S ⊆ F` needs
/// `Σ_{r∈S} P_r z ≥ |S|·d − M·(s − 1 − n₁)`.
fn relaxation(p: &BigMProjection, fixes: &[Fix]) -> Result<Option<(f64, DVector<f64>)>, MiqpError> {
    let s = p.rows_per_pair();
    let n = p.target.len();
    let (d, m) = (p.d_safe, p.big_m);
    let mut rows: Vec<DVector<f64>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    for k in 0..p.pairs.len() {
        let slots = &fixes[k * s..(k + 1) * s];
        let relaxed = slots.iter().filter(|&&f| f == Fix::Relaxed).count();
        let budget = (s - 1 - relaxed) as f64;
        let mut free = Vec::new();
        for (r, fix) in slots.iter().enumerate() {
            match fix {
                Fix::Enforced => {
                    rows.push(p.row(k, r));
                    rhs.push(d);
                }
                Fix::Relaxed => {
                    rows.push(p.row(k, r));
                    rhs.push(d - m);
                }
                Fix::Free => {
                    rows.push(p.row(k, r));
                    rhs.push(d - m);
                    free.push(r);
                }
            }
        }
        for mask in 1u32..(1 << free.len()) {
            let mut g = DVector::zeros(n);
            let mut count = 0.0;
            for (b, &r) in free.iter().enumerate() {
                if mask & (1 << b) != 0 {
                    g += p.row(k, r);
                    count += 1.0;
                }
            }
            rows.push(g);
            rhs.push(count * d - m * budget);
        }
    }
    let g = DMatrix::from_fn(rows.len(), n, |r, c| rows[r][c]);
    match project_polyhedron(&p.target, &g, &DVector::from_vec(rhs)) {
        Ok(sol) => Ok(Some((sol.objective, sol.z))),
        Err(QpError::Infeasible) => Ok(None),
        Err(e) => Err(e.into()),
    }
}
