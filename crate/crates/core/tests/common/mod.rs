//! Independent oracles shared by the integration and acceptance suites.
#![allow(dead_code)]

use std::sync::Arc;

use coop_admm::admm::AdmmProblem;
use coop_admm::ddp::{solve_agent, DdpOptions, DdpStatus, StageCostModel, Trajectory};
use coop_admm::dynamics::{Dynamics, LinearDynamics};
use coop_admm::layout::{Bounds, BoxBounds, CostWeights, HorizonLayout};
use coop_admm::projection::ProjectionTarget;
use coop_admm::topology::ConstraintGraph;
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Random 2–4 vehicle target with all pairs constrained and points drawn
/// close enough that most instances conflict.
pub fn random_target<R: Rng>(rng: &mut R, tau: usize) -> ProjectionTarget {
    let n = rng.random_range(2..=4);
    let spread = rng.random_range(1.0..4.0);
    let offset = [rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0)];
    let c_p = DVector::from_fn(2 * n, |k, _| offset[k % 2] + rng.random_range(-spread..spread));
    let pairs = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    ProjectionTarget {
        tau,
        c_u: DVector::zeros(2 * n),
        c_p,
        pairs,
        d_safe: 3.0,
        input_bounds: BoxBounds::unbounded(2 * n),
        position_dim: 2,
    }
}

/// `min ‖z − c‖²` subject to `G_S z ≥ h_S` by trying every subset of rows
/// as the active set; `None` when infeasible.
pub fn qp_by_active_sets(c: &DVector<f64>, g: &[DVector<f64>], h: &[f64]) -> Option<f64> {
    let rows = g.len();
    let mut best: Option<f64> = None;
    for mask in 0u32..(1 << rows) {
        let set: Vec<usize> = (0..rows).filter(|r| mask & (1 << r) != 0).collect();
        let z = if set.is_empty() {
            c.clone()
        } else {
            let nmat = DMatrix::from_fn(c.len(), set.len(), |i, k| g[set[k]][i]);
            let Some(ch) = Cholesky::new(nmat.transpose() * &nmat) else { continue };
            let rhs = DVector::from_iterator(set.len(), set.iter().map(|&r| h[r] - g[r].dot(c)));
            let mu = ch.solve(&rhs);
            if mu.iter().any(|&m| m < -1e-9 * (1.0 + mu.amax())) {
                continue;
            }
            c + nmat * mu
        };
        if (0..rows).all(|r| g[r].dot(&z) >= h[r] - 1e-9 * (1.0 + z.amax())) {
            let f = (&z - c).norm_squared();
            if best.is_none_or(|b| f < b) {
                best = Some(f);
            }
        }
    }
    best
}

/// Exhaustive optimum of the big-M program: every binary pattern with at
/// least one enforced row per pair, each followed by its continuous QP.
/// Patterns enforcing both signs of one axis are empty and skipped.
pub fn miqp_by_enumeration(c: &DVector<f64>, pairs: &[(usize, usize)], d_safe: f64) -> f64 {
    let rows_of = |k: usize, r: usize| {
        let (i, j) = pairs[k];
        let sign = if r.is_multiple_of(2) { 1.0 } else { -1.0 };
        let mut g = DVector::zeros(c.len());
        g[2 * i + r / 2] = sign;
        g[2 * j + r / 2] = -sign;
        g
    };
    let p = pairs.len();
    let mut best = f64::INFINITY;
    let total = 15usize.pow(p as u32);
    for code in 0..total {
        let mut rest = code;
        let mut g = Vec::new();
        let mut h = Vec::new();
        let mut empty = false;
        for k in 0..p {
            let enforced = (rest % 15) + 1;
            rest /= 15;
            if (enforced & 0b11) == 0b11 || (enforced & 0b1100) == 0b1100 {
                empty = true;
                break;
            }
            for r in 0..4 {
                if enforced & (1 << r) != 0 {
                    g.push(rows_of(k, r));
                    h.push(d_safe);
                }
            }
        }
        if empty {
            continue;
        }
        if let Some(f) = qp_by_active_sets(c, &g, &h) {
            best = best.min(f);
        }
    }
    best
}

/// Finite-horizon LQR: returns the optimal inputs and cost of
/// `Σ_{t<T} (x_tᵀ Q x_t [t>0] + u_tᵀ R u_t) + x_Tᵀ Q x_T` for `x_{t+1} = A x_t + B u_t`.
pub fn riccati(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    x0: &DVector<f64>,
    horizon: usize,
) -> (Vec<DVector<f64>>, f64) {
    let mut p = q.clone();
    let mut gains = vec![DMatrix::zeros(b.ncols(), a.nrows()); horizon];
    for t in (0..horizon).rev() {
        let s = r + b.transpose() * &p * b;
        let k = s.clone().lu().solve(&(b.transpose() * &p * a)).unwrap();
        let state_weight = if t == 0 { DMatrix::zeros(q.nrows(), q.ncols()) } else { q.clone() };
        p = state_weight + a.transpose() * &p * (a - b * &k);
        p = 0.5 * (&p + p.transpose());
        gains[t] = k;
    }
    let mut x = x0.clone();
    let mut inputs = Vec::new();
    let mut cost = 0.0;
    for (t, k) in gains.iter().enumerate() {
        let u = -(k * &x);
        if t > 0 {
            cost += x.dot(&(q * &x));
        }
        cost += u.dot(&(r * &u));
        x = a * &x + b * &u;
        inputs.push(u);
    }
    cost += x.dot(&(q * &x));
    (inputs, cost)
}

/// Box-constrained linear-quadratic tracking solved in condensed form,
/// `min Σ_{t=1..T} ‖x_t − r_t‖²_Q + Σ_{t<T} ‖u_t‖²_R` with
/// `lower ≤ u_t ≤ upper`, by a primal active-set loop over the bounds where
/// each step is an equality-constrained KKT solve. Returns the inputs.
pub fn box_lq(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    x0: &DVector<f64>,
    reference: &[DVector<f64>],
    lower: &DVector<f64>,
    upper: &DVector<f64>,
) -> Vec<DVector<f64>> {
    let (n, m, horizon) = (a.nrows(), b.ncols(), reference.len());
    let dim = m * horizon;
    // x_t = A^t x0 + Σ_{s<t} A^{t−1−s} B u_s
    let mut gamma = DMatrix::zeros(n * horizon, dim);
    let mut free_response = DVector::zeros(n * horizon);
    let mut powers = vec![DMatrix::identity(n, n)];
    for t in 1..=horizon {
        powers.push(a * &powers[t - 1]);
    }
    for t in 1..=horizon {
        free_response.rows_mut((t - 1) * n, n).copy_from(&(&powers[t] * x0 - &reference[t - 1]));
        for s in 0..t {
            gamma.view_mut(((t - 1) * n, s * m), (n, m)).copy_from(&(&powers[t - 1 - s] * b));
        }
    }
    let qbar = DMatrix::from_fn(n * horizon, n * horizon, |i, j| if i / n == j / n { q[(i % n, j % n)] } else { 0.0 });
    let rbar = DMatrix::from_fn(dim, dim, |i, j| if i / m == j / m { r[(i % m, j % m)] } else { 0.0 });
    let h = 2.0 * (gamma.transpose() * &qbar * &gamma + rbar);
    let g = 2.0 * gamma.transpose() * &qbar * free_response;
    let lo = |k: usize| lower[k % m];
    let hi = |k: usize| upper[k % m];

    // None = free, Some(v) = fixed at bound v
    let mut fixed: Vec<Option<f64>> = vec![None; dim];
    let mut u = DVector::zeros(dim);
    for _ in 0..10 * dim + 10 {
        let free: Vec<usize> = (0..dim).filter(|&k| fixed[k].is_none()).collect();
        for k in 0..dim {
            if let Some(v) = fixed[k] {
                u[k] = v;
            }
        }
        if !free.is_empty() {
            let hff = DMatrix::from_fn(free.len(), free.len(), |i, j| h[(free[i], free[j])]);
            let rhs = DVector::from_fn(free.len(), |i, _| {
                -g[free[i]] - (0..dim).filter(|&k| fixed[k].is_some()).map(|k| h[(free[i], k)] * u[k]).sum::<f64>()
            });
            let uf = Cholesky::new(hff).expect("positive definite").solve(&rhs);
            for (i, &k) in free.iter().enumerate() {
                u[k] = uf[i];
            }
        }
        let violated = free
            .iter()
            .map(|&k| (k, (lo(k) - u[k]).max(u[k] - hi(k))))
            .filter(|&(_, v)| v > 1e-12)
            .max_by(|x, y| x.1.total_cmp(&y.1));
        if let Some((k, _)) = violated {
            fixed[k] = Some(if u[k] < lo(k) { lo(k) } else { hi(k) });
            continue;
        }
        let grad = &h * &u + &g;
        // at a lower bound the gradient must be ≥ 0, at an upper bound ≤ 0
        let release = (0..dim)
            .filter_map(|k| fixed[k].map(|v| (k, if v == lo(k) { -grad[k] } else { grad[k] })))
            .filter(|&(_, wrong)| wrong > 1e-10)
            .max_by(|x, y| x.1.total_cmp(&y.1));
        match release {
            Some((k, _)) => fixed[k] = None,
            None => return (0..horizon).map(|t| u.rows(t * m, m).into_owned()).collect(),
        }
    }
    panic!("active-set loop did not terminate");
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
}

pub struct LqInstance {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub x0: DVector<f64>,
}

/// Mildly perturbed identity dynamics with random PSD `Q` and `R ⪰ I`.
pub fn lq_instance(seed: u64, n: usize, m: usize) -> LqInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = DMatrix::identity(n, n) + gaussian(&mut rng, n, n, 0.1);
    let b = gaussian(&mut rng, n, m, 1.0);
    let lq = gaussian(&mut rng, n, n, 1.0);
    let lr = gaussian(&mut rng, m, m, 1.0);
    let q = &lq * lq.transpose();
    let r = &lr * lr.transpose() + DMatrix::identity(m, m);
    let x0 = gaussian(&mut rng, n, 1, 1.0).column(0).into_owned();
    LqInstance { a, b, q, r, x0 }
}

/// Relative cost and absolute input error of `solve_agent` against the
/// Riccati recursion.
pub fn ddp_vs_riccati(inst: &LqInstance, horizon: usize) -> (f64, f64, DdpStatus) {
    let (m, n) = (inst.b.ncols(), inst.a.nrows());
    let dynamics = LinearDynamics::new(inst.a.clone(), inst.b.clone());
    let cost = StageCostModel::tracking(inst.q.clone(), inst.r.clone(), vec![DVector::zeros(n); horizon], n);
    let init = Trajectory::idle(&dynamics, inst.x0.clone(), horizon).unwrap();
    let out = solve_agent(&dynamics, &cost, &Bounds::unbounded(m, horizon), &init, &DdpOptions::default()).unwrap();
    let (inputs, oracle_cost) = riccati(&inst.a, &inst.b, &inst.q, &inst.r, &inst.x0, horizon);
    let input_err = out.trajectory.inputs.iter().zip(&inputs).map(|(u, v)| (u - v).amax()).fold(0.0, f64::max);
    ((out.cost - oracle_cost).abs() / oracle_cost.abs().max(1e-12), input_err, out.status)
}

const CONVEX_HORIZON: usize = 20;

/// Two planar single integrators. Vehicle 0's reference starts faster than
/// its input bound allows, so the box is active on part of the horizon.
pub fn convex_pair() -> AdmmProblem {
    let layout = HorizonLayout::new(2, CONVEX_HORIZON, 2, 2, 2).unwrap();
    let starts = [DVector::from_column_slice(&[0.0, 0.0]), DVector::from_column_slice(&[0.0, 10.0])];
    let references = [
        (1..=CONVEX_HORIZON)
            .map(|t| DVector::from_column_slice(&[12.0 * (1.0 - (-(t as f64) / 5.0).exp()), 0.5]))
            .collect::<Vec<_>>(),
        (1..=CONVEX_HORIZON).map(|t| DVector::from_column_slice(&[3.0, 10.0 - 0.2 * t as f64])).collect(),
    ];
    let limit = DVector::from_element(2, 1.0);
    let input_box = BoxBounds::new(-&limit, limit).unwrap();
    AdmmProblem {
        layout,
        dynamics: vec![Arc::new(LinearDynamics::single_integrator(2)) as Arc<dyn Dynamics>; 2],
        initial_states: starts.to_vec(),
        weights: references
            .into_iter()
            .map(|r| CostWeights::new(DMatrix::identity(2, 2), 0.1 * DMatrix::identity(2, 2), r).unwrap())
            .collect(),
        bounds: vec![Bounds::constant(input_box, CONVEX_HORIZON); 2],
        state_penalty_weight: 0.0,
        graph: ConstraintGraph::empty(2),
        d_safe: 3.0,
    }
}

pub fn convex_oracle(p: &AdmmProblem, i: usize) -> Vec<DVector<f64>> {
    let b = &p.bounds[i].inputs[0];
    box_lq(
        &DMatrix::identity(2, 2),
        &DMatrix::identity(2, 2),
        &p.weights[i].q,
        &p.weights[i].r,
        &p.initial_states[i],
        &p.weights[i].reference,
        &b.lower,
        &b.upper,
    )
}

pub fn convex_input_error(p: &AdmmProblem, inputs: &[Vec<DVector<f64>>]) -> f64 {
    (0..2)
        .map(|i| convex_oracle(p, i).iter().zip(&inputs[i]).map(|(a, b)| (a - b).amax()).fold(0.0, f64::max))
        .fold(0.0, f64::max)
}
