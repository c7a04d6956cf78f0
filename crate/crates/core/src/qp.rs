//! Euclidean projection onto a polyhedron, `min ‖z − c‖²` s.t. `Gz ≥ h`,
//! by the Goldfarb–Idnani dual active-set method with identity Hessian.

use nalgebra::{Cholesky, DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QpError {
    #[error("constraints are infeasible")]
    Infeasible,
    #[error("active-set iteration failed: {0}")]
    Numerical(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub z: DVector<f64>,
    /// `‖z − c‖²`.
    pub objective: f64,
    /// Active rows with their multipliers (`z = c + ½ Σ μ_r g_r`).
    pub active: Vec<(usize, f64)>,
}

pub fn project_polyhedron(c: &DVector<f64>, g: &DMatrix<f64>, h: &DVector<f64>) -> Result<QpSolution, QpError> {
    let n = c.len();
    let rows = g.nrows();
    if g.ncols() != n || h.len() != rows {
        return Err(QpError::Numerical(format!(
            "shape mismatch: G is {:?}, c has {n}, h has {}",
            g.shape(),
            h.len()
        )));
    }
    let row_norm: Vec<f64> = (0..rows).map(|r| g.row(r).norm()).collect();
    let scale = 1.0 + c.amax() + h.amax();
    let feas_tol = 1e-12 * scale;

    let mut z = c.clone();
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();

    let max_outer = 10 * (rows + n) + 100;
    for _ in 0..max_outer {
        // most violated row, measured in normalized units
        let mut pick = None;
        let mut worst = -feas_tol;
        for r in 0..rows {
            if active.contains(&r) || row_norm[r] == 0.0 {
                if row_norm[r] == 0.0 && h[r] > feas_tol {
                    return Err(QpError::Infeasible);
                }
                continue;
            }
            let s = (g.row(r).dot(&z.transpose()) - h[r]) / row_norm[r];
            if s < worst {
                worst = s;
                pick = Some(r);
            }
        }
        let Some(p) = pick else {
            let objective = (&z - c).norm_squared();
            let active = active.into_iter().zip(u.into_iter().map(|v| 2.0 * v)).collect();
            return Ok(QpSolution { z, objective, active });
        };

        let np: DVector<f64> = g.row(p).transpose();
        let mut up = 0.0;
        loop {
            let (r, zdir) = if active.is_empty() {
                (DVector::zeros(0), np.clone())
            } else {
                let nmat = DMatrix::from_fn(n, active.len(), |i, k| g[(active[k], i)]);
                let gram = nmat.transpose() * &nmat;
                let chol = Cholesky::new(gram).ok_or_else(|| QpError::Numerical("dependent active set".into()))?;
                let r = chol.solve(&(nmat.transpose() * &np));
                let zdir = &np - &nmat * &r;
                (r, zdir)
            };

            let mut t1 = f64::INFINITY;
            let mut leave = None;
            for (k, &rk) in r.iter().enumerate() {
                if rk > 1e-12 {
                    let ratio = u[k] / rk;
                    if ratio < t1 {
                        t1 = ratio;
                        leave = Some(k);
                    }
                }
            }
            let slack = g.row(p).dot(&z.transpose()) - h[p];
            let curvature = zdir.dot(&np);
            let independent = active.len() < n && zdir.norm_squared() > 1e-14 * np.norm_squared();
            let t2 = if independent && curvature > 0.0 {
                (-slack / curvature).max(0.0)
            } else {
                f64::INFINITY
            };
            if t1.is_infinite() && t2.is_infinite() {
                return Err(QpError::Infeasible);
            }
            let t = t1.min(t2);
            if t2.is_finite() {
                z += t * &zdir;
            }
            for (k, rk) in r.iter().enumerate() {
                u[k] -= t * rk;
            }
            up += t;
            if t2 <= t1 {
                active.push(p);
                u.push(up);
                break;
            }
            let l = leave.expect("partial step has a leaving row");
            active.remove(l);
            u.remove(l);
        }
    }
    Err(QpError::Numerical("iteration limit reached".into()))
}
