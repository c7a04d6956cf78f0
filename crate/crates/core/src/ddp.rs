//! Differential dynamic programming for one agent's augmented tracking
//! problem.
//!
//! The backward pass uses the Gauss-Newton form of the Q-function expansion
//! (second-order dynamics tensors dropped). Input boxes are enforced by
//! clamping in the forward pass.

use nalgebra::{Cholesky, DMatrix, DVector};
use thiserror::Error;

use crate::dynamics::{Dynamics, DynamicsError};
use crate::layout::{BoxBounds, Bounds};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DdpError {
    #[error("Q_uu + reg·I is not positive definite at step {step} (reg = {reg:e})")]
    NotPositiveDefinite { step: usize, reg: f64 },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("invalid subproblem: {0}")]
    Invalid(String),
}

/// States `x_0..=x_T` and inputs `u_0..u_{T-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
}

impl Trajectory {
    /// Simulates `inputs` from `x0`.
    pub fn rollout<D: Dynamics + ?Sized>(
        dynamics: &D,
        x0: DVector<f64>,
        inputs: Vec<DVector<f64>>,
    ) -> Result<Self, DynamicsError> {
        let mut states = Vec::with_capacity(inputs.len() + 1);
        states.push(x0);
        for u in &inputs {
            let next = dynamics.step(states.last().unwrap(), u)?;
            states.push(next);
        }
        Ok(Self { states, inputs })
    }

    /// Zero-input rollout.
    pub fn idle<D: Dynamics + ?Sized>(
        dynamics: &D,
        x0: DVector<f64>,
        horizon: usize,
    ) -> Result<Self, DynamicsError> {
        let m = dynamics.input_dim();
        Self::rollout(dynamics, x0, vec![DVector::zeros(m); horizon])
    }

    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }

    /// Largest `‖x_{τ+1} − f(x_τ, u_τ)‖∞` along the trajectory.
    pub fn defect<D: Dynamics + ?Sized>(&self, dynamics: &D) -> Result<f64, DynamicsError> {
        let mut worst = 0.0f64;
        for (t, u) in self.inputs.iter().enumerate() {
            let next = dynamics.step(&self.states[t], u)?;
            worst = worst.max((next - &self.states[t + 1]).amax());
        }
        Ok(worst)
    }
}

/// First and second derivatives of a stage cost at one point.
#[derive(Debug, Clone)]
pub struct StageDerivatives {
    pub l_x: DVector<f64>,
    pub l_u: DVector<f64>,
    pub l_xx: DMatrix<f64>,
    pub l_uu: DMatrix<f64>,
    pub l_ux: DMatrix<f64>,
}

/// Additive trajectory cost `Σ_τ ℓ_τ(x_τ, u_τ) + ℓ_T(x_T)`.
pub trait TrajectoryCost: Sync {
    fn stage(&self, t: usize, x: &DVector<f64>, u: &DVector<f64>) -> f64;
    fn stage_derivatives(&self, t: usize, x: &DVector<f64>, u: &DVector<f64>) -> StageDerivatives;
    fn terminal(&self, x: &DVector<f64>) -> f64;
    fn terminal_derivatives(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>);

    fn total(&self, traj: &Trajectory) -> f64 {
        let running: f64 = traj
            .inputs
            .iter()
            .enumerate()
            .map(|(t, u)| self.stage(t, &traj.states[t], u))
            .sum();
        running + self.terminal(traj.states.last().unwrap())
    }
}

/// Augmented-Lagrangian pull `(σ/2)‖(p_τ, u_{τ-1}) − t_τ‖²` with one target
/// per step `τ = 1..=T`, laid out as (position, input).
#[derive(Debug, Clone, PartialEq)]
pub struct Augmentation {
    pub sigma: f64,
    pub targets: Vec<DVector<f64>>,
}

/// Quadratic penalty keeping states inside an optional box.
#[derive(Debug, Clone, PartialEq)]
pub struct StatePenalty {
    pub bounds: BoxBounds,
    pub weight: f64,
}

/// Quadratic tracking cost of one vehicle, optionally augmented with the
/// ADMM proximal term.
///
/// `ℓ_τ = ‖x_τ − r_τ‖²_Q + ‖u_τ‖²_R + (σ/2)(‖p_τ − t^p_τ‖² + ‖u_τ − t^u_{τ+1}‖²)`;
/// the state part is absent at `τ = 0` since `x_0` is fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct StageCostModel {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    /// References for `τ = 1..=T`.
    pub reference: Vec<DVector<f64>>,
    pub position_dim: usize,
    pub augmentation: Option<Augmentation>,
    pub state_penalty: Option<StatePenalty>,
}

impl StageCostModel {
    pub fn tracking(q: DMatrix<f64>, r: DMatrix<f64>, reference: Vec<DVector<f64>>, position_dim: usize) -> Self {
        Self { q, r, reference, position_dim, augmentation: None, state_penalty: None }
    }

    pub fn horizon(&self) -> usize {
        self.reference.len()
    }

    pub fn validate(&self) -> Result<(), DdpError> {
        let n = self.q.nrows();
        if self.reference.iter().any(|r| r.len() != n) {
            return Err(DdpError::Invalid("reference length does not match Q".into()));
        }
        if self.position_dim > n {
            return Err(DdpError::Invalid("position dimension exceeds state dimension".into()));
        }
        if let Some(aug) = &self.augmentation {
            if !(aug.sigma > 0.0) {
                return Err(DdpError::Invalid(format!("sigma must be positive, got {}", aug.sigma)));
            }
            let width = self.position_dim + self.r.nrows();
            if aug.targets.len() != self.horizon() || aug.targets.iter().any(|t| t.len() != width) {
                return Err(DdpError::Invalid("augmentation targets do not match the horizon".into()));
            }
        }
        Ok(())
    }

    /// State terms at step `τ ∈ 1..=T`: value, gradient and Hessian.
    fn state_terms(&self, tau: usize, x: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>) {
        let n = x.len();
        let np = self.position_dim;
        let e = x - &self.reference[tau - 1];
        let qe = &self.q * &e;
        let mut value = e.dot(&qe);
        let mut grad = 2.0 * qe;
        let mut hess = 2.0 * &self.q;
        if let Some(aug) = &self.augmentation {
            let target = &aug.targets[tau - 1];
            for k in 0..np {
                let d = x[k] - target[k];
                value += 0.5 * aug.sigma * d * d;
                grad[k] += aug.sigma * d;
                hess[(k, k)] += aug.sigma;
            }
        }
        if let Some(pen) = &self.state_penalty {
            for k in 0..n {
                let over = x[k] - pen.bounds.upper[k];
                let under = pen.bounds.lower[k] - x[k];
                if over > 0.0 {
                    value += pen.weight * over * over;
                    grad[k] += 2.0 * pen.weight * over;
                    hess[(k, k)] += 2.0 * pen.weight;
                } else if under > 0.0 {
                    value += pen.weight * under * under;
                    grad[k] -= 2.0 * pen.weight * under;
                    hess[(k, k)] += 2.0 * pen.weight;
                }
            }
        }
        (value, grad, hess)
    }

    /// Input terms for `u_t`, `t ∈ 0..T`.
    fn input_terms(&self, t: usize, u: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>) {
        let ru = &self.r * u;
        let mut value = u.dot(&ru);
        let mut grad = 2.0 * ru;
        let mut hess = 2.0 * &self.r;
        if let Some(aug) = &self.augmentation {
            let target = &aug.targets[t];
            for k in 0..u.len() {
                let d = u[k] - target[self.position_dim + k];
                value += 0.5 * aug.sigma * d * d;
                grad[k] += aug.sigma * d;
                hess[(k, k)] += aug.sigma;
            }
        }
        (value, grad, hess)
    }
}

impl TrajectoryCost for StageCostModel {
    fn stage(&self, t: usize, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let state = if t == 0 { 0.0 } else { self.state_terms(t, x).0 };
        state + self.input_terms(t, u).0
    }

    fn stage_derivatives(&self, t: usize, x: &DVector<f64>, u: &DVector<f64>) -> StageDerivatives {
        let n = x.len();
        let m = u.len();
        let (l_x, l_xx) = if t == 0 {
            (DVector::zeros(n), DMatrix::zeros(n, n))
        } else {
            let (_, g, h) = self.state_terms(t, x);
            (g, h)
        };
        let (_, l_u, l_uu) = self.input_terms(t, u);
        StageDerivatives { l_x, l_u, l_xx, l_uu, l_ux: DMatrix::zeros(m, n) }
    }

    fn terminal(&self, x: &DVector<f64>) -> f64 {
        self.state_terms(self.horizon(), x).0
    }

    fn terminal_derivatives(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let (_, g, h) = self.state_terms(self.horizon(), x);
        (g, h)
    }
}

/// Affine policy `δu = k + K δx` per step and the predicted cost change.
#[derive(Debug, Clone)]
pub struct GainSchedule {
    pub feedforward: Vec<DVector<f64>>,
    pub feedback: Vec<DMatrix<f64>>,
    /// Predicted change at `α = 1`, per step. Always `≤ 0`.
    pub delta_v: Vec<f64>,
    dv_linear: f64,
    dv_quadratic: f64,
}

impl GainSchedule {
    /// Predicted total cost change for step size `alpha`.
    pub fn expected_change(&self, alpha: f64) -> f64 {
        alpha * self.dv_linear + 0.5 * alpha * alpha * self.dv_quadratic
    }
}

pub fn backward_pass<D, C>(
    dynamics: &D,
    traj: &Trajectory,
    cost: &C,
    reg: f64,
) -> Result<GainSchedule, DdpError>
where
    D: Dynamics + ?Sized,
    C: TrajectoryCost + ?Sized,
{
    let horizon = traj.horizon();
    let m = dynamics.input_dim();
    let (mut v_x, mut v_xx) = cost.terminal_derivatives(&traj.states[horizon]);

    let mut feedforward = vec![DVector::zeros(m); horizon];
    let mut feedback = vec![DMatrix::zeros(m, dynamics.state_dim()); horizon];
    let mut delta_v = vec![0.0; horizon];
    let (mut dv_linear, mut dv_quadratic) = (0.0, 0.0);

    for t in (0..horizon).rev() {
        let x = &traj.states[t];
        let u = &traj.inputs[t];
        let (f_x, f_u) = dynamics.linearize(x, u)?;
        let l = cost.stage_derivatives(t, x, u);

        let f_x_t = f_x.transpose();
        let f_u_t = f_u.transpose();
        let vxx_fx = &v_xx * &f_x;
        let vxx_fu = &v_xx * &f_u;

        let q_x = &l.l_x + &f_x_t * &v_x;
        let q_u = &l.l_u + &f_u_t * &v_x;
        let q_xx = &l.l_xx + &f_x_t * &vxx_fx;
        let q_ux = &l.l_ux + &f_u_t * &vxx_fx;
        let q_uu = &l.l_uu + &f_u_t * &vxx_fu;

        let mut q_uu_reg = q_uu.clone();
        for k in 0..m {
            q_uu_reg[(k, k)] += reg;
        }
        let chol = Cholesky::new(q_uu_reg).ok_or(DdpError::NotPositiveDefinite { step: t, reg })?;
        let k = -chol.solve(&q_u);
        let big_k = -chol.solve(&q_ux);

        let lin = k.dot(&q_u);
        let quad = k.dot(&(&q_uu * &k));
        delta_v[t] = lin + 0.5 * quad;
        dv_linear += lin;
        dv_quadratic += quad;

        let big_k_t = big_k.transpose();
        v_x = &q_x + &big_k_t * (&q_uu * &k) + &big_k_t * &q_u + q_ux.transpose() * &k;
        let cross = &big_k_t * &q_ux;
        v_xx = &q_xx + &big_k_t * &q_uu * &big_k + &cross + cross.transpose();
        v_xx = 0.5 * (&v_xx + v_xx.transpose());

        feedforward[t] = k;
        feedback[t] = big_k;
    }
    Ok(GainSchedule { feedforward, feedback, delta_v, dv_linear, dv_quadratic })
}

/// Applies `u = û + αk + K(x − x̂)`, clamped to the input box, and rolls the
/// dynamics forward from the nominal initial state.
pub fn forward_pass<D: Dynamics + ?Sized>(
    dynamics: &D,
    traj: &Trajectory,
    gains: &GainSchedule,
    alpha: f64,
    bounds: &Bounds,
) -> Result<Trajectory, DynamicsError> {
    let horizon = traj.horizon();
    let mut states = Vec::with_capacity(horizon + 1);
    let mut inputs = Vec::with_capacity(horizon);
    states.push(traj.states[0].clone());
    for t in 0..horizon {
        let dx = &states[t] - &traj.states[t];
        let u = &traj.inputs[t] + alpha * &gains.feedforward[t] + &gains.feedback[t] * dx;
        let u = bounds.inputs[t].clamp(&u);
        let next = dynamics.step(&states[t], &u)?;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(DynamicsError::Domain(format!("non-finite state at step {}", t + 1)));
        }
        states.push(next);
        inputs.push(u);
    }
    Ok(Trajectory { states, inputs })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DdpOptions {
    pub max_iterations: usize,
    /// Relative cost decrease below which the solve stops.
    pub tolerance: f64,
    pub initial_regularization: f64,
    pub max_regularization: f64,
    pub min_alpha: f64,
}

impl Default for DdpOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            tolerance: 1e-6,
            initial_regularization: 1e-6,
            max_regularization: 1e8,
            min_alpha: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DdpStatus {
    Converged,
    /// No step size produced a decrease even with maximal regularization.
    Stalled,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct DdpOutcome {
    pub trajectory: Trajectory,
    pub cost: f64,
    pub iterations: usize,
    pub status: DdpStatus,
}

const REG_FLOOR: f64 = 1e-9;

/// Iterates backward and forward passes with a halving line search until
/// the relative cost decrease drops below `opts.tolerance`.
///
/// `init` is re-simulated from its first state with clamped inputs, so the
/// returned trajectory is always dynamically consistent and never costs more
/// than that re-simulation.
pub fn solve_agent<D, C>(
    dynamics: &D,
    cost: &C,
    bounds: &Bounds,
    init: &Trajectory,
    opts: &DdpOptions,
) -> Result<DdpOutcome, DdpError>
where
    D: Dynamics + ?Sized,
    C: TrajectoryCost + ?Sized,
{
    let horizon = init.horizon();
    if bounds.inputs.len() != horizon {
        return Err(DdpError::Invalid(format!(
            "{} input bounds for a horizon of {horizon}",
            bounds.inputs.len()
        )));
    }
    let inputs = init.inputs.iter().enumerate().map(|(t, u)| bounds.inputs[t].clamp(u)).collect();
    let mut traj = Trajectory::rollout(dynamics, init.states[0].clone(), inputs)?;
    let mut current = cost.total(&traj);
    let mut reg = opts.initial_regularization;

    for iteration in 1..=opts.max_iterations {
        let gains = loop {
            match backward_pass(dynamics, &traj, cost, reg) {
                Ok(g) => break g,
                Err(DdpError::NotPositiveDefinite { step, .. }) => {
                    reg *= 10.0;
                    if reg > opts.max_regularization {
                        return Err(DdpError::NotPositiveDefinite { step, reg });
                    }
                }
                Err(e) => return Err(e),
            }
        };

        let predicted = -gains.expected_change(1.0);
        if predicted <= opts.tolerance * current.abs() || predicted <= 1e-14 {
            return Ok(DdpOutcome { trajectory: traj, cost: current, iterations: iteration, status: DdpStatus::Converged });
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        while alpha >= opts.min_alpha {
            if let Ok(candidate) = forward_pass(dynamics, &traj, &gains, alpha, bounds) {
                let c = cost.total(&candidate);
                if c < current {
                    accepted = Some((candidate, c));
                    break;
                }
            }
            alpha *= 0.5;
        }

        match accepted {
            Some((candidate, c)) => {
                let decrease = current - c;
                let previous = current;
                traj = candidate;
                current = c;
                reg = (reg * 0.5).max(REG_FLOOR);
                if decrease <= opts.tolerance * previous.abs() {
                    return Ok(DdpOutcome {
                        trajectory: traj,
                        cost: current,
                        iterations: iteration,
                        status: DdpStatus::Converged,
                    });
                }
            }
            None => {
                reg *= 2.0;
                if reg > opts.max_regularization {
                    return Ok(DdpOutcome { trajectory: traj, cost: current, iterations: iteration, status: DdpStatus::Stalled });
                }
            }
        }
    }
    Ok(DdpOutcome { trajectory: traj, cost: current, iterations: opts.max_iterations, status: DdpStatus::MaxIterations })
}
