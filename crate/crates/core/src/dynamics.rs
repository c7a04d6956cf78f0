//! Discrete-time kinematic bicycle model and the generic dynamics interface
//! used by the trajectory optimizer.

use nalgebra::{DMatrix, DVector, Matrix4, Matrix4x2, Vector2, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("kinematic model evaluated outside its domain: {0}")]
    Domain(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

/// Planar vehicle state. Heading is kept unwrapped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub p_x: f64,
    pub p_y: f64,
    pub theta: f64,
    pub v: f64,
}

impl VehicleState {
    pub fn new(p_x: f64, p_y: f64, theta: f64, v: f64) -> Self {
        Self { p_x, p_y, theta, v }
    }

    pub fn to_vector(self) -> Vector4<f64> {
        Vector4::new(self.p_x, self.p_y, self.theta, self.v)
    }

    pub fn from_slice(s: &[f64]) -> Self {
        Self::new(s[0], s[1], s[2], s[3])
    }

    pub fn is_finite(&self) -> bool {
        self.p_x.is_finite() && self.p_y.is_finite() && self.theta.is_finite() && self.v.is_finite()
    }
}

/// Steering angle and longitudinal acceleration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    pub delta: f64,
    pub a: f64,
}

impl ControlInput {
    pub fn new(delta: f64, a: f64) -> Self {
        Self { delta, a }
    }

    pub fn to_vector(self) -> Vector2<f64> {
        Vector2::new(self.delta, self.a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    /// Wheelbase in meters.
    pub wheelbase: f64,
    /// Sampling time in seconds.
    pub tau_s: f64,
    pub length: f64,
    pub width: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self { wheelbase: 2.5, tau_s: 0.1, length: 2.5, width: 1.6 }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        if !(self.wheelbase > 0.0 && self.tau_s > 0.0) {
            return Err(DynamicsError::Domain(format!(
                "wheelbase ({}) and sampling time ({}) must be positive",
                self.wheelbase, self.tau_s
            )));
        }
        Ok(())
    }
}

/// Lateral travel term `tau_s * v * sin(delta)` and the matching square root
/// `sqrt(b^2 - s^2)`, failing outside the kinematic validity region.
fn lateral_terms(v: f64, delta: f64, params: &VehicleParams) -> Result<(f64, f64), DynamicsError> {
    let b = params.wheelbase;
    let s = params.tau_s * v * delta.sin();
    let arg = b * b - s * s;
    if !arg.is_finite() || arg < 0.0 {
        return Err(DynamicsError::Domain(format!(
            "b^2 - (tau_s v sin delta)^2 = {arg} < 0 at v = {v}, delta = {delta}"
        )));
    }
    Ok((s, arg.sqrt()))
}

/// Distance travelled by the reference point over one sampling interval.
pub fn rollout_distance(v: f64, delta: f64, params: &VehicleParams) -> Result<f64, DynamicsError> {
    let (_, root) = lateral_terms(v, delta, params)?;
    Ok(params.wheelbase + params.tau_s * v * delta.cos() - root)
}

pub fn step(
    x: &VehicleState,
    u: &ControlInput,
    params: &VehicleParams,
) -> Result<VehicleState, DynamicsError> {
    let (s, root) = lateral_terms(x.v, u.delta, params)?;
    let b = params.wheelbase;
    let ratio = s / b;
    if !(-1.0..=1.0).contains(&ratio) {
        return Err(DynamicsError::Domain(format!("asin argument {ratio} outside [-1, 1]")));
    }
    let fr = b + params.tau_s * x.v * u.delta.cos() - root;
    Ok(VehicleState {
        p_x: x.p_x + fr * x.theta.cos(),
        p_y: x.p_y + fr * x.theta.sin(),
        theta: x.theta + ratio.asin(),
        v: x.v + params.tau_s * u.a,
    })
}

/// Analytic Jacobians `(df/dx, df/du)` of [`step`].
pub fn linearize(
    x: &VehicleState,
    u: &ControlInput,
    params: &VehicleParams,
) -> Result<(Matrix4<f64>, Matrix4x2<f64>), DynamicsError> {
    let (s, root) = lateral_terms(x.v, u.delta, params)?;
    if root <= 0.0 {
        return Err(DynamicsError::Domain(format!(
            "steering derivative singular at v = {}, delta = {}",
            x.v, u.delta
        )));
    }
    let tau = params.tau_s;
    let b = params.wheelbase;
    let (sd, cd) = u.delta.sin_cos();
    let (st, ct) = x.theta.sin_cos();

    let fr = b + tau * x.v * cd - root;
    let fr_v = tau * cd + (s / root) * tau * sd;
    let fr_d = -tau * x.v * sd + (s / root) * tau * x.v * cd;
    let th_v = tau * sd / root;
    let th_d = tau * x.v * cd / root;

    #[rustfmt::skip]
    let f_x = Matrix4::new(
        1.0, 0.0, -fr * st, fr_v * ct,
        0.0, 1.0,  fr * ct, fr_v * st,
        0.0, 0.0,  1.0,     th_v,
        0.0, 0.0,  0.0,     1.0,
    );
    #[rustfmt::skip]
    let f_u = Matrix4x2::new(
        fr_d * ct, 0.0,
        fr_d * st, 0.0,
        th_d,      0.0,
        0.0,       tau,
    );
    Ok((f_x, f_u))
}

/// Discrete-time dynamics `x' = f(x, u)` with first-order derivatives.
pub trait Dynamics: Send + Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>, DynamicsError>;
    fn linearize(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>), DynamicsError>;
}

/// The bicycle model behind the [`Dynamics`] interface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bicycle {
    pub params: VehicleParams,
}

impl Bicycle {
    pub fn new(params: VehicleParams) -> Self {
        Self { params }
    }
}

fn check_dims(x: &DVector<f64>, u: &DVector<f64>, n: usize, m: usize) -> Result<(), DynamicsError> {
    if x.len() != n {
        return Err(DynamicsError::Dimension { expected: n, got: x.len() });
    }
    if u.len() != m {
        return Err(DynamicsError::Dimension { expected: m, got: u.len() });
    }
    Ok(())
}

impl Dynamics for Bicycle {
    fn state_dim(&self) -> usize {
        4
    }

    fn input_dim(&self) -> usize {
        2
    }

    fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>, DynamicsError> {
        check_dims(x, u, 4, 2)?;
        let next = step(
            &VehicleState::from_slice(x.as_slice()),
            &ControlInput::new(u[0], u[1]),
            &self.params,
        )?;
        Ok(DVector::from_column_slice(next.to_vector().as_slice()))
    }

    fn linearize(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>), DynamicsError> {
        check_dims(x, u, 4, 2)?;
        let (f_x, f_u) = linearize(
            &VehicleState::from_slice(x.as_slice()),
            &ControlInput::new(u[0], u[1]),
            &self.params,
        )?;
        Ok((
            DMatrix::from_column_slice(4, 4, f_x.as_slice()),
            DMatrix::from_column_slice(4, 2, f_u.as_slice()),
        ))
    }
}

/// Linear time-invariant dynamics `x' = A x + B u + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDynamics {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DVector<f64>,
}

impl LinearDynamics {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Self {
        let n = a.nrows();
        Self { a, b, c: DVector::zeros(n) }
    }

    /// `x' = x + u` in `dim` dimensions.
    pub fn single_integrator(dim: usize) -> Self {
        Self::new(DMatrix::identity(dim, dim), DMatrix::identity(dim, dim))
    }
}

impl Dynamics for LinearDynamics {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>, DynamicsError> {
        check_dims(x, u, self.state_dim(), self.input_dim())?;
        Ok(&self.a * x + &self.b * u + &self.c)
    }

    fn linearize(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>), DynamicsError> {
        check_dims(x, u, self.state_dim(), self.input_dim())?;
        Ok((self.a.clone(), self.b.clone()))
    }
}
