//! Stacked optimization variables and the index maps that stand in for the
//! consensus selection matrices.
//!
//! `y` holds one block `(x_{iτ}, u_{i(τ-1)})` per vehicle `i` and step
//! `τ ∈ 1..=T`, vehicle-major. `z` and `λ` hold one block
//! `(p_{iτ}, u_{i(τ-1)})` in the same order. Positions are the leading
//! `n_p` state components.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LayoutError {
    #[error("invalid layout: {0}")]
    Invalid(String),
    #[error("vector length {got} does not match layout length {expected}")]
    Length { expected: usize, got: usize },
    #[error("weight matrix check failed: {0}")]
    Weights(String),
    #[error("bounds are not ordered: {0}")]
    Bounds(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HorizonLayout {
    pub vehicles: usize,
    pub horizon: usize,
    pub state_dim: usize,
    pub input_dim: usize,
    pub position_dim: usize,
}

impl HorizonLayout {
    pub fn new(
        vehicles: usize,
        horizon: usize,
        state_dim: usize,
        input_dim: usize,
        position_dim: usize,
    ) -> Result<Self, LayoutError> {
        if vehicles == 0 || horizon == 0 || state_dim == 0 || input_dim == 0 || position_dim == 0 {
            return Err(LayoutError::Invalid("all dimensions must be positive".into()));
        }
        if position_dim > state_dim {
            return Err(LayoutError::Invalid(format!(
                "position dimension {position_dim} exceeds state dimension {state_dim}"
            )));
        }
        Ok(Self { vehicles, horizon, state_dim, input_dim, position_dim })
    }

    /// The bicycle layout: n = 4, m = 2, n_p = 2.
    pub fn bicycle(vehicles: usize, horizon: usize) -> Result<Self, LayoutError> {
        Self::new(vehicles, horizon, 4, 2, 2)
    }

    pub fn y_block(&self) -> usize {
        self.state_dim + self.input_dim
    }

    pub fn z_block(&self) -> usize {
        self.position_dim + self.input_dim
    }

    pub fn y_len(&self) -> usize {
        self.vehicles * self.horizon * self.y_block()
    }

    pub fn z_len(&self) -> usize {
        self.vehicles * self.horizon * self.z_block()
    }

    /// Offset of block `(i, τ)` in `y`, with `τ ∈ 1..=T`.
    pub fn y_offset(&self, vehicle: usize, tau: usize) -> usize {
        debug_assert!(vehicle < self.vehicles && (1..=self.horizon).contains(&tau));
        (vehicle * self.horizon + tau - 1) * self.y_block()
    }

    pub fn z_offset(&self, vehicle: usize, tau: usize) -> usize {
        debug_assert!(vehicle < self.vehicles && (1..=self.horizon).contains(&tau));
        (vehicle * self.horizon + tau - 1) * self.z_block()
    }

    /// Source index in `y` of flat index `k` in `z`.
    pub fn select_source(&self, k: usize) -> usize {
        let block = k / self.z_block();
        let c = k % self.z_block();
        let src = if c < self.position_dim { c } else { self.state_dim + c - self.position_dim };
        block * self.y_block() + src
    }

    /// Position slice of `z` at step `τ` for all vehicles, vehicle-major.
    pub fn gather_positions(&self, v: &[f64], tau: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.vehicles * self.position_dim);
        for i in 0..self.vehicles {
            let o = self.z_offset(i, tau);
            out.extend_from_slice(&v[o..o + self.position_dim]);
        }
        out
    }

    pub fn gather_inputs(&self, v: &[f64], tau: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.vehicles * self.input_dim);
        for i in 0..self.vehicles {
            let o = self.z_offset(i, tau) + self.position_dim;
            out.extend_from_slice(&v[o..o + self.input_dim]);
        }
        out
    }

    pub fn scatter_positions(&self, v: &mut [f64], tau: usize, positions: &[f64]) {
        for i in 0..self.vehicles {
            let o = self.z_offset(i, tau);
            v[o..o + self.position_dim]
                .copy_from_slice(&positions[i * self.position_dim..(i + 1) * self.position_dim]);
        }
    }

    pub fn scatter_inputs(&self, v: &mut [f64], tau: usize, inputs: &[f64]) {
        for i in 0..self.vehicles {
            let o = self.z_offset(i, tau) + self.position_dim;
            v[o..o + self.input_dim]
                .copy_from_slice(&inputs[i * self.input_dim..(i + 1) * self.input_dim]);
        }
    }

    /// Dense selection matrix. Only meant for tests and diagnostics.
    pub fn dense_selection(&self) -> DMatrix<f64> {
        let mut t = DMatrix::zeros(self.z_len(), self.y_len());
        for k in 0..self.z_len() {
            t[(k, self.select_source(k))] = 1.0;
        }
        t
    }
}

macro_rules! stacked {
    ($(#[$m:meta])* $name:ident, $len:ident) => {
        $(#[$m])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name(Vec<f64>);

        impl $name {
            pub fn zeros(layout: &HorizonLayout) -> Self {
                Self(vec![0.0; layout.$len()])
            }

            pub fn from_vec(layout: &HorizonLayout, v: Vec<f64>) -> Result<Self, LayoutError> {
                if v.len() != layout.$len() {
                    return Err(LayoutError::Length { expected: layout.$len(), got: v.len() });
                }
                Ok(Self(v))
            }

            pub fn as_slice(&self) -> &[f64] {
                &self.0
            }

            pub fn as_mut_slice(&mut self) -> &mut [f64] {
                &mut self.0
            }

            pub fn into_vec(self) -> Vec<f64> {
                self.0
            }

            pub fn len(&self) -> usize {
                self.0.len()
            }

            pub fn is_empty(&self) -> bool {
                self.0.is_empty()
            }
        }
    };
}

stacked!(
    /// Stacked trajectory variable `y`.
    StackedY, y_len
);
stacked!(
    /// Consensus copy `z` of the selected (position, input) components.
    StackedZ, z_len
);
stacked!(
    /// Dual variable for `𝒯y = z`, laid out like [`StackedZ`].
    DualLambda, z_len
);

/// `𝒯 y` computed through the index map.
pub fn select_t(layout: &HorizonLayout, y: &StackedY) -> StackedZ {
    let ys = y.as_slice();
    StackedZ((0..layout.z_len()).map(|k| ys[layout.select_source(k)]).collect())
}

/// `‖𝒯y − z‖`.
pub fn primal_residual(layout: &HorizonLayout, y: &StackedY, z: &StackedZ) -> f64 {
    let ys = y.as_slice();
    z.as_slice()
        .iter()
        .enumerate()
        .map(|(k, zk)| {
            let d = ys[layout.select_source(k)] - zk;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Tracking weights and reference for one vehicle.
#[derive(Debug, Clone, PartialEq)]
pub struct CostWeights {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    /// Reference states for `τ = 1..=T`.
    pub reference: Vec<DVector<f64>>,
}

impl CostWeights {
    pub fn new(
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        reference: Vec<DVector<f64>>,
    ) -> Result<Self, LayoutError> {
        let w = Self { q, r, reference };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), LayoutError> {
        let sym = |m: &DMatrix<f64>| m.is_square() && (m - m.transpose()).amax() <= 1e-12 * (1.0 + m.amax());
        if !sym(&self.q) || !sym(&self.r) {
            return Err(LayoutError::Weights("Q and R must be square and symmetric".into()));
        }
        let q_min = self.q.clone().symmetric_eigen().eigenvalues.min();
        if q_min < -1e-12 {
            return Err(LayoutError::Weights(format!("Q has negative eigenvalue {q_min}")));
        }
        let r_min = self.r.clone().symmetric_eigen().eigenvalues.min();
        if r_min <= 0.0 {
            return Err(LayoutError::Weights(format!("R is not positive definite (min eigenvalue {r_min})")));
        }
        if let Some(bad) = self.reference.iter().find(|x| x.len() != self.q.nrows()) {
            return Err(LayoutError::Weights(format!(
                "reference state of length {} does not match Q of size {}",
                bad.len(),
                self.q.nrows()
            )));
        }
        Ok(())
    }
}

/// Box on a vector, element-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxBounds {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl BoxBounds {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self, LayoutError> {
        if lower.len() != upper.len() {
            return Err(LayoutError::Bounds("lower and upper lengths differ".into()));
        }
        if let Some(k) = (0..lower.len()).find(|&k| !(lower[k] <= upper[k])) {
            return Err(LayoutError::Bounds(format!(
                "component {k}: lower {} > upper {}",
                lower[k], upper[k]
            )));
        }
        Ok(Self { lower, upper })
    }

    pub fn unbounded(dim: usize) -> Self {
        Self {
            lower: DVector::from_element(dim, f64::NEG_INFINITY),
            upper: DVector::from_element(dim, f64::INFINITY),
        }
    }

    pub fn clamp(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            v.len(),
            v.iter().enumerate().map(|(k, x)| x.clamp(self.lower[k], self.upper[k])),
        )
    }
}

/// Input box for every step `τ = 0..T-1` and an optional state box.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub inputs: Vec<BoxBounds>,
    pub states: Option<BoxBounds>,
}

impl Bounds {
    pub fn constant(input: BoxBounds, horizon: usize) -> Self {
        Self { inputs: vec![input; horizon], states: None }
    }

    pub fn unbounded(input_dim: usize, horizon: usize) -> Self {
        Self::constant(BoxBounds::unbounded(input_dim), horizon)
    }
}
