//! Consensus ADMM over `𝒯y = z`: parallel per-vehicle DDP for `y`, parallel
//! per-timestep projections for `z`, then dual ascent on `λ`.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ddp::{solve_agent, Augmentation, DdpError, DdpOptions, StageCostModel, StatePenalty, Trajectory};
use crate::dynamics::Dynamics;
use crate::layout::{primal_residual, select_t, BoxBounds, Bounds, CostWeights, DualLambda, HorizonLayout, StackedY, StackedZ};
use crate::projection::{clamp_inputs, project_positions, Backend, ProjectionError, ProjectionTarget};
use crate::topology::ConstraintGraph;

pub const THREADS_ENV: &str = "COOP_ADMM_THREADS";

#[derive(Debug, Error)]
pub enum AdmmError {
    #[error("invalid problem: {0}")]
    Invalid(String),
    #[error("DDP failed for vehicle {vehicle}: {source}")]
    Agent { vehicle: usize, source: DdpError },
    #[error("projection failed at tau = {tau}: {source}")]
    Projection { tau: usize, source: ProjectionError },
    #[error("could not build worker pool: {0}")]
    Pool(String),
}

/// Everything the iteration needs besides tuning options.
#[derive(Clone)]
pub struct AdmmProblem {
    pub layout: HorizonLayout,
    pub dynamics: Vec<Arc<dyn Dynamics>>,
    pub initial_states: Vec<DVector<f64>>,
    pub weights: Vec<CostWeights>,
    pub bounds: Vec<Bounds>,
    /// Weight of the quadratic penalty used for optional state boxes.
    pub state_penalty_weight: f64,
    pub graph: ConstraintGraph,
    pub d_safe: f64,
}

impl AdmmProblem {
    pub fn validate(&self) -> Result<(), AdmmError> {
        let l = &self.layout;
        let n = l.vehicles;
        let bad = |msg: String| Err(AdmmError::Invalid(msg));
        if self.dynamics.len() != n || self.initial_states.len() != n || self.weights.len() != n || self.bounds.len() != n {
            return bad(format!("expected per-vehicle data for {n} vehicles"));
        }
        if self.graph.nodes() != n {
            return bad(format!("graph has {} nodes for {n} vehicles", self.graph.nodes()));
        }
        if !(self.d_safe > 0.0) {
            return bad(format!("d_safe must be positive, got {}", self.d_safe));
        }
        for i in 0..n {
            let d = &self.dynamics[i];
            if d.state_dim() != l.state_dim || d.input_dim() != l.input_dim {
                return bad(format!("vehicle {i}: dynamics dimensions do not match the layout"));
            }
            if self.initial_states[i].len() != l.state_dim {
                return bad(format!("vehicle {i}: initial state has wrong length"));
            }
            self.weights[i].validate().map_err(|e| AdmmError::Invalid(format!("vehicle {i}: {e}")))?;
            if self.weights[i].reference.len() != l.horizon {
                return bad(format!("vehicle {i}: reference length differs from the horizon"));
            }
            if self.bounds[i].inputs.len() != l.horizon {
                return bad(format!("vehicle {i}: input bounds length differs from the horizon"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmmOptions {
    pub sigma: f64,
    pub eps: f64,
    pub max_iterations: usize,
    pub backend: Backend,
    pub ddp: DdpOptions,
    pub seed: u64,
    /// Worker count; `None` reads `COOP_ADMM_THREADS`, then falls back to
    /// the available parallelism.
    pub threads: Option<usize>,
    pub start: ConsensusStart,
}

/// How `y⁰` and `z⁰` are chosen. `λ⁰ = 0` either way.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConsensusStart {
    /// `y⁰` is the zero-input rollout and `z⁰ = 0`.
    Zero,
    /// `y⁰` solves each vehicle's tracking problem without coupling and
    /// `z⁰ = 𝒯y⁰`.
    #[default]
    Tracking,
}

impl Default for AdmmOptions {
    fn default() -> Self {
        Self {
            sigma: 10.0,
            eps: 0.01,
            max_iterations: 100,
            backend: Backend::Sdr,
            ddp: DdpOptions::default(),
            seed: 0,
            threads: None,
            start: ConsensusStart::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepTiming {
    pub y_ms: f64,
    pub z_ms: f64,
}

#[derive(Debug, Clone)]
pub struct AdmmState {
    pub k: usize,
    pub y: StackedY,
    pub z: StackedZ,
    pub lambda: DualLambda,
    pub residuals: Vec<f64>,
    pub dual_residuals: Vec<f64>,
    pub timings: Vec<StepTiming>,
    /// Per-vehicle trajectories that `y` encodes.
    pub trajectories: Vec<Trajectory>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProgressRecord {
    pub iteration: usize,
    pub residual: f64,
    pub dual_residual: f64,
    pub y_ms: f64,
    pub z_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdmmStatus {
    Converged,
    NotConverged,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub residuals: Vec<f64>,
    pub dual_residuals: Vec<f64>,
    pub timings: Vec<StepTiming>,
}

impl History {
    fn of(state: &AdmmState) -> Self {
        Self {
            residuals: state.residuals.clone(),
            dual_residuals: state.dual_residuals.clone(),
            timings: state.timings.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdmmRun {
    /// The converged state, or the lowest-residual one otherwise.
    pub state: AdmmState,
    pub status: AdmmStatus,
    /// Iterations actually performed.
    pub iterations: usize,
    /// Residuals and timings of all performed iterations.
    pub history: History,
    /// Trajectories of every iterate, starting with the initial rollout.
    pub iterates: Vec<Vec<Trajectory>>,
}

/// Writes trajectories into the stacked `y` layout.
pub fn encode_y(layout: &HorizonLayout, trajectories: &[Trajectory]) -> StackedY {
    let mut y = vec![0.0; layout.y_len()];
    let n = layout.state_dim;
    for (i, traj) in trajectories.iter().enumerate() {
        for tau in 1..=layout.horizon {
            let o = layout.y_offset(i, tau);
            y[o..o + n].copy_from_slice(traj.states[tau].as_slice());
            y[o + n..o + layout.y_block()].copy_from_slice(traj.inputs[tau - 1].as_slice());
        }
    }
    StackedY::from_vec(layout, y).expect("length matches the layout")
}

/// Iteration-zero state per [`ConsensusStart`].
pub fn initial_state(problem: &AdmmProblem, opts: &AdmmOptions) -> Result<AdmmState, AdmmError> {
    problem.validate()?;
    let layout = &problem.layout;
    let trajectories = (0..layout.vehicles)
        .into_par_iter()
        .map(|i| {
            let idle = Trajectory::idle(problem.dynamics[i].as_ref(), problem.initial_states[i].clone(), layout.horizon)
                .map_err(|e| AdmmError::Agent { vehicle: i, source: e.into() })?;
            match opts.start {
                ConsensusStart::Zero => Ok(idle),
                ConsensusStart::Tracking => {
                    let cost = vehicle_cost(problem, i, None);
                    solve_agent(problem.dynamics[i].as_ref(), &cost, &problem.bounds[i], &idle, &opts.ddp)
                        .map(|out| out.trajectory)
                        .map_err(|source| AdmmError::Agent { vehicle: i, source })
                }
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    let y = encode_y(layout, &trajectories);
    let z = match opts.start {
        ConsensusStart::Zero => StackedZ::zeros(layout),
        ConsensusStart::Tracking => select_t(layout, &y),
    };
    Ok(AdmmState {
        k: 0,
        y,
        z,
        lambda: DualLambda::zeros(layout),
        residuals: Vec::new(),
        dual_residuals: Vec::new(),
        timings: Vec::new(),
        trajectories,
    })
}

fn vehicle_cost(problem: &AdmmProblem, i: usize, augmentation: Option<Augmentation>) -> StageCostModel {
    let w = &problem.weights[i];
    StageCostModel {
        q: w.q.clone(),
        r: w.r.clone(),
        reference: w.reference.clone(),
        position_dim: problem.layout.position_dim,
        augmentation,
        state_penalty: problem.bounds[i]
            .states
            .clone()
            .map(|bounds| StatePenalty { bounds, weight: problem.state_penalty_weight }),
    }
}

/// Seed of the randomized projection at iteration `k`, step `tau`.
pub fn projection_seed(seed: u64, k: usize, tau: usize) -> u64 {
    let mut x = seed ^ ((k as u64) << 32 | tau as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// One ADMM iteration on the current rayon pool.
pub fn admm_step(state: &AdmmState, problem: &AdmmProblem, opts: &AdmmOptions) -> Result<AdmmState, AdmmError> {
    let layout = &problem.layout;
    let sigma = opts.sigma;
    if !(sigma > 0.0) || !(opts.eps > 0.0) {
        return Err(AdmmError::Invalid("sigma and eps must be positive".into()));
    }
    let zb = layout.z_block();
    let z = state.z.as_slice();
    let lam = state.lambda.as_slice();

    // y-update
    let start = Instant::now();
    let trajectories = (0..layout.vehicles)
        .into_par_iter()
        .map(|i| {
            let targets = (1..=layout.horizon)
                .map(|tau| {
                    let o = layout.z_offset(i, tau);
                    DVector::from_fn(zb, |c, _| z[o + c] - lam[o + c] / sigma)
                })
                .collect();
            let cost = vehicle_cost(problem, i, Some(Augmentation { sigma, targets }));
            solve_agent(problem.dynamics[i].as_ref(), &cost, &problem.bounds[i], &state.trajectories[i], &opts.ddp)
                .map(|out| {
                    log::debug!("k = {} vehicle {i}: DDP {:?} after {} iterations, cost {:.6e}", state.k + 1, out.status, out.iterations, out.cost);
                    out.trajectory
                })
                .map_err(|source| AdmmError::Agent { vehicle: i, source })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let y = encode_y(layout, &trajectories);
    let ty = select_t(layout, &y);
    let y_ms = start.elapsed().as_secs_f64() * 1e3;

    // z-update on 𝒯y + λ/σ
    let start = Instant::now();
    let shifted: Vec<f64> = ty.as_slice().iter().zip(lam).map(|(t, l)| t + l / sigma).collect();
    let pairs = problem.graph.edges().to_vec();
    let blocks = (1..=layout.horizon)
        .into_par_iter()
        .map(|tau| {
            let m = layout.input_dim;
            let mut lower = DVector::zeros(layout.vehicles * m);
            let mut upper = DVector::zeros(layout.vehicles * m);
            for i in 0..layout.vehicles {
                let b = &problem.bounds[i].inputs[tau - 1];
                lower.rows_mut(i * m, m).copy_from(&b.lower);
                upper.rows_mut(i * m, m).copy_from(&b.upper);
            }
            let input_bounds = BoxBounds { lower, upper };
            let target = ProjectionTarget {
                tau,
                c_u: DVector::from_vec(layout.gather_inputs(&shifted, tau)),
                c_p: DVector::from_vec(layout.gather_positions(&shifted, tau)),
                pairs: pairs.clone(),
                d_safe: problem.d_safe,
                input_bounds,
                position_dim: layout.position_dim,
            };
            let z_u = clamp_inputs(&target.c_u, &target.input_bounds);
            let z_p = project_positions(&target, opts.backend, projection_seed(opts.seed, state.k + 1, tau))
                .map_err(|source| AdmmError::Projection { tau, source })?;
            Ok((z_p.positions, z_u))
        })
        .collect::<Result<Vec<_>, AdmmError>>()?;
    let mut z_next = StackedZ::zeros(layout);
    for (tau, (p, u)) in (1..=layout.horizon).zip(&blocks) {
        layout.scatter_positions(z_next.as_mut_slice(), tau, p.as_slice());
        layout.scatter_inputs(z_next.as_mut_slice(), tau, u.as_slice());
    }
    let z_ms = start.elapsed().as_secs_f64() * 1e3;

    // dual ascent
    let mut lambda = state.lambda.clone();
    for ((l, t), zk) in lambda.as_mut_slice().iter_mut().zip(ty.as_slice()).zip(z_next.as_slice()) {
        *l += sigma * (t - zk);
    }
    let residual = primal_residual(layout, &y, &z_next);
    let dual_residual = sigma
        * z_next.as_slice().iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();

    let mut residuals = state.residuals.clone();
    residuals.push(residual);
    let mut dual_residuals = state.dual_residuals.clone();
    dual_residuals.push(dual_residual);
    let mut timings = state.timings.clone();
    timings.push(StepTiming { y_ms, z_ms });
    Ok(AdmmState { k: state.k + 1, y, z: z_next, lambda, residuals, dual_residuals, timings, trajectories })
}

fn worker_count(opts: &AdmmOptions) -> usize {
    opts.threads
        .or_else(|| std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse().ok()))
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Iterates until `‖𝒯y − z‖ ≤ eps` or `max_iterations`.
pub fn run(
    problem: &AdmmProblem,
    opts: &AdmmOptions,
    sink: &mut dyn FnMut(&ProgressRecord),
) -> Result<AdmmRun, AdmmError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count(opts))
        .build()
        .map_err(|e| AdmmError::Pool(e.to_string()))?;
    let mut state = pool.install(|| initial_state(problem, opts))?;
    let mut iterates = vec![state.trajectories.clone()];
    let mut best: Option<AdmmState> = None;
    while state.k < opts.max_iterations {
        state = pool.install(|| admm_step(&state, problem, opts))?;
        iterates.push(state.trajectories.clone());
        let residual = *state.residuals.last().expect("step appends a residual");
        let timing = *state.timings.last().expect("step appends a timing");
        sink(&ProgressRecord {
            iteration: state.k,
            residual,
            dual_residual: *state.dual_residuals.last().expect("step appends a dual residual"),
            y_ms: timing.y_ms,
            z_ms: timing.z_ms,
        });
        if residual <= opts.eps {
            let iterations = state.k;
            let history = History::of(&state);
            return Ok(AdmmRun { state, status: AdmmStatus::Converged, iterations, history, iterates });
        }
        if best.as_ref().is_none_or(|b| residual < *b.residuals.last().unwrap()) {
            best = Some(state.clone());
        }
    }
    let iterations = state.k;
    let history = History::of(&state);
    let state = best.unwrap_or(state);
    if state.k != iterations {
        log::info!("returning iterate {} (lowest residual) of {iterations}", state.k);
    }
    Ok(AdmmRun { state, status: AdmmStatus::NotConverged, iterations, history, iterates })
}
