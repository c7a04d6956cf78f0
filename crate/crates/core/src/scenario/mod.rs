//! Junction and intersection scenarios: configuration, problem assembly,
//! experiment runs and report files.

pub mod geometry;
pub mod output;
pub mod svg;

use std::path::Path as FsPath;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::admm::{run, AdmmError, ConsensusStart, AdmmOptions, AdmmProblem, AdmmStatus, ProgressRecord, StepTiming};
use crate::ddp::{DdpOptions, Trajectory};
use crate::dynamics::{Bicycle, Dynamics, VehicleParams};
use crate::layout::{BoxBounds, Bounds, CostWeights, HorizonLayout};
use crate::projection::Backend;
use crate::topology::{build_graph, ConstraintGraph};

pub use geometry::{Arm, Maneuver, Path, RoadKind};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("cannot parse {path}: {source}")]
    Parse { path: String, source: serde_json::Error },
    #[error(transparent)]
    Admm(#[from] AdmmError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoadConfig {
    pub kind: RoadKind,
    pub lane_width: f64,
    /// Lanes per direction on every arm.
    pub lanes: usize,
    pub arm_length: f64,
    /// Defaults to 1.5 lane widths.
    pub turn_radius: Option<f64>,
}

impl Default for RoadConfig {
    fn default() -> Self {
        Self { kind: RoadKind::Intersection, lane_width: 4.0, lanes: 1, arm_length: 20.0, turn_radius: None }
    }
}

impl RoadConfig {
    pub fn turn_radius(&self) -> f64 {
        self.turn_radius.unwrap_or(1.5 * self.lane_width)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioParams {
    pub d_safe: f64,
    /// Communication range; absent means every pair is coupled.
    pub d_cmu: Option<f64>,
    pub tau_s: f64,
    pub horizon: usize,
    pub sigma: f64,
    pub eps: f64,
    pub max_iterations: usize,
    pub ddp_max_iterations: usize,
    pub steering_limit: f64,
    pub accel_limit: f64,
    pub length: f64,
    pub width: f64,
    pub wheelbase: f64,
    pub nominal_speed: f64,
    /// Diagonal of the state tracking weight `[p_x, p_y, θ, v]`.
    pub q: [f64; 4],
    /// Diagonal of the input weight `[δ, a]`.
    pub r: [f64; 2],
    pub start: ConsensusStart,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            d_safe: 3.0,
            d_cmu: None,
            tau_s: 0.1,
            horizon: 100,
            sigma: 10.0,
            eps: 0.01,
            max_iterations: 100,
            ddp_max_iterations: 100,
            steering_limit: 0.6,
            accel_limit: 3.0,
            length: 2.5,
            width: 1.6,
            wheelbase: 2.5,
            nominal_speed: 5.0,
            q: [0.02; 4],
            r: [0.02; 2],
            start: ConsensusStart::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleConfig {
    pub entry: Arm,
    pub maneuver: Maneuver,
    #[serde(default)]
    pub lane: usize,
    /// Distance before the junction centre; defaults to the arm length.
    #[serde(default)]
    pub start_distance: Option<f64>,
    /// Initial and reference speed; defaults to the nominal speed.
    #[serde(default)]
    pub speed: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub road: RoadConfig,
    #[serde(default)]
    pub params: ScenarioParams,
    pub vehicles: Vec<VehicleConfig>,
    #[serde(default = "default_backend")]
    pub backend: Backend,
    #[serde(default)]
    pub seed: u64,
}

fn default_backend() -> Backend {
    Backend::Sdr
}

/// A vehicle's start, path and reference, derived from its config.
#[derive(Debug, Clone, PartialEq)]
pub struct VehiclePlan {
    pub path: Path,
    pub initial_state: DVector<f64>,
    pub reference: Vec<DVector<f64>>,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: &FsPath) -> Result<Self, ScenarioError> {
        let shown = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Read { path: shown.clone(), source })?;
        Self::from_json(&text).map_err(|source| ScenarioError::Parse { path: shown, source })
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |msg: String| Err(ScenarioError::Config(msg));
        let p = &self.params;
        let positive = [
            ("d_safe", p.d_safe),
            ("tau_s", p.tau_s),
            ("sigma", p.sigma),
            ("eps", p.eps),
            ("steering_limit", p.steering_limit),
            ("accel_limit", p.accel_limit),
            ("length", p.length),
            ("width", p.width),
            ("wheelbase", p.wheelbase),
            ("nominal_speed", p.nominal_speed),
            ("lane_width", self.road.lane_width),
            ("arm_length", self.road.arm_length),
            ("turn_radius", self.road.turn_radius()),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if p.horizon == 0 || p.max_iterations == 0 || p.ddp_max_iterations == 0 {
            return bad("horizon and iteration limits must be positive".into());
        }
        if let Some(d) = p.d_cmu {
            if !(d >= p.d_safe) {
                return bad(format!("d_cmu ({d}) must be at least d_safe ({})", p.d_safe));
            }
        }
        if p.q.iter().any(|&w| !(w >= 0.0)) || p.r.iter().any(|&w| !(w > 0.0)) {
            return bad("q must be nonnegative and r positive".into());
        }
        if self.road.lanes == 0 {
            return bad("roads need at least one lane per direction".into());
        }
        if self.vehicles.is_empty() {
            return bad("at least one vehicle is required".into());
        }
        let arms = self.road.kind.arms();
        for (i, v) in self.vehicles.iter().enumerate() {
            if !arms.contains(&v.entry) {
                return bad(format!("vehicle {i}: {:?} road has no {:?} arm", self.road.kind, v.entry));
            }
            let exit = v.maneuver.exit_arm(v.entry);
            if !arms.contains(&exit) {
                return bad(format!("vehicle {i}: {:?} from {:?} leads to missing {exit:?} arm", v.maneuver, v.entry));
            }
            if v.lane >= self.road.lanes {
                return bad(format!("vehicle {i}: lane {} does not exist", v.lane));
            }
            if let Some(s) = v.speed {
                if !(s > 0.0 && s.is_finite()) {
                    return bad(format!("vehicle {i}: speed must be positive"));
                }
            }
            if let Some(d) = v.start_distance {
                if !d.is_finite() {
                    return bad(format!("vehicle {i}: start distance must be finite"));
                }
            }
        }
        self.plans().map(|_| ())
    }

    pub fn plans(&self) -> Result<Vec<VehiclePlan>, ScenarioError> {
        let p = &self.params;
        self.vehicles
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let path = Path::new(
                    v.entry,
                    v.maneuver,
                    v.lane,
                    self.road.lane_width,
                    v.start_distance.unwrap_or(self.road.arm_length),
                    self.road.turn_radius(),
                )
                .map_err(|e| ScenarioError::Config(format!("vehicle {i}: {e}")))?;
                let speed = v.speed.unwrap_or(p.nominal_speed);
                let reference = path
                    .reference(speed, p.tau_s, p.horizon)
                    .map_err(|e| ScenarioError::Config(format!("vehicle {i}: {e}")))?;
                let initial_state = DVector::from_column_slice(&[path.start[0], path.start[1], path.heading, speed]);
                Ok(VehiclePlan { path, initial_state, reference })
            })
            .collect()
    }

    pub fn vehicle_params(&self) -> VehicleParams {
        let p = &self.params;
        VehicleParams { wheelbase: p.wheelbase, tau_s: p.tau_s, length: p.length, width: p.width }
    }

    pub fn graph(&self, plans: &[VehiclePlan]) -> Result<ConstraintGraph, ScenarioError> {
        let starts: Vec<[f64; 2]> = plans.iter().map(|p| p.path.start).collect();
        build_graph(&starts, self.params.d_safe, self.params.d_cmu.unwrap_or(f64::INFINITY))
            .map_err(|e| ScenarioError::Config(e.to_string()))
    }

    pub fn problem(&self) -> Result<(AdmmProblem, Vec<VehiclePlan>), ScenarioError> {
        self.validate()?;
        let p = &self.params;
        let plans = self.plans()?;
        let n = plans.len();
        let layout = HorizonLayout::bicycle(n, p.horizon).map_err(|e| ScenarioError::Config(e.to_string()))?;
        let dynamics: Arc<dyn Dynamics> = Arc::new(Bicycle::new(self.vehicle_params()));
        let q = DMatrix::from_diagonal(&DVector::from_column_slice(&p.q));
        let r = DMatrix::from_diagonal(&DVector::from_column_slice(&p.r));
        let limits = DVector::from_column_slice(&[p.steering_limit, p.accel_limit]);
        let input_box = BoxBounds::new(-&limits, limits).map_err(|e| ScenarioError::Config(e.to_string()))?;
        let weights = plans
            .iter()
            .map(|plan| CostWeights::new(q.clone(), r.clone(), plan.reference.clone()))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| ScenarioError::Config(e.to_string()))?;
        let problem = AdmmProblem {
            layout,
            dynamics: vec![dynamics; n],
            initial_states: plans.iter().map(|plan| plan.initial_state.clone()).collect(),
            weights,
            bounds: vec![Bounds::constant(input_box, p.horizon); n],
            state_penalty_weight: 0.0,
            graph: self.graph(&plans)?,
            d_safe: p.d_safe,
        };
        Ok((problem, plans))
    }

    pub fn admm_options(&self, backend: Backend, seed: u64) -> AdmmOptions {
        let p = &self.params;
        AdmmOptions {
            sigma: p.sigma,
            eps: p.eps,
            max_iterations: p.max_iterations,
            backend,
            ddp: DdpOptions { max_iterations: p.ddp_max_iterations, ..DdpOptions::default() },
            seed,
            threads: None,
            start: p.start,
        }
    }
}

/// Distances of one constrained pair over `τ = 1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSeries {
    pub pair: (usize, usize),
    pub distances: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub scenario: String,
    pub backend: Backend,
    pub seed: u64,
    pub status: AdmmStatus,
    pub iterations: usize,
    /// Index into `iterates` of the returned trajectories.
    pub final_iteration: usize,
    pub residuals: Vec<f64>,
    pub timings: Vec<StepTiming>,
    pub total_seconds: f64,
    pub d_safe: f64,
    pub tau_s: f64,
    pub road: RoadConfig,
    pub vehicle_length: f64,
    pub vehicle_width: f64,
    pub references: Vec<Vec<DVector<f64>>>,
    /// Trajectories of every iterate, starting with the initial rollout.
    pub iterates: Vec<Vec<Trajectory>>,
    pub trajectories: Vec<Trajectory>,
    pub distances: Vec<PairSeries>,
}

impl ExperimentReport {
    pub fn min_distance(&self) -> Option<f64> {
        self.distances.iter().flat_map(|s| s.distances.iter().copied()).reduce(f64::min)
    }

    pub fn converged(&self) -> bool {
        self.status == AdmmStatus::Converged
    }
}

/// Pairwise distances of the position components over `τ = 1..=T`.
pub fn distance_series(trajectories: &[Trajectory], pairs: &[(usize, usize)]) -> Vec<PairSeries> {
    pairs
        .iter()
        .map(|&(i, j)| PairSeries {
            pair: (i, j),
            distances: trajectories[i].states[1..]
                .iter()
                .zip(&trajectories[j].states[1..])
                .map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt())
                .collect(),
        })
        .collect()
}

pub fn run_experiment(
    config: &ScenarioConfig,
    backend: Backend,
    seed: u64,
    sink: &mut dyn FnMut(&ProgressRecord),
) -> Result<ExperimentReport, ScenarioError> {
    let (problem, plans) = config.problem()?;
    let opts = config.admm_options(backend, seed);
    let start = Instant::now();
    let out = run(&problem, &opts, sink)?;
    let total_seconds = start.elapsed().as_secs_f64();
    let distances = distance_series(&out.state.trajectories, problem.graph.edges());
    Ok(ExperimentReport {
        scenario: config.name.clone(),
        backend,
        seed,
        status: out.status,
        iterations: out.iterations,
        final_iteration: out.state.k,
        residuals: out.history.residuals,
        timings: out.history.timings,
        total_seconds,
        d_safe: config.params.d_safe,
        tau_s: config.params.tau_s,
        road: config.road.clone(),
        vehicle_length: config.params.length,
        vehicle_width: config.params.width,
        references: plans.into_iter().map(|p| p.reference).collect(),
        iterates: out.iterates,
        trajectories: out.state.trajectories,
        distances,
    })
}
