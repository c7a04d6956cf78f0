use std::f64::consts::{FRAC_PI_2, PI};
use std::path::PathBuf;
use std::sync::OnceLock;

use coop_admm::admm::AdmmStatus;
use coop_admm::ddp::{solve_agent, DdpOptions, DdpStatus, StageCostModel, Trajectory};
use coop_admm::projection::Backend;
use coop_admm::scenario::output::{
    emit_outputs, read_distances, read_trajectories, summarize, trajectory_rows, write_distances, write_summary,
    write_trajectories, DISTANCES_CSV, FAN_SVG, SUMMARY_CSV, TRAJECTORIES_CSV,
};
use coop_admm::scenario::{run_experiment, Arm, ExperimentReport, Maneuver, Path, RoadConfig, ScenarioConfig};

fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn s1() -> &'static ExperimentReport {
    static REPORT: OnceLock<ExperimentReport> = OnceLock::new();
    REPORT.get_or_init(|| {
        let cfg = ScenarioConfig::load(&config_path("s1.json")).unwrap();
        run_experiment(&cfg, Backend::Sdr, cfg.seed, &mut |_| {}).unwrap()
    })
}

#[test]
fn trajectory_csv_round_trips_bit_for_bit() {
    let report = s1();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join(TRAJECTORIES_CSV);
    write_trajectories(report, &path).unwrap();
    let back = read_trajectories(&path).unwrap();
    let rows = trajectory_rows(report);
    assert_eq!(back.len(), rows.len());
    assert!(rows.iter().zip(&back).all(|(a, b)| a.bit_eq(b)));
    let horizon = report.trajectories[0].inputs.len();
    assert_eq!(rows.len(), 3 * report.iterates.len() * (horizon + 1));
    assert!(rows.iter().filter(|r| r.tau == horizon).all(|r| r.input.iter().all(|v| v.is_nan())));
}

#[test]
fn distance_csv_round_trips_and_matches_trajectories() {
    let report = s1();
    let dir = tempfile::tempdir().unwrap();
    write_trajectories(report, &dir.path().join(TRAJECTORIES_CSV)).unwrap();
    write_distances(report, &dir.path().join(DISTANCES_CSV)).unwrap();
    let rows = read_trajectories(&dir.path().join(TRAJECTORIES_CSV)).unwrap();
    let distances = read_distances(&dir.path().join(DISTANCES_CSV)).unwrap();
    let horizon = report.trajectories[0].inputs.len();
    assert_eq!(distances.len(), report.distances.len() * horizon);
    let position = |i: usize, tau: usize| {
        let r = rows
            .iter()
            .find(|r| r.iteration == report.final_iteration && r.vehicle == i && r.tau == tau)
            .unwrap();
        [r.state[0], r.state[1]]
    };
    for d in &distances {
        let series = report.distances.iter().find(|s| s.pair == d.pair).unwrap();
        assert_eq!(d.distance.to_bits(), series.distances[d.tau - 1].to_bits());
        let (a, b) = (position(d.pair.0, d.tau), position(d.pair.1, d.tau));
        let recomputed = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
        assert!((recomputed - d.distance).abs() <= 1e-12, "tau {} pair {:?}", d.tau, d.pair);
    }
}

#[test]
fn fan_plot_has_one_polyline_per_vehicle_and_iterate() {
    let report = s1();
    assert_eq!(report.iterates.len(), report.iterations + 1);
    let dir = tempfile::tempdir().unwrap();
    emit_outputs(report, dir.path()).unwrap();
    let svg = std::fs::read_to_string(dir.path().join(FAN_SVG)).unwrap();
    assert_eq!(svg.matches(r#"class="iterate""#).count(), 3 * (report.iterations + 1));
}

#[test]
fn empty_report_writes_headers_only() {
    let report = ExperimentReport {
        scenario: "empty".into(),
        backend: Backend::Sdr,
        seed: 0,
        status: AdmmStatus::Converged,
        iterations: 0,
        final_iteration: 0,
        residuals: vec![],
        timings: vec![],
        total_seconds: 0.0,
        d_safe: 3.0,
        tau_s: 0.1,
        road: RoadConfig::default(),
        vehicle_length: 2.5,
        vehicle_width: 1.6,
        references: vec![],
        iterates: vec![],
        trajectories: vec![],
        distances: vec![],
    };
    let dir = tempfile::tempdir().unwrap();
    let files = emit_outputs(&report, dir.path()).unwrap();
    assert!(files.iter().all(|f| f.exists()));
    let read = |name: &str| std::fs::read_to_string(dir.path().join(name)).unwrap();
    assert_eq!(read(TRAJECTORIES_CSV), "vehicle,iteration,tau,p_x,p_y,theta,v,delta,a\n");
    assert_eq!(read(DISTANCES_CSV), "tau,pair,distance\n");
    write_summary(&[], &dir.path().join(SUMMARY_CSV)).unwrap();
    assert_eq!(
        read(SUMMARY_CSV),
        "backend,scenario,trials,converged,iterations,median_iterations,y_step_ms,z_step_ms,total_s\n"
    );
}

#[test]
fn summary_row_reflects_the_report() {
    let report = s1();
    let row = summarize(std::slice::from_ref(report)).unwrap();
    assert_eq!(row.backend, "sdr");
    assert_eq!(row.scenario, "s1");
    assert_eq!((row.trials, row.converged), (1, 1));
    assert_eq!(row.median_iterations, report.iterations as f64);
    assert!(row.y_step_ms > 0.0 && row.z_step_ms > 0.0);
    assert!(summarize(&[]).is_none());
}

#[test]
fn left_turn_from_east_ends_a_quarter_turn_later() {
    let path = Path::new(Arm::East, Maneuver::Left, 0, 4.0, 20.0, 6.0).unwrap();
    let r = path.reference(5.0, 0.1, 100).unwrap();
    assert_eq!(path.heading, PI);
    assert!((r.last().unwrap()[2] - (PI + FRAC_PI_2)).abs() <= 1e-12);
    // leaves southward on the lane right of travel
    assert!((r.last().unwrap()[0] - (-2.0)).abs() <= 1e-9);
}

#[test]
fn reference_samples_are_evenly_spaced_in_arc_length() {
    let (speed, tau_s, radius) = (5.0, 0.1, 6.0);
    let step = speed * tau_s;
    for entry in Arm::ALL {
        for maneuver in [Maneuver::Left, Maneuver::Right, Maneuver::Straight] {
            let path = Path::new(entry, maneuver, 0, 4.0, 20.0, radius).unwrap();
            let r = path.reference(speed, tau_s, 100).unwrap();
            let (start, _) = path.sample(0.0);
            let mut prev = [start[0], start[1], path.heading];
            for x in &r {
                let chord = ((x[0] - prev[0]).powi(2) + (x[1] - prev[1]).powi(2)).sqrt();
                let turned = (x[2] - prev[2]).abs();
                if turned == 0.0 {
                    assert!((chord - step).abs() <= 1e-9, "{entry:?} {maneuver:?}: chord {chord}");
                } else if (turned * radius - step).abs() <= 1e-9 {
                    // both samples on the arc
                    let expected = 2.0 * radius * (step / (2.0 * radius)).sin();
                    assert!((chord - expected).abs() <= 1e-9, "{entry:?} {maneuver:?}: chord {chord} vs {expected}");
                } else {
                    // straddles a tangent point
                    assert!(chord <= step + 1e-9 && chord >= 2.0 * radius * (step / (2.0 * radius)).sin() - 1e-9);
                }
                assert_eq!(x[3], speed);
                prev = [x[0], x[1], x[2]];
            }
        }
    }
}

#[test]
fn straight_reference_keeps_heading_and_lane() {
    let path = Path::new(Arm::South, Maneuver::Straight, 1, 4.0, 20.0, 6.0).unwrap();
    for x in path.reference(5.0, 0.1, 100).unwrap() {
        assert_eq!(x[2], FRAC_PI_2);
        assert!((x[0] - 6.0).abs() <= 1e-9, "lateral {}", x[0]);
    }
}

#[test]
fn references_are_trackable_inside_the_input_limits() {
    // solving each vehicle alone, the limits never bind, so the same point is
    // a local optimum of the unbounded problem
    for name in ["s1.json", "s2.json"] {
        let cfg = ScenarioConfig::load(&config_path(name)).unwrap();
        let (p, _) = cfg.problem().unwrap();
        for i in 0..p.layout.vehicles {
            let w = &p.weights[i];
            let cost = StageCostModel::tracking(w.q.clone(), w.r.clone(), w.reference.clone(), 2);
            let dynamics = p.dynamics[i].as_ref();
            let init = Trajectory::idle(dynamics, p.initial_states[i].clone(), p.layout.horizon).unwrap();
            let out = solve_agent(dynamics, &cost, &p.bounds[i], &init, &DdpOptions::default()).unwrap();
            assert_eq!(out.status, DdpStatus::Converged, "{name} vehicle {i}");
            assert!(out.cost <= 0.1, "{name} vehicle {i}: cost {}", out.cost);
            let deviation = out.trajectory.states[1..]
                .iter()
                .zip(&w.reference)
                .map(|(x, r)| ((x[0] - r[0]).powi(2) + (x[1] - r[1]).powi(2)).sqrt())
                .fold(0.0, f64::max);
            assert!(deviation <= 0.25, "{name} vehicle {i}: deviation {deviation}");
            for (t, u) in out.trajectory.inputs.iter().enumerate() {
                let b = &p.bounds[i].inputs[t];
                for k in 0..2 {
                    let margin = (u[k] - b.lower[k]).min(b.upper[k] - u[k]);
                    assert!(margin >= 0.1, "{name} vehicle {i} step {t}: input {k} = {}", u[k]);
                }
            }
        }
    }
}
