//! One line per acceptance criterion; exits non-zero if any fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use coop_admm::admm::{run, AdmmOptions, AdmmStatus};
use coop_admm::ddp::{DdpStatus, Trajectory};
use coop_admm::dynamics::{linearize, step, ControlInput, VehicleParams, VehicleState};
use coop_admm::miqp::{solve_miqp, BigMProjection};
use coop_admm::projection::{lifted_problem, pair_distance, project_positions, Backend};
use coop_admm::scenario::output::median;
use coop_admm::scenario::{run_experiment, ExperimentReport, ScenarioConfig};
use coop_admm::sdp::{solve_sdp, LinearConstraint, SdpProblem, SdpStatus, SparseSym};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn scenario(name: &str) -> (ScenarioConfig, ExperimentReport) {
    let cfg = ScenarioConfig::load(&config_path(name)).unwrap();
    let report = run_experiment(&cfg, Backend::Sdr, cfg.seed, &mut |_| {}).unwrap();
    (cfg, report)
}

/// Smallest distance between any two vehicles over `τ = 1..=T`.
fn min_pairwise(trajs: &[Trajectory]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..trajs.len() {
        for j in i + 1..trajs.len() {
            for (a, b) in trajs[i].states[1..].iter().zip(&trajs[j].states[1..]) {
                best = best.min(((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt());
            }
        }
    }
    best
}

fn ddp_riccati() -> Check {
    let (mut rel, mut abs, mut all_converged) = (0.0f64, 0.0f64, true);
    for seed in 0..50 {
        let (r, a, status) = common::ddp_vs_riccati(&common::lq_instance(seed, 4, 2), 20);
        rel = rel.max(r);
        abs = abs.max(a);
        all_converged &= status == DdpStatus::Converged;
    }
    ensure(
        rel <= 1e-6 && abs <= 1e-6 && all_converged,
        format!("50 instances, max relative cost error {rel:.2e}, max input error {abs:.2e}"),
    )
}

fn jacobians() -> Check {
    let params = VehicleParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let x = [
            rng.random_range(-50.0..50.0),
            rng.random_range(-50.0..50.0),
            rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
            rng.random_range(0.0..15.0),
        ];
        let u = [rng.random_range(-0.6..0.6), rng.random_range(-3.0..3.0)];
        let f = |x: &[f64; 4], u: &[f64; 2]| {
            let s = step(&VehicleState::new(x[0], x[1], x[2], x[3]), &ControlInput::new(u[0], u[1]), &params).unwrap();
            s.to_vector()
        };
        let (fx, fu) = linearize(&VehicleState::new(x[0], x[1], x[2], x[3]), &ControlInput::new(u[0], u[1]), &params).unwrap();
        for k in 0..4 {
            let (mut hi, mut lo) = (x, x);
            hi[k] += h;
            lo[k] -= h;
            let col = (f(&hi, &u) - f(&lo, &u)) / (2.0 * h);
            worst = worst.max((col - fx.column(k)).amax());
        }
        for k in 0..2 {
            let (mut hi, mut lo) = (u, u);
            hi[k] += h;
            lo[k] -= h;
            let col = (f(&x, &hi) - f(&x, &lo)) / (2.0 * h);
            worst = worst.max((col - fu.column(k)).amax());
        }
    }
    ensure(worst <= 1e-5, format!("1000 points, max entry error {worst:.2e}"))
}

fn sdp_suite() -> Check {
    let tol = 1e-7;
    let scalar = SdpProblem {
        dim: 1,
        objective: DMatrix::from_element(1, 1, 1.0),
        inequalities: vec![LinearConstraint::new(SparseSym::from_entries([(0, 0, 1.0)]), 3.0)],
        equalities: vec![],
    };
    let x = solve_sdp(&scalar, tol).unwrap().x[(0, 0)];
    let trace = SdpProblem {
        dim: 2,
        objective: DMatrix::identity(2, 2),
        inequalities: vec![LinearConstraint::new(SparseSym::from_entries([(0, 0, 1.0), (1, 1, 1.0)]), 2.0)],
        equalities: vec![],
    };
    let trace_obj = solve_sdp(&trace, tol).unwrap().objective;
    // symmetric push of (0,0) and (2,0) to distance 3 costs 2·0.5²
    let lifted = solve_sdp(&lifted_problem(&DVector::from_column_slice(&[0.0, 0.0, 2.0, 0.0]), &[(0, 1)], 3.0, 2), tol)
        .unwrap()
        .objective;
    let examples_ok = (x - 3.0).abs() <= 1e-6 && (trace_obj - 2.0).abs() <= 1e-6 && (lifted - 0.5).abs() <= 1e-6;

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = f64::NEG_INFINITY;
    let (mut optimal, mut infeasible) = (0, 0);
    for k in 0..100 {
        let t = common::random_target(&mut rng, k);
        let sol = solve_sdp(&lifted_problem(&t.c_p, &t.pairs, t.d_safe, 2), tol).unwrap();
        let oracle = project_positions(&t, Backend::Oracle, k as u64).unwrap();
        worst = worst.max(sol.objective - oracle.objective);
        optimal += usize::from(sol.status == SdpStatus::Optimal);
        infeasible += usize::from(sol.status == SdpStatus::Infeasible);
    }
    ensure(
        examples_ok && worst <= 1e-6 && infeasible == 0,
        format!(
            "examples X = {x:.7}, trace {trace_obj:.7}, lifted {lifted:.7}; 100 random ({optimal} to tolerance, the rest best iterate), max (SDP − oracle) {worst:.2e}"
        ),
    )
}

fn projection_agreement() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut ratio, mut min_gap, mut miqp_err, mut miqp_count) = (0.0f64, f64::INFINITY, 0.0f64, 0);
    for k in 0..200 {
        let t = common::random_target(&mut rng, k);
        let sdr = project_positions(&t, Backend::Sdr, k as u64).unwrap();
        let oracle = project_positions(&t, Backend::Oracle, k as u64).unwrap();
        if oracle.objective > 0.0 {
            ratio = ratio.max(sdr.objective / oracle.objective);
        } else if sdr.objective > 0.0 {
            ratio = f64::INFINITY;
        }
        for &(i, j) in &t.pairs {
            min_gap = min_gap.min(pair_distance(&sdr.positions, i, j, 2) - t.d_safe);
        }
        if t.pairs.len() <= 3 {
            let p = BigMProjection::new(t.c_p.clone(), t.pairs.clone(), t.d_safe, 2).unwrap();
            let sol = solve_miqp(&p).unwrap();
            let exact = common::miqp_by_enumeration(&t.c_p, &t.pairs, t.d_safe);
            miqp_err = miqp_err.max((sol.objective - exact).abs());
            miqp_count += 1;
        }
    }
    ensure(
        ratio <= 1.05 && min_gap >= -1e-6 && miqp_err <= 1e-8,
        format!(
            "200 instances, max SDR/oracle {ratio:.6}, min distance − d_safe {min_gap:.2e}; MIQP vs enumeration on {miqp_count}, max error {miqp_err:.2e}"
        ),
    )
}

fn scenario_check(name: &str) -> Check {
    let (cfg, report) = scenario(name);
    let residual = report.residuals[report.final_iteration - 1];
    let dmin = min_pairwise(&report.trajectories);
    ensure(
        report.status == AdmmStatus::Converged
            && residual <= cfg.params.eps
            && report.iterations <= 100
            && report.trajectories[0].inputs.len() == 100
            && dmin >= 2.99,
        format!(
            "{} vehicles, {:?} after {} iterations, residual {residual:.2e}, min distance {dmin:.4} m",
            report.trajectories.len(),
            report.status,
            report.iterations
        ),
    )
}

fn backend_ordering() -> Check {
    let cfg = ScenarioConfig::load(&config_path("s1.json")).unwrap();
    let median_for = |backend| {
        let mut its: Vec<f64> = (0..20)
            .map(|t| run_experiment(&cfg, backend, cfg.seed + t, &mut |_| {}).unwrap().iterations as f64)
            .collect();
        its.sort_by(f64::total_cmp);
        median(&its)
    };
    let (sdr, miqp) = (median_for(Backend::Sdr), median_for(Backend::Miqp));
    ensure(sdr <= miqp, format!("20 trials, median iterations SDR {sdr} vs MIQP {miqp}"))
}

fn convex_admm() -> Check {
    let p = common::convex_pair();
    let opts = AdmmOptions { eps: 1e-9, max_iterations: 50, ..AdmmOptions::default() };
    let out = run(&p, &opts, &mut |_| {}).unwrap();
    let inputs: Vec<Vec<DVector<f64>>> = out.state.trajectories.iter().map(|t| t.inputs.clone()).collect();
    let err = common::convex_input_error(&p, &inputs);
    ensure(
        out.status == AdmmStatus::Converged && err <= 1e-4,
        format!("{:?} after {} iterations, max input error {err:.2e}", out.status, out.iterations),
    )
}

fn csvs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_path("s1.json");
    let run_once = |name: &str| {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_coop-admm"))
            .args(["run", "--config", cfg.to_str().unwrap(), "--backend", "sdr", "--seed", "7", "--out"])
            .arg(&out)
            .env_remove("RUST_LOG")
            .output()
            .unwrap()
            .status;
        (status.code(), csvs(&out))
    };
    let (a, b) = (run_once("a"), run_once("b"));
    let names: Vec<&str> = a.1.iter().map(|f| f.0.as_str()).collect();
    let bytes: usize = a.1.iter().map(|f| f.1.len()).sum();
    ensure(
        a.0 == Some(0) && b.0 == Some(0) && !a.1.is_empty() && a.1 == b.1,
        format!("exit codes {:?}/{:?}, {} identical across runs ({bytes} bytes)", a.0, b.0, names.join(", ")),
    )
}

fn main() {
    let criteria: [(&str, Option<Duration>, fn() -> Check); 9] = [
        ("DDP matches Riccati", Some(Duration::from_secs(5)), ddp_riccati),
        ("Jacobians match finite differences", Some(Duration::from_secs(1)), jacobians),
        ("SDP solver suite", Some(Duration::from_secs(30)), sdp_suite),
        ("projection oracle agreement", Some(Duration::from_secs(120)), projection_agreement),
        ("scenario 1 converges collision-free", Some(Duration::from_secs(60)), || scenario_check("s1.json")),
        ("scenario 2 converges collision-free", Some(Duration::from_secs(600)), || scenario_check("s2.json")),
        ("SDR needs no more iterations than MIQP", None, backend_ordering),
        ("convex ADMM reaches the QP optimum", Some(Duration::from_secs(5)), convex_admm),
        ("CLI runs are byte-identical", None, determinism),
    ];
    let mut failed = 0;
    for (k, (name, limit, check)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let elapsed = start.elapsed();
        let in_time = limit.is_none_or(|l| elapsed < l);
        let budget = limit.map_or(String::new(), |l| format!(" < {} s", l.as_secs()));
        let (pass, detail) = match result {
            Ok(d) => (in_time, d),
            Err(d) => (false, d),
        };
        failed += usize::from(!pass);
        println!(
            "criterion {}: {} {name}: {detail} [{:.2} s{budget}]",
            k + 1,
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
