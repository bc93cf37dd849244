//! End-to-end checks of the command-line surface and the external-solver
//! seam, driving the built binary.

use std::path::{Path, PathBuf};
use std::process::Command;

use irsim::conic::adapter::{external_solver_adapter, problem_to_json};
use irsim::conic::{
    solve_socp, Cone, ConeKind, ConicProblem, ExternalSolver, SocpProblem, SolveStatus,
    SolverTolerances,
};
use irsim::linalg::{RMat, RVec};

fn binary() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_irsim"))
}

fn scratch_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("irsim-cli-{tag}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run_ok(args: &[&str]) -> String {
    let output = Command::new(binary()).args(args).output().expect("binary runs");
    assert!(
        output.status.success(),
        "command {:?} failed: {}",
        args,
        String::from_utf8_lossy(&output.stderr)
    );
    String::from_utf8_lossy(&output.stdout).into_owned()
}

#[test]
fn usage_errors_exit_with_code_two() {
    let output = Command::new(binary())
        .args(["figure", "fig9"])
        .output()
        .expect("binary runs");
    assert_eq!(output.status.code(), Some(2));
    let output = Command::new(binary())
        .args(["single-user", "--schemes", "bogus-scheme"])
        .output()
        .expect("binary runs");
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn single_user_run_writes_deterministic_csv() {
    let dir = scratch_dir("det");
    let out1 = dir.join("a.csv");
    let out2 = dir.join("b.csv");
    let common = [
        "single-user",
        "--m",
        "6",
        "--realizations",
        "3",
        "--seed",
        "11",
        "--schemes",
        "random-phase,no-irs",
    ];
    run_ok(&[&common[..], &["--out", out1.to_str().unwrap(), "--workers", "2"]].concat());
    run_ok(&[&common[..], &["--out", out2.to_str().unwrap(), "--workers", "1"]].concat());
    let a = std::fs::read(&out1).unwrap();
    let b = std::fs::read(&out2).unwrap();
    assert_eq!(a, b, "same seed and spec must give byte-identical CSV");
    let rows = irsim::bench::read_csv(&out1).unwrap();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.status == "ok"));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn config_file_and_flags_compose() {
    let dir = scratch_dir("cfg");
    let cfg = dir.join("scenario.cfg");
    std::fs::write(&cfg, "num_irs_elements = 4\nmax_outer_iterations = 10\n").unwrap();
    let out = dir.join("rows.csv");
    run_ok(&[
        "single-user",
        "--config",
        cfg.to_str().unwrap(),
        "--realizations",
        "2",
        "--seed",
        "5",
        "--schemes",
        "no-irs",
        "--out",
        out.to_str().unwrap(),
    ]);
    let rows = irsim::bench::read_csv(&out).unwrap();
    assert_eq!(rows.len(), 2);
    std::fs::remove_dir_all(&dir).ok();
}

fn sample_problem() -> (SocpProblem, RVec) {
    // maximize R subject to |R| <= 3.
    let p = SocpProblem {
        num_vars: 1,
        objective_index: 0,
        cones: vec![Cone {
            kind: ConeKind::Norm,
            a: RMat::identity(1, 1),
            b: RVec::zeros(1),
            c: RVec::zeros(1),
            d: 3.0,
        }],
    };
    (p, RVec::from_vec(vec![0.25]))
}

#[test]
fn solve_conic_subcommand_round_trips() {
    let dir = scratch_dir("conic");
    let (p, start) = sample_problem();
    let doc = problem_to_json(&ConicProblem::Socp(p), Some(&start));
    let input = dir.join("problem.json");
    let output = dir.join("solution.json");
    std::fs::write(&input, serde_json::to_string(&doc).unwrap()).unwrap();
    run_ok(&[
        "solve-conic",
        "--input",
        input.to_str().unwrap(),
        "--output",
        output.to_str().unwrap(),
    ]);
    let text = std::fs::read_to_string(&output).unwrap();
    let parsed: irsim::conic::adapter::SolutionJson = serde_json::from_str(&text).unwrap();
    assert_eq!(parsed.status, SolveStatus::Optimal);
    assert!((parsed.objective - 3.0).abs() < 1e-5);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn adapter_through_own_binary_matches_bundled_solver() {
    // The binary's solve-conic mode doubles as an external solver; route 20
    // random instances through the process seam and compare against the
    // in-process solve.
    let handle = ExternalSolver {
        command: binary(),
        args: vec!["solve-conic".to_string()],
    };
    let tol = SolverTolerances::default();
    let mut rng_state = 0x1234_5678_u64;
    let mut next = move || {
        // Small xorshift for reproducible plain randoms in the test.
        rng_state ^= rng_state << 13;
        rng_state ^= rng_state >> 7;
        rng_state ^= rng_state << 17;
        (rng_state >> 11) as f64 / (1u64 << 53) as f64
    };
    for trial in 0..20 {
        // maximize R s.t. ||x - t||^2 <= c - R, ||x|| <= rho.
        let tx = 2.0 * next() - 1.0;
        let ty = 2.0 * next() - 1.0;
        let c = 3.0 + 2.0 * next();
        let rho = 0.5 + next();
        let mut a1 = RMat::zeros(2, 3);
        a1[(0, 0)] = 1.0;
        a1[(1, 1)] = 1.0;
        let mut c1 = RVec::zeros(3);
        c1[2] = -1.0;
        let p = SocpProblem {
            num_vars: 3,
            objective_index: 2,
            cones: vec![
                Cone {
                    kind: ConeKind::SquaredNorm,
                    a: a1.clone(),
                    b: RVec::from_vec(vec![-tx, -ty]),
                    c: c1,
                    d: c,
                },
                Cone {
                    kind: ConeKind::Norm,
                    a: a1,
                    b: RVec::zeros(2),
                    c: RVec::zeros(3),
                    d: rho,
                },
            ],
        };
        let start = RVec::from_vec(vec![0.0, 0.0, 0.0]);
        let direct = solve_socp(&p, &start, &tol).unwrap();
        let via_adapter = external_solver_adapter(
            &ConicProblem::Socp(p),
            Some(&start),
            &handle,
            &tol,
        )
        .unwrap();
        let rel = (direct.objective - via_adapter.objective).abs()
            / direct.objective.abs().max(1.0);
        assert!(
            rel < 1e-4,
            "trial {trial}: direct {} vs adapter {}",
            direct.objective,
            via_adapter.objective
        );
    }
}

#[test]
fn missing_external_solver_is_explicit() {
    let (p, start) = sample_problem();
    let handle = ExternalSolver {
        command: Path::new("/nonexistent/solver-binary").to_path_buf(),
        args: vec![],
    };
    let err = external_solver_adapter(
        &ConicProblem::Socp(p),
        Some(&start),
        &handle,
        &SolverTolerances::default(),
    )
    .unwrap_err();
    assert!(matches!(err, irsim::Error::Adapter(_)));
}

#[test]
fn figure_preset_emits_trajectories() {
    let dir = scratch_dir("fig2");
    let out = dir.join("traj.csv");
    run_ok(&[
        "figure",
        "fig2",
        "--m",
        "4,6",
        "--realizations",
        "2",
        "--seed",
        "9",
        "--out",
        out.to_str().unwrap(),
    ]);
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert!(header.contains("iteration") && header.contains("objective_nats"));
    assert!(lines.count() >= 4);
    std::fs::remove_dir_all(&dir).ok();
}
