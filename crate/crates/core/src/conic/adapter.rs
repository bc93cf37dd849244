//! Problem/solution exchange format and the external-solver seam.
//!
//! Problems serialize to a documented JSON schema (dense row-major matrices,
//! numbers in shortest round-trip decimal form, which preserves every f64
//! bit pattern on parse). An external solver is any executable that reads
//! one problem document on stdin and writes one solution document on stdout.
//! Results coming back through the seam are re-verified against the problem
//! before they are accepted; a missing or failing solver is a hard error,
//! never a silent fallback.

use std::io::Write;
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};

use super::socp::{Cone, ConeKind, SocpProblem};
use super::{ConicProblem, ConicSolution, PrimalValues, SdpProblem, SolveStatus, SolverTolerances};
use crate::linalg::{CMat, RMat, RVec};
use crate::{Error, Result};

/// Schema version of the exchange format.
pub const FORMAT_VERSION: u32 = 1;

/// Handle to an external conic solver process.
#[derive(Debug, Clone)]
pub struct ExternalSolver {
    /// Executable to launch.
    pub command: std::path::PathBuf,
    /// Arguments passed before the problem is piped on stdin.
    pub args: Vec<String>,
}

/// Dense real matrix payload.
#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct DenseMatrixJson {
    /// Row count.
    pub rows: usize,
    /// Column count.
    pub cols: usize,
    /// Row-major entries.
    pub data: Vec<f64>,
}

impl DenseMatrixJson {
    fn from_real(m: &RMat) -> Self {
        let mut data = Vec::with_capacity(m.nrows() * m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)]);
            }
        }
        Self { rows: m.nrows(), cols: m.ncols(), data }
    }

    fn to_real(&self) -> Result<RMat> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::Adapter("matrix payload length mismatch".into()));
        }
        Ok(RMat::from_row_slice(self.rows, self.cols, &self.data))
    }
}

/// Cone block of an SOCP document.
#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ConeJson {
    /// Cone flavour.
    pub kind: ConeKind,
    /// Row map of the vector part.
    pub a: DenseMatrixJson,
    /// Offset of the vector part.
    pub b: Vec<f64>,
    /// Row map of the scalar part.
    pub c: Vec<f64>,
    /// Offset of the scalar part.
    pub d: f64,
}

/// One rate constraint of an SDP document.
#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct SdpConstraintJson {
    /// Row-major real parts.
    pub psi_re: Vec<f64>,
    /// Row-major imaginary parts.
    pub psi_im: Vec<f64>,
    /// Constraint constant.
    pub constant: f64,
}

/// One problem document.
#[derive(Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProblemJson {
    /// Second-order cone program.
    Socp {
        /// Schema version.
        version: u32,
        /// Variable count.
        num_vars: usize,
        /// Index of the maximized variable.
        objective_index: usize,
        /// Cone blocks.
        cones: Vec<ConeJson>,
        /// Strictly feasible start, required by barrier-type solvers.
        start: Option<Vec<f64>>,
    },
    /// Unit-diagonal semidefinite program.
    Sdp {
        /// Schema version.
        version: u32,
        /// Matrix dimension.
        dim: usize,
        /// Rate constraints.
        constraints: Vec<SdpConstraintJson>,
    },
}

/// One solution document.
#[derive(Debug, Serialize, Deserialize)]
pub struct SolutionJson {
    /// Schema version.
    pub version: u32,
    /// Termination state.
    pub status: SolveStatus,
    /// Objective value.
    pub objective: f64,
    /// SOCP variable vector.
    pub x: Option<Vec<f64>>,
    /// SDP matrix, row-major real parts.
    pub theta_re: Option<Vec<f64>>,
    /// SDP matrix, row-major imaginary parts.
    pub theta_im: Option<Vec<f64>>,
    /// SDP scalar variable.
    pub r: Option<f64>,
    /// Worst primal violation reported by the solver.
    pub primal_residual: f64,
    /// Gap estimate reported by the solver.
    pub gap_estimate: f64,
    /// Dual objective when certified.
    pub dual_objective: Option<f64>,
}

/// Serializes a problem (plus an optional SOCP start) to the exchange form.
pub fn problem_to_json(problem: &ConicProblem, start: Option<&RVec>) -> ProblemJson {
    match problem {
        ConicProblem::Socp(p) => ProblemJson::Socp {
            version: FORMAT_VERSION,
            num_vars: p.num_vars,
            objective_index: p.objective_index,
            cones: p
                .cones
                .iter()
                .map(|c| ConeJson {
                    kind: c.kind,
                    a: DenseMatrixJson::from_real(&c.a),
                    b: c.b.iter().cloned().collect(),
                    c: c.c.iter().cloned().collect(),
                    d: c.d,
                })
                .collect(),
            start: start.map(|s| s.iter().cloned().collect()),
        },
        ConicProblem::Sdp(p) => ProblemJson::Sdp {
            version: FORMAT_VERSION,
            dim: p.dim,
            constraints: p
                .psi
                .iter()
                .zip(&p.constants)
                .map(|(psi, &constant)| {
                    let mut re = Vec::with_capacity(p.dim * p.dim);
                    let mut im = Vec::with_capacity(p.dim * p.dim);
                    for i in 0..p.dim {
                        for j in 0..p.dim {
                            re.push(psi[(i, j)].re);
                            im.push(psi[(i, j)].im);
                        }
                    }
                    SdpConstraintJson { psi_re: re, psi_im: im, constant }
                })
                .collect(),
        },
    }
}

/// Parses a problem document back into solver structures.
pub fn problem_from_json(doc: &ProblemJson) -> Result<(ConicProblem, Option<RVec>)> {
    match doc {
        ProblemJson::Socp { version, num_vars, objective_index, cones, start } => {
            if *version != FORMAT_VERSION {
                return Err(Error::Adapter(format!("unsupported format version {version}")));
            }
            let cones = cones
                .iter()
                .map(|c| {
                    Ok(Cone {
                        kind: c.kind,
                        a: c.a.to_real()?,
                        b: RVec::from_vec(c.b.clone()),
                        c: RVec::from_vec(c.c.clone()),
                        d: c.d,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let p = SocpProblem {
                num_vars: *num_vars,
                objective_index: *objective_index,
                cones,
            };
            p.validate()?;
            Ok((ConicProblem::Socp(p), start.as_ref().map(|s| RVec::from_vec(s.clone()))))
        }
        ProblemJson::Sdp { version, dim, constraints } => {
            if *version != FORMAT_VERSION {
                return Err(Error::Adapter(format!("unsupported format version {version}")));
            }
            let mut psi = Vec::with_capacity(constraints.len());
            let mut constants = Vec::with_capacity(constraints.len());
            for c in constraints {
                if c.psi_re.len() != dim * dim || c.psi_im.len() != dim * dim {
                    return Err(Error::Adapter("constraint matrix payload mismatch".into()));
                }
                let m = CMat::from_fn(*dim, *dim, |i, j| {
                    num_complex::Complex::new(c.psi_re[i * dim + j], c.psi_im[i * dim + j])
                });
                psi.push(m);
                constants.push(c.constant);
            }
            let p = SdpProblem { dim: *dim, psi, constants };
            p.validate()?;
            Ok((ConicProblem::Sdp(p), None))
        }
    }
}

/// Serializes a solution to the exchange form.
pub fn solution_to_json(solution: &ConicSolution) -> SolutionJson {
    let (x, theta_re, theta_im, r) = match &solution.primal {
        PrimalValues::Socp { x } => (Some(x.iter().cloned().collect()), None, None, None),
        PrimalValues::Sdp { theta, r } => {
            let mut re = Vec::with_capacity(theta.len());
            let mut im = Vec::with_capacity(theta.len());
            for i in 0..theta.nrows() {
                for j in 0..theta.ncols() {
                    re.push(theta[(i, j)].re);
                    im.push(theta[(i, j)].im);
                }
            }
            (None, Some(re), Some(im), Some(*r))
        }
    };
    SolutionJson {
        version: FORMAT_VERSION,
        status: solution.status,
        objective: solution.objective,
        x,
        theta_re,
        theta_im,
        r,
        primal_residual: solution.primal_residual,
        gap_estimate: solution.gap_estimate,
        dual_objective: solution.dual_objective,
    }
}

/// Parses a solution document against its problem, recomputing the primal
/// residuals rather than trusting the reported ones.
pub fn solution_from_json(doc: &SolutionJson, problem: &ConicProblem) -> Result<ConicSolution> {
    if doc.version != FORMAT_VERSION {
        return Err(Error::Adapter(format!("unsupported format version {}", doc.version)));
    }
    match problem {
        ConicProblem::Socp(p) => {
            let x = doc
                .x
                .as_ref()
                .ok_or_else(|| Error::Adapter("solution lacks the variable vector".into()))?;
            if x.len() != p.num_vars {
                return Err(Error::Adapter("solution vector has wrong dimension".into()));
            }
            let x = RVec::from_vec(x.clone());
            let residual = p.max_violation(&x);
            Ok(ConicSolution {
                status: doc.status,
                objective: doc.objective,
                primal_residual: residual,
                gap_estimate: doc.gap_estimate,
                dual_objective: doc.dual_objective,
                primal: PrimalValues::Socp { x },
            })
        }
        ConicProblem::Sdp(p) => {
            let (re, im) = match (&doc.theta_re, &doc.theta_im) {
                (Some(re), Some(im)) => (re, im),
                _ => return Err(Error::Adapter("solution lacks the matrix variable".into())),
            };
            if re.len() != p.dim * p.dim || im.len() != p.dim * p.dim {
                return Err(Error::Adapter("solution matrix has wrong dimension".into()));
            }
            let theta = CMat::from_fn(p.dim, p.dim, |i, j| {
                num_complex::Complex::new(re[i * p.dim + j], im[i * p.dim + j])
            });
            let r = doc.r.unwrap_or(doc.objective);
            let (eigs, _) = crate::linalg::hermitian_eigen(&theta);
            let min_eig = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
            let diag_dev = (0..p.dim)
                .map(|m| (theta[(m, m)].re - 1.0).abs().max(theta[(m, m)].im.abs()))
                .fold(0.0, f64::max);
            let slack_violation = p
                .psi
                .iter()
                .zip(&p.constants)
                .map(|(psi, &c)| (crate::linalg::trace(&(psi * &theta)).re + r - c).max(0.0))
                .fold(0.0, f64::max);
            let residual = diag_dev.max((-min_eig).max(0.0)).max(slack_violation);
            Ok(ConicSolution {
                status: doc.status,
                objective: doc.objective,
                primal_residual: residual,
                gap_estimate: doc.gap_estimate,
                dual_objective: doc.dual_objective,
                primal: PrimalValues::Sdp { theta, r },
            })
        }
    }
}

/// Runs a problem through an external solver process and re-verifies the
/// returned solution against the residual contract.
pub fn external_solver_adapter(
    problem: &ConicProblem,
    start: Option<&RVec>,
    handle: &ExternalSolver,
    tol: &SolverTolerances,
) -> Result<ConicSolution> {
    let payload = serde_json::to_string(&problem_to_json(problem, start))
        .map_err(|e| Error::Adapter(format!("cannot serialize problem: {e}")))?;

    let mut child = Command::new(&handle.command)
        .args(&handle.args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| {
            Error::Adapter(format!("cannot launch solver '{}': {e}", handle.command.display()))
        })?;
    child
        .stdin
        .take()
        .expect("stdin was piped")
        .write_all(payload.as_bytes())
        .map_err(|e| Error::Adapter(format!("cannot write to solver: {e}")))?;
    let output = child
        .wait_with_output()
        .map_err(|e| Error::Adapter(format!("solver did not finish: {e}")))?;
    if !output.status.success() {
        return Err(Error::Adapter(format!(
            "solver exited with {}: {}",
            output.status,
            String::from_utf8_lossy(&output.stderr).trim()
        )));
    }
    let doc: SolutionJson = serde_json::from_slice(&output.stdout)
        .map_err(|e| Error::Adapter(format!("cannot parse solver output: {e}")))?;
    let solution = solution_from_json(&doc, problem)?;
    if solution.status == SolveStatus::Optimal && solution.primal_residual > tol.feasibility {
        return Err(Error::Adapter(format!(
            "solver result violates the residual contract ({:.3e} > {:.3e})",
            solution.primal_residual, tol.feasibility
        )));
    }
    Ok(solution)
}

/// Solves a parsed problem document with the bundled solvers (the CLI's
/// solve-conic entry point, which also makes the binary usable as an
/// external solver for another process).
pub fn solve_problem_document(doc: &ProblemJson, tol: &SolverTolerances) -> Result<SolutionJson> {
    let (problem, start) = problem_from_json(doc)?;
    let solution = match &problem {
        ConicProblem::Socp(p) => {
            let start = start.ok_or_else(|| {
                Error::Adapter("SOCP documents must carry a strictly feasible start".into())
            })?;
            super::socp::solve_socp(p, &start, tol)?
        }
        ConicProblem::Sdp(p) => super::sdp::solve_sdp(p, tol)?,
    };
    Ok(solution_to_json(&solution))
}

/// Structural equality between a problem and its round-tripped copy.
pub fn problems_equal(a: &ConicProblem, b: &ConicProblem) -> bool {
    match (a, b) {
        (ConicProblem::Socp(a), ConicProblem::Socp(b)) => {
            a.num_vars == b.num_vars
                && a.objective_index == b.objective_index
                && a.cones.len() == b.cones.len()
                && a.cones.iter().zip(&b.cones).all(|(x, y)| {
                    x.kind == y.kind && x.a == y.a && x.b == y.b && x.c == y.c && x.d == y.d
                })
        }
        (ConicProblem::Sdp(a), ConicProblem::Sdp(b)) => {
            a.dim == b.dim && a.psi == b.psi && a.constants == b.constants
        }
        _ => false,
    }
}
