//! Desk-scale dense conic solvers: a log-barrier interior-point method for
//! second-order-cone programs and a dual barrier method for unit-diagonal
//! semidefinite programs, plus a JSON adapter seam for an external solver.

pub mod adapter;
pub mod sdp;
pub mod socp;

pub use adapter::{external_solver_adapter, ExternalSolver};
pub use sdp::{solve_sdp, SdpProblem};
pub use socp::{solve_socp, Cone, ConeKind, SocpProblem};

use crate::linalg::{CMat, RVec};

/// Termination state of a conic solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    /// Feasible solution with certified residuals.
    Optimal,
    /// Iteration budget hit; best iterate returned.
    MaxIterations,
    /// No strictly feasible start was available.
    Infeasible,
}

/// Solver tolerances and barrier-schedule parameters.
#[derive(Debug, Clone)]
pub struct SolverTolerances {
    /// Primal feasibility residual bound for an `Optimal` status.
    pub feasibility: f64,
    /// Duality-gap bound relative to `1 + |objective|`.
    pub gap: f64,
    /// Inner Newton stopping threshold on the gradient norm.
    pub newton: f64,
    /// Initial barrier weight.
    pub mu_init: f64,
    /// Multiplicative barrier shrink per stage.
    pub mu_shrink: f64,
    /// Armijo slope fraction of the backtracking line search.
    pub backtrack_alpha: f64,
    /// Step shrink factor of the backtracking line search.
    pub backtrack_beta: f64,
    /// Newton iteration cap per barrier stage.
    pub max_newton: usize,
    /// Barrier stage cap.
    pub max_stages: usize,
}

impl Default for SolverTolerances {
    fn default() -> Self {
        Self {
            feasibility: 1e-6,
            gap: 1e-7,
            newton: 1e-8,
            mu_init: 1.0,
            mu_shrink: 0.1,
            backtrack_alpha: 0.25,
            backtrack_beta: 0.5,
            max_newton: 80,
            max_stages: 24,
        }
    }
}

/// A problem instance for either solver.
#[derive(Debug, Clone)]
pub enum ConicProblem {
    /// Second-order cone program.
    Socp(SocpProblem),
    /// Unit-diagonal semidefinite program.
    Sdp(SdpProblem),
}

/// Primal values of a solution.
#[derive(Debug, Clone)]
pub enum PrimalValues {
    /// SOCP variable vector.
    Socp {
        /// Full variable vector including the objective variable.
        x: RVec,
    },
    /// SDP matrix variable plus the scalar objective variable.
    Sdp {
        /// Hermitian PSD matrix with unit diagonal.
        theta: CMat,
        /// Scalar objective variable.
        r: f64,
    },
}

/// Solve result shared by both solvers.
#[derive(Debug, Clone)]
pub struct ConicSolution {
    /// Termination state.
    pub status: SolveStatus,
    /// Primal values.
    pub primal: PrimalValues,
    /// Objective value (the maximized scalar).
    pub objective: f64,
    /// Worst primal constraint violation.
    pub primal_residual: f64,
    /// Duality-gap estimate (exact gap for the SDP path).
    pub gap_estimate: f64,
    /// Dual objective when the method certifies one.
    pub dual_objective: Option<f64>,
}

impl ConicSolution {
    /// Variable vector of an SOCP solution.
    pub fn x(&self) -> &RVec {
        match &self.primal {
            PrimalValues::Socp { x } => x,
            PrimalValues::Sdp { .. } => panic!("not an SOCP solution"),
        }
    }

    /// Matrix variable of an SDP solution.
    pub fn theta(&self) -> &CMat {
        match &self.primal {
            PrimalValues::Sdp { theta, .. } => theta,
            PrimalValues::Socp { .. } => panic!("not an SDP solution"),
        }
    }

    /// Value achieved by the returned SDP matrix (the objective field
    /// carries the certified upper bound; this is the bracket's lower end).
    pub fn sdp_achieved(&self) -> f64 {
        match &self.primal {
            PrimalValues::Sdp { r, .. } => *r,
            PrimalValues::Socp { .. } => panic!("not an SDP solution"),
        }
    }
}
