//! Log-barrier interior-point solver for second-order-cone programs of the
//! form `maximize x[obj]` subject to norm and squared-norm cone constraints.

use nalgebra::DMatrix;

use super::{ConicSolution, PrimalValues, SolveStatus, SolverTolerances};
use crate::linalg::{RMat, RVec};
use crate::{Error, Result};

/// Cone flavour.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConeKind {
    /// `||A x + b|| <= c^T x + d`, barrier slack `s^2 - ||u||^2` with `s > 0`.
    Norm,
    /// `||A x + b||^2 <= c^T x + d`, barrier slack `s - ||u||^2`.
    SquaredNorm,
}

/// One affine cone constraint.
#[derive(Debug, Clone)]
pub struct Cone {
    /// Cone flavour.
    pub kind: ConeKind,
    /// Row map of the vector part `u = A x + b`.
    pub a: RMat,
    /// Offset of the vector part.
    pub b: RVec,
    /// Row map of the scalar part `s = c^T x + d`.
    pub c: RVec,
    /// Offset of the scalar part.
    pub d: f64,
}

impl Cone {
    fn u(&self, x: &RVec) -> RVec {
        &self.a * x + &self.b
    }

    fn s(&self, x: &RVec) -> f64 {
        self.c.dot(x) + self.d
    }

    /// Barrier slack; positive inside the cone interior.
    pub fn slack(&self, x: &RVec) -> f64 {
        let u2 = self.u(x).norm_squared();
        match self.kind {
            ConeKind::Norm => {
                let s = self.s(x);
                if s <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                s * s - u2
            }
            ConeKind::SquaredNorm => self.s(x) - u2,
        }
    }

    /// Constraint violation in natural units (zero when satisfied).
    pub fn violation(&self, x: &RVec) -> f64 {
        let u = self.u(x).norm();
        let s = self.s(x);
        match self.kind {
            ConeKind::Norm => (u - s).max(0.0),
            ConeKind::SquaredNorm => (u * u - s).max(0.0),
        }
    }

    /// Barrier degree used in the duality-gap estimate.
    fn degree(&self) -> f64 {
        match self.kind {
            ConeKind::Norm => 2.0,
            ConeKind::SquaredNorm => 1.0,
        }
    }
}

/// A second-order-cone program: maximize one designated variable subject to
/// cone constraints over the real variable vector.
#[derive(Debug, Clone)]
pub struct SocpProblem {
    /// Dimension of the variable vector.
    pub num_vars: usize,
    /// Index of the maximized variable.
    pub objective_index: usize,
    /// Cone constraints.
    pub cones: Vec<Cone>,
}

impl SocpProblem {
    /// Checks affine-map dimensions.
    pub fn validate(&self) -> Result<()> {
        if self.objective_index >= self.num_vars {
            return Err(Error::Conic("objective index out of range".into()));
        }
        if self.cones.is_empty() {
            return Err(Error::Conic("problem needs at least one cone".into()));
        }
        for (i, cone) in self.cones.iter().enumerate() {
            if cone.a.ncols() != self.num_vars
                || cone.c.len() != self.num_vars
                || cone.a.nrows() != cone.b.len()
            {
                return Err(Error::Conic(format!("cone {i} has inconsistent dimensions")));
            }
        }
        Ok(())
    }

    /// Worst violation over all cones.
    pub fn max_violation(&self, x: &RVec) -> f64 {
        self.cones.iter().map(|c| c.violation(x)).fold(0.0, f64::max)
    }

    fn strictly_feasible(&self, x: &RVec) -> bool {
        self.cones.iter().all(|c| c.slack(x) > 0.0)
    }
}

struct BarrierEval {
    value: f64,
    gradient: RVec,
    hessian: RMat,
}

/// Per-solve cache of the constant pieces of every cone Hessian.
struct Workspace {
    ata: Vec<RMat>,
}

impl Workspace {
    fn new(p: &SocpProblem) -> Self {
        Self { ata: p.cones.iter().map(|c| c.a.transpose() * &c.a).collect() }
    }
}

/// Barrier value only; cheap enough for line searches.
fn barrier_value(p: &SocpProblem, x: &RVec, mu: f64) -> Option<f64> {
    let mut value = -x[p.objective_index];
    for cone in &p.cones {
        let g = cone.slack(x);
        if !(g > 0.0) || !g.is_finite() {
            return None;
        }
        value -= mu * g.ln();
    }
    Some(value)
}

fn barrier_full(p: &SocpProblem, ws: &Workspace, x: &RVec, mu: f64) -> Option<BarrierEval> {
    let n = p.num_vars;
    let mut value = -x[p.objective_index];
    let mut gradient = RVec::zeros(n);
    gradient[p.objective_index] = -1.0;
    let mut hessian = RMat::zeros(n, n);
    for (cone, ata) in p.cones.iter().zip(&ws.ata) {
        let g = cone.slack(x);
        if !(g > 0.0) || !g.is_finite() {
            return None;
        }
        value -= mu * g.ln();
        let u = cone.u(x);
        let at_u = cone.a.transpose() * &u;
        let grad_g: RVec = match cone.kind {
            ConeKind::Norm => &cone.c * (2.0 * cone.s(x)) - &at_u * 2.0,
            ConeKind::SquaredNorm => &cone.c - &at_u * 2.0,
        };
        gradient -= &grad_g * (mu / g);
        // hess(-mu ln g) = mu [ grad_g grad_g^T / g^2 - hess_g / g ]
        hessian += (&grad_g * grad_g.transpose()) * (mu / (g * g));
        hessian += ata * (2.0 * mu / g);
        if cone.kind == ConeKind::Norm {
            hessian -= (&cone.c * cone.c.transpose()) * (2.0 * mu / g);
        }
    }
    Some(BarrierEval { value, gradient, hessian })
}

/// Solves the program from a strictly feasible start.
///
/// The path-following loop minimizes `-x[obj] - mu sum(log slack)` by damped
/// Newton steps, shrinking `mu` until the barrier gap estimate meets the
/// tolerance. Per-stage Newton convergence is declared on the gradient norm.
pub fn solve_socp(
    p: &SocpProblem,
    start: &RVec,
    tol: &SolverTolerances,
) -> Result<ConicSolution> {
    p.validate()?;
    if start.len() != p.num_vars {
        return Err(Error::Conic("start vector has wrong dimension".into()));
    }
    if !p.strictly_feasible(start) {
        return Ok(ConicSolution {
            status: SolveStatus::Infeasible,
            objective: f64::NAN,
            primal_residual: p.max_violation(start),
            gap_estimate: f64::INFINITY,
            dual_objective: None,
            primal: PrimalValues::Socp { x: start.clone() },
        });
    }

    let degree_total: f64 = p.cones.iter().map(|c| c.degree()).sum();
    let ws = Workspace::new(p);
    let mut x = start.clone();
    let mut mu = tol.mu_init;
    let mut newton_ok = true;

    for _stage in 0..tol.max_stages {
        // Newton loop at fixed mu.
        newton_ok = false;
        for _ in 0..tol.max_newton {
            let eval = barrier_full(p, &ws, &x, mu)
                .ok_or_else(|| Error::Conic("iterate left the cone interior".into()))?;
            if eval.gradient.norm() <= tol.newton {
                newton_ok = true;
                break;
            }
            // Newton direction with a jitter fallback for rank-deficient
            // Hessians.
            let mut h = eval.hessian.clone();
            let dir = loop {
                match h.clone().cholesky() {
                    Some(chol) => break chol.solve(&(-&eval.gradient)),
                    None => {
                        let bump = 1e-12 * (1.0 + h.diagonal().amax());
                        h += DMatrix::identity(p.num_vars, p.num_vars) * bump.max(1e-300);
                    }
                }
            };
            let slope = eval.gradient.dot(&dir);
            if slope > 0.0 {
                // Not a descent direction; stop this stage.
                break;
            }
            // Newton decrement certifies per-stage convergence where the
            // absolute gradient floor is unreachable near the boundary.
            if -slope * 0.5 <= tol.newton {
                newton_ok = true;
                break;
            }
            let mut step = 1.0;
            let mut accepted = false;
            for _ in 0..70 {
                let candidate = &x + &dir * step;
                if let Some(value) = barrier_value(p, &candidate, mu) {
                    if value <= eval.value + tol.backtrack_alpha * step * slope {
                        x = candidate;
                        accepted = true;
                        break;
                    }
                }
                step *= tol.backtrack_beta;
            }
            if !accepted {
                break;
            }
        }

        let objective = x[p.objective_index];
        let gap = mu * degree_total;
        if gap <= tol.gap * (1.0 + objective.abs()) {
            break;
        }
        mu *= tol.mu_shrink;
    }

    let objective = x[p.objective_index];
    let gap_estimate = mu * degree_total;
    let primal_residual = p.max_violation(&x);
    let converged =
        newton_ok && gap_estimate <= tol.gap * (1.0 + objective.abs()) * 10.0 + 1e-300;
    Ok(ConicSolution {
        status: if converged && primal_residual <= tol.feasibility {
            SolveStatus::Optimal
        } else {
            SolveStatus::MaxIterations
        },
        objective,
        primal_residual,
        gap_estimate,
        dual_objective: None,
        primal: PrimalValues::Socp { x },
    })
}
