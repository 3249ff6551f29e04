//! Damped Newton minimization for the smooth strongly convex subproblems.

use nalgebra::DMatrix;

use crate::data::NodeDataset;
use crate::error::{Error, Result};
use crate::model::{empirical_gradient, empirical_hessian, empirical_term, ErmParams, Loss, Regularizer};
use crate::Vector;

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITERS: usize = 500;

const ARMIJO_C: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;
const FLAT_RTOL: f64 = 1e-12;

/// Twice differentiable objective.
pub trait Objective {
    fn value(&self, x: &Vector) -> f64;
    fn gradient(&self, x: &Vector) -> Vector;
    fn hessian(&self, x: &Vector) -> DMatrix<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Stop once `‖∇F(x)‖ ≤ tol`.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: DEFAULT_TOL, max_iters: DEFAULT_MAX_ITERS }
    }
}

impl SolverOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub x: Vector,
    pub iterations: usize,
    pub grad_norm: f64,
}

/// Newton's method with Armijo backtracking. Falls back to steepest descent
/// whenever the Hessian is not positive definite. Also stops, without error,
/// when `F` is flat to rounding and the full Newton step no longer reduces
/// the gradient.
pub fn minimize(obj: &impl Objective, x0: Vector, opts: &SolverOptions) -> Result<Solution> {
    let mut x = x0;
    let mut fx = obj.value(&x);
    let mut g = obj.gradient(&x);
    for it in 0..opts.max_iters {
        let gn = g.norm();
        if gn <= opts.tol {
            return Ok(Solution { x, iterations: it, grad_norm: gn });
        }
        let dir = match obj.hessian(&x).cholesky() {
            Some(ch) => {
                let d = -ch.solve(&g);
                if g.dot(&d) < 0.0 {
                    d
                } else {
                    -g.clone()
                }
            }
            None => -g.clone(),
        };
        let slope = g.dot(&dir);
        let full = &x + &dir;
        let f_full = obj.value(&full);
        let flat = |f: f64| (f - fx).abs() <= FLAT_RTOL * fx.abs().max(1.0);
        let (cand, fc) = if -slope <= FLAT_RTOL * fx.abs().max(1.0) || flat(f_full) {
            // F is flat to rounding here; judge the step by its gradient
            if obj.gradient(&full).norm() < gn {
                (full, f_full)
            } else if f_full <= fx {
                log::debug!("stopping at rounding level with gradient norm {gn:e}");
                return Ok(Solution { x, iterations: it, grad_norm: gn });
            } else {
                backtrack(obj, &x, &dir, fx, slope).ok_or(Error::SolverNonConvergence { iterations: it, grad_norm: gn })?
            }
        } else if f_full <= fx + ARMIJO_C * slope {
            (full, f_full)
        } else {
            backtrack(obj, &x, &dir, fx, slope).ok_or(Error::SolverNonConvergence { iterations: it, grad_norm: gn })?
        };
        x = cand;
        fx = fc;
        g = obj.gradient(&x);
    }
    let gn = g.norm();
    if gn <= opts.tol {
        Ok(Solution { x, iterations: opts.max_iters, grad_norm: gn })
    } else {
        Err(Error::SolverNonConvergence { iterations: opts.max_iters, grad_norm: gn })
    }
}

fn backtrack(obj: &impl Objective, x: &Vector, dir: &Vector, fx: f64, slope: f64) -> Option<(Vector, f64)> {
    let mut t = 0.5;
    for _ in 0..MAX_HALVINGS {
        let cand = x + dir * t;
        let fc = obj.value(&cand);
        if fc <= fx + ARMIJO_C * t * slope {
            return Some((cand, fc));
        }
        t *= 0.5;
    }
    None
}

/// Node subproblem
/// `F(f) = (C^R/B_p)·Σ L(y f·x) + ρR(f) + (κ/2)‖f‖² + c·f + const`.
///
/// Every primal update of the three algorithms has this shape once the
/// consensus penalty is expanded.
#[derive(Debug)]
pub struct LocalProblem<'a> {
    pub dataset: &'a NodeDataset,
    pub loss: &'a dyn Loss,
    pub reg: &'a dyn Regularizer,
    pub params: ErmParams,
    pub kappa: f64,
    pub linear: Vector,
    pub constant: f64,
}

impl<'a> LocalProblem<'a> {
    /// Bare `Z_p`.
    pub fn erm(dataset: &'a NodeDataset, loss: &'a dyn Loss, reg: &'a dyn Regularizer, params: ErmParams) -> Self {
        Self { dataset, loss, reg, params, kappa: 0.0, linear: Vector::zeros(dataset.dim()), constant: 0.0 }
    }

    pub fn solve(&self, x0: Vector, opts: &SolverOptions) -> Result<Solution> {
        minimize(self, x0, opts)
    }
}

impl Objective for LocalProblem<'_> {
    fn value(&self, f: &Vector) -> f64 {
        empirical_term(f, self.dataset, self.loss, self.params.c_r).expect("dimension checked by caller")
            + self.params.rho * self.reg.value(f)
            + 0.5 * self.kappa * f.norm_squared()
            + self.linear.dot(f)
            + self.constant
    }

    fn gradient(&self, f: &Vector) -> Vector {
        empirical_gradient(f, self.dataset, self.loss, self.params.c_r).expect("dimension checked by caller")
            + self.reg.gradient(f) * self.params.rho
            + f * self.kappa
            + &self.linear
    }

    fn hessian(&self, f: &Vector) -> DMatrix<f64> {
        let mut h = empirical_hessian(f, self.dataset, self.loss, self.params.c_r).expect("dimension checked by caller")
            + self.reg.hessian(f) * self.params.rho;
        for i in 0..f.len() {
            h[(i, i)] += self.kappa;
        }
        h
    }
}

/// Plain gradient descent with a fixed step; only used as an independent
/// oracle in tests.
pub fn gradient_descent(obj: &impl Objective, x0: Vector, step: f64, iters: usize) -> Vector {
    let mut x = x0;
    for _ in 0..iters {
        let g = obj.gradient(&x);
        x -= g * step;
    }
    x
}
