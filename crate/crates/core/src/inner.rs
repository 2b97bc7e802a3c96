//! BFGS on the restricted problem `g(α) = f(x + Pα)`.

use thiserror::Error;

use crate::linalg::{axpy, dot, norm2, norm_inf, Matrix, Vector};
use crate::oracle::{Objective, Oracle, OracleError};
use crate::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InnerError {
    #[error("restricted problem needs at least one basis vector")]
    EmptyBasis,
    #[error("basis vector {index} has length {got}, expected {expected}")]
    DimensionMismatch { index: usize, expected: usize, got: usize },
    #[error("basis vector {0} has zero norm")]
    ZeroColumn(usize),
    #[error("invalid BFGS configuration: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct BfgsConfig<S> {
    /// Stop when `‖∇g‖∞` falls to this level.
    pub grad_tol: S,
    pub max_iters: usize,
    /// Sufficient-decrease constant.
    pub c1: S,
    /// Curvature constant; steps meeting it are counted as Wolfe steps.
    pub c2: S,
    pub max_backtracks: usize,
}

impl<S: Scalar> Default for BfgsConfig<S> {
    fn default() -> Self {
        Self { grad_tol: S::lit(1e-5), max_iters: 50, c1: S::lit(1e-4), c2: S::lit(0.9), max_backtracks: 25 }
    }
}

impl<S: Scalar> BfgsConfig<S> {
    pub fn validate(&self) -> Result<(), InnerError> {
        if !(S::zero() < self.c1 && self.c1 < self.c2 && self.c2 < S::one()) {
            return Err(InnerError::InvalidConfig("need 0 < c1 < c2 < 1"));
        }
        if !(self.grad_tol >= S::zero()) {
            return Err(InnerError::InvalidConfig("grad_tol must be non-negative"));
        }
        Ok(())
    }
}

/// `f` restricted to the affine subspace `x + span(basis)`.
pub struct RestrictedProblem<'a, S, O> {
    oracle: &'a Oracle<S, O>,
    base_point: &'a Vector<S>,
    basis: Vec<Vector<S>>,
    base: Option<(S, Vector<S>)>,
}

/// Builds the restricted problem. No oracle calls are made here.
pub fn restrict<'a, S: Scalar, O: Objective<S>>(
    oracle: &'a Oracle<S, O>,
    x: &'a Vector<S>,
    basis: Vec<Vector<S>>,
) -> Result<RestrictedProblem<'a, S, O>, InnerError> {
    if basis.is_empty() {
        return Err(InnerError::EmptyBasis);
    }
    let n = oracle.dim();
    if x.len() != n {
        return Err(OracleError::DimensionMismatch { expected: n, got: x.len() }.into());
    }
    for (index, v) in basis.iter().enumerate() {
        if v.len() != n {
            return Err(InnerError::DimensionMismatch { index, expected: n, got: v.len() });
        }
        if v.norm2() == S::zero() {
            return Err(InnerError::ZeroColumn(index));
        }
    }
    Ok(RestrictedProblem { oracle, base_point: x, basis, base: None })
}

impl<'a, S: Scalar, O: Objective<S>> RestrictedProblem<'a, S, O> {
    /// Supplies the already known `f(x)` and `∇f(x)` so that `g(0)` and
    /// `∇g(0)` cost nothing.
    pub fn with_base(mut self, value: S, gradient: Vector<S>) -> Self {
        self.base = Some((value, gradient));
        self
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn basis(&self) -> &[Vector<S>] {
        &self.basis
    }

    pub fn base_point(&self) -> &Vector<S> {
        self.base_point
    }

    /// `x + Σ α_i v_i`.
    pub fn point(&self, alpha: &[S]) -> Vector<S> {
        let mut p = self.base_point.clone();
        for (a, v) in alpha.iter().zip(&self.basis) {
            if *a != S::zero() {
                axpy(*a, v.as_slice(), p.as_mut_slice());
            }
        }
        p
    }

    /// `Σ α_i v_i`.
    pub fn step(&self, alpha: &[S]) -> Vector<S> {
        let mut p = Vector::zeros(self.base_point.len());
        for (a, v) in alpha.iter().zip(&self.basis) {
            axpy(*a, v.as_slice(), p.as_mut_slice());
        }
        p
    }

    fn project(&self, full: &Vector<S>) -> Vec<S> {
        self.basis.iter().map(|v| v.dot(full)).collect()
    }

    pub fn value(&self, alpha: &[S]) -> Result<S, InnerError> {
        Ok(self.oracle.eval_value(&self.point(alpha))?)
    }

    pub fn gradient(&self, alpha: &[S]) -> Result<Vec<S>, InnerError> {
        Ok(self.gradient_full(alpha)?.0)
    }

    /// `∇g(α)` together with the full-space gradient it was projected from.
    pub fn gradient_full(&self, alpha: &[S]) -> Result<(Vec<S>, Vector<S>), InnerError> {
        let full = self.oracle.eval_grad(&self.point(alpha))?;
        Ok((self.project(&full), full))
    }

    fn origin(&self) -> Result<(S, Vec<S>, Vector<S>), InnerError> {
        match &self.base {
            Some((f, g)) => Ok((*f, self.project(g), g.clone())),
            None => {
                let zero = vec![S::zero(); self.dim()];
                let f = self.value(&zero)?;
                let (g, full) = self.gradient_full(&zero)?;
                Ok((f, g, full))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BfgsStatus {
    Converged,
    MaxIters,
    /// The first line search found no decrease; `α = 0` is returned.
    NoDecrease,
    /// A later line search failed; best iterate so far is returned.
    LineSearchFailed,
    /// A non-finite evaluation stopped the run; best iterate so far is returned.
    Diverged,
}

#[derive(Clone, Debug)]
pub struct BfgsResult<S> {
    pub alpha: Vec<S>,
    pub value: S,
    /// `∇g(α)`.
    pub gradient: Vec<S>,
    /// `∇f(x + Pα)`.
    pub full_gradient: Vector<S>,
    pub iterations: usize,
    pub status: BfgsStatus,
    /// Accepted steps that also met the curvature condition.
    pub wolfe_steps: usize,
    /// BFGS updates skipped by the curvature guard.
    pub skipped_updates: usize,
}

/// Minimises `g` from `α = 0`. The initial inverse Hessian is the identity
/// in coordinates where every basis column has unit length, so the result
/// does not depend on how the columns are scaled.
///
/// Each iteration runs an Armijo backtracking search (value calls only,
/// safeguarded quadratic interpolation) and evaluates one gradient at the
/// accepted point. Once the trial value no longer rises but the Armijo
/// decrease is below what values can resolve, the gradient at that trial
/// settles it through the approximate Wolfe test. So a call issues at most `max_iters·(1 + max_backtracks)`
/// value calls and `max_iters + 1` gradient calls. Curvature pairs with
/// `sᵀy ≤ 1e-12‖s‖‖y‖` skip the update.
pub fn bfgs_minimize<S: Scalar, O: Objective<S>>(
    problem: &RestrictedProblem<'_, S, O>,
    cfg: &BfgsConfig<S>,
) -> Result<BfgsResult<S>, InnerError> {
    cfg.validate()?;
    let m = problem.dim();
    let (f0, g0, full0) = problem.origin()?;
    let mut res = BfgsResult {
        alpha: vec![S::zero(); m],
        value: f0,
        gradient: g0,
        full_gradient: full0,
        iterations: 0,
        status: BfgsStatus::MaxIters,
        wolfe_steps: 0,
        skipped_updates: 0,
    };
    if norm_inf(&res.gradient) <= cfg.grad_tol {
        res.status = BfgsStatus::Converged;
        return Ok(res);
    }

    let origin = res.clone();
    // H lives in column-normalised coordinates β_i = ‖v_i‖ α_i.
    let col_scale: Vec<S> = problem.basis().iter().map(|v| S::one() / v.norm2()).collect();
    let to_beta = |v: &[S]| -> Vec<S> { v.iter().zip(&col_scale).map(|(&a, &c)| a * c).collect() };
    let mut h = Matrix::identity(m);
    let mut scaled = false;
    let guard = S::lit(1e-12);
    let noise = S::lit(100.0) * S::epsilon();
    let half = S::lit(0.5);
    let tenth = S::lit(0.1);

    for it in 0..cfg.max_iters {
        let g_beta = to_beta(&res.gradient);
        let mut dir: Vec<S> = to_beta(&h.mul_vec(&g_beta)).into_iter().map(|v| -v).collect();
        let mut slope = dot(&res.gradient, &dir);
        if !(slope < S::zero()) {
            // lost descent through round-off: restart from steepest descent
            h = Matrix::identity(m);
            dir = to_beta(&g_beta).into_iter().map(|v| -v).collect();
            slope = dot(&res.gradient, &dir);
        }

        let mut t = S::one();
        let mut accepted = None;
        let mut evaluated = None;
        for _ in 0..=cfg.max_backtracks {
            let trial: Vec<S> = res.alpha.iter().zip(&dir).map(|(&a, &d)| a + t * d).collect();
            if trial == res.alpha {
                // the step no longer changes α in working precision
                break;
            }
            let ft = match problem.value(&trial) {
                Ok(v) => v,
                Err(InnerError::Oracle(_)) => {
                    res.status = BfgsStatus::Diverged;
                    return Ok(keep_decrease(res, origin));
                }
                Err(e) => return Err(e),
            };
            if ft <= res.value + cfg.c1 * t * slope {
                accepted = Some((trial, ft));
                break;
            }
            if ft - res.value <= noise * res.value.abs() {
                // Change within evaluation noise: decide on the approximate
                // Wolfe conditions instead. Either way the search ends here,
                // so the iteration still costs one gradient.
                let (g_t, full_t) = match problem.gradient_full(&trial) {
                    Ok(v) => v,
                    Err(InnerError::Oracle(_)) => {
                        res.status = BfgsStatus::Diverged;
                        return Ok(keep_decrease(res, origin));
                    }
                    Err(e) => return Err(e),
                };
                let dslope = dot(&g_t, &dir);
                let upper = (S::lit(2.0) * cfg.c1 - S::one()) * slope;
                if dslope >= cfg.c2 * slope && dslope <= upper {
                    evaluated = Some((g_t, full_t));
                    accepted = Some((trial, ft));
                }
                break;
            }
            // minimiser of the quadratic through f(0), f'(0), f(t)
            let denom = S::lit(2.0) * (ft - res.value - slope * t);
            let t_q = if denom > S::zero() { -slope * t * t / denom } else { half * t };
            t = t_q.max(tenth * t).min(half * t);
        }
        let Some((trial, ft)) = accepted else {
            res.status = if it == 0 { BfgsStatus::NoDecrease } else { BfgsStatus::LineSearchFailed };
            return Ok(keep_decrease(res, origin));
        };

        let gradient = match evaluated {
            Some(v) => Ok(v),
            None => problem.gradient_full(&trial),
        };
        let (g_new, full_new) = match gradient {
            Ok(v) => v,
            Err(InnerError::Oracle(_)) => {
                // the value decreased, keep the point but report divergence
                res.status = BfgsStatus::Diverged;
                return Ok(keep_decrease(res, origin));
            }
            Err(e) => return Err(e),
        };

        let s: Vec<S> = trial.iter().zip(&res.alpha).zip(&col_scale).map(|((&a, &b), &c)| (a - b) / c).collect();
        let y: Vec<S> = to_beta(&g_new.iter().zip(&res.gradient).map(|(&a, &b)| a - b).collect::<Vec<_>>());
        if dot(&g_new, &dir) >= cfg.c2 * slope {
            res.wolfe_steps += 1;
        }
        let sy = dot(&s, &y);
        if sy > guard * norm2(&s) * norm2(&y) {
            if !scaled {
                // initial inverse-Hessian scaling sᵀy / yᵀy
                h = Matrix::identity(m);
                h.scale(sy / dot(&y, &y));
                scaled = true;
            }
            bfgs_update(&mut h, &s, &y, sy);
        } else {
            res.skipped_updates += 1;
        }

        res.alpha = trial;
        res.value = ft;
        res.gradient = g_new;
        res.full_gradient = full_new;
        res.iterations = it + 1;
        if norm_inf(&res.gradient) <= cfg.grad_tol {
            res.status = BfgsStatus::Converged;
            return Ok(keep_decrease(res, origin));
        }
    }
    res.status = BfgsStatus::MaxIters;
    Ok(keep_decrease(res, origin))
}

/// Noise-level acceptances may leave `g(α)` a hair above `g(0)`; fall back
/// to the origin then so the decrease guarantee holds exactly.
fn keep_decrease<S: Scalar>(res: BfgsResult<S>, origin: BfgsResult<S>) -> BfgsResult<S> {
    if res.value > origin.value {
        BfgsResult { status: BfgsStatus::NoDecrease, ..origin }
    } else {
        res
    }
}

/// `H ← (I − ρsyᵀ) H (I − ρysᵀ) + ρssᵀ`, kept exactly symmetric.
fn bfgs_update<S: Scalar>(h: &mut Matrix<S>, s: &[S], y: &[S], sy: S) {
    let m = s.len();
    let rho = S::one() / sy;
    let hy = h.mul_vec(y);
    let yhy = dot(y, &hy);
    let coef = (S::one() + rho * yhy) * rho;
    for i in 0..m {
        for j in 0..=i {
            let v = h[(i, j)] - rho * (hy[i] * s[j] + s[i] * hy[j]) + coef * s[i] * s[j];
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
}
