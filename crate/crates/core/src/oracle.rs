//! Counted first-order oracle.
//!
//! Objectives implement [`Objective`] with raw, uncounted evaluations. Every
//! consumer in this crate goes through [`Oracle`], which validates inputs,
//! rejects non-finite outputs and counts value and gradient calls. The
//! counters are the cost metric reported by the benchmarks.

use std::cell::Cell;
use std::marker::PhantomData;

use thiserror::Error;

use crate::linalg::Vector;
use crate::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("dimension mismatch: objective has dim {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite input point")]
    NonFiniteInput,
    #[error("objective returned a non-finite value (divergence)")]
    NonFiniteOutput,
    #[error("finite-difference step must be positive")]
    InvalidStep,
}

/// A differentiable function R^n -> R.
pub trait Objective<S: Scalar> {
    fn dim(&self) -> usize;

    fn value(&self, x: &[S]) -> S;

    /// Writes the gradient at `x` into `grad` (length `dim`).
    fn gradient(&self, x: &[S], grad: &mut [S]);

    /// Minibatch objectives return true; their value depends on the batch
    /// selected by the last [`Objective::resample`].
    fn is_stochastic(&self) -> bool {
        false
    }

    /// Draws a new minibatch. No-op for deterministic objectives.
    fn resample(&mut self) {}

    /// Full-dataset value for reporting. Equals `value` when deterministic.
    fn full_value(&self, x: &[S]) -> S {
        self.value(x)
    }
}

impl<S: Scalar, O: Objective<S> + ?Sized> Objective<S> for Box<O> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn value(&self, x: &[S]) -> S {
        (**self).value(x)
    }
    fn gradient(&self, x: &[S], grad: &mut [S]) {
        (**self).gradient(x, grad)
    }
    fn is_stochastic(&self) -> bool {
        (**self).is_stochastic()
    }
    fn resample(&mut self) {
        (**self).resample()
    }
    fn full_value(&self, x: &[S]) -> S {
        (**self).full_value(x)
    }
}

/// Value and gradient call counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CallCounts {
    pub value_calls: u64,
    pub grad_calls: u64,
}

/// Counting, validating wrapper around an [`Objective`].
///
/// Counters use interior mutability so evaluations take `&self`; an oracle
/// is therefore `!Sync` and belongs to a single run.
pub struct Oracle<S, O> {
    objective: O,
    value_calls: Cell<u64>,
    grad_calls: Cell<u64>,
    _scalar: PhantomData<S>,
}

impl<S: Scalar, O: Objective<S>> Oracle<S, O> {
    pub fn new(objective: O) -> Self {
        Self { objective, value_calls: Cell::new(0), grad_calls: Cell::new(0), _scalar: PhantomData }
    }

    pub fn dim(&self) -> usize {
        self.objective.dim()
    }

    pub fn is_stochastic(&self) -> bool {
        self.objective.is_stochastic()
    }

    pub fn objective(&self) -> &O {
        &self.objective
    }

    pub fn objective_mut(&mut self) -> &mut O {
        &mut self.objective
    }

    pub fn into_inner(self) -> O {
        self.objective
    }

    fn check_input(&self, x: &[S]) -> Result<(), OracleError> {
        let dim = self.objective.dim();
        if x.len() != dim {
            return Err(OracleError::DimensionMismatch { expected: dim, got: x.len() });
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(OracleError::NonFiniteInput);
        }
        Ok(())
    }

    pub fn eval_value(&self, x: &Vector<S>) -> Result<S, OracleError> {
        self.value_slice(x.as_slice())
    }

    pub fn value_slice(&self, x: &[S]) -> Result<S, OracleError> {
        self.check_input(x)?;
        self.value_calls.set(self.value_calls.get() + 1);
        let v = self.objective.value(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(OracleError::NonFiniteOutput)
        }
    }

    pub fn eval_grad(&self, x: &Vector<S>) -> Result<Vector<S>, OracleError> {
        let mut g = Vector::zeros(self.dim());
        self.grad_into(x.as_slice(), g.as_mut_slice())?;
        Ok(g)
    }

    pub fn grad_into(&self, x: &[S], grad: &mut [S]) -> Result<(), OracleError> {
        self.check_input(x)?;
        if grad.len() != self.dim() {
            return Err(OracleError::DimensionMismatch { expected: self.dim(), got: grad.len() });
        }
        self.grad_calls.set(self.grad_calls.get() + 1);
        self.objective.gradient(x, grad);
        if grad.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(OracleError::NonFiniteOutput)
        }
    }

    /// Central-difference gradient. Costs `2n` value calls and no gradient
    /// calls. With `eps = None` the step is `1e-6 * (1 + |x_i|)` per
    /// coordinate.
    pub fn finite_diff_grad(&self, x: &Vector<S>, eps: Option<S>) -> Result<Vector<S>, OracleError> {
        if let Some(e) = eps {
            if !(e > S::zero()) {
                return Err(OracleError::InvalidStep);
            }
        }
        self.check_input(x.as_slice())?;
        let mut probe = x.clone();
        let mut out = Vector::zeros(x.len());
        for i in 0..x.len() {
            let xi = x[i];
            let h = eps.unwrap_or_else(|| S::lit(1e-6) * (S::one() + xi.abs()));
            probe[i] = xi + h;
            let fp = self.eval_value(&probe)?;
            probe[i] = xi - h;
            let fm = self.eval_value(&probe)?;
            probe[i] = xi;
            // Divide by the realised step to cancel representation error in xi ± h.
            out[i] = (fp - fm) / ((xi + h) - (xi - h));
        }
        Ok(out)
    }

    /// Draws a new minibatch on stochastic objectives. Not counted.
    pub fn resample_batch(&mut self) {
        self.objective.resample();
    }

    /// Full-dataset value; counts as one value call and leaves the current
    /// minibatch untouched.
    pub fn full_batch_value(&self, x: &Vector<S>) -> Result<S, OracleError> {
        self.check_input(x.as_slice())?;
        self.value_calls.set(self.value_calls.get() + 1);
        let v = self.objective.full_value(x.as_slice());
        if v.is_finite() {
            Ok(v)
        } else {
            Err(OracleError::NonFiniteOutput)
        }
    }

    pub fn read_counters(&self) -> CallCounts {
        CallCounts { value_calls: self.value_calls.get(), grad_calls: self.grad_calls.get() }
    }

    pub fn reset_counters(&self) {
        self.value_calls.set(0);
        self.grad_calls.set(0);
    }
}

/// `f(x) = ½‖x‖²`, handy for tests and examples.
#[derive(Clone, Copy, Debug)]
pub struct HalfSquaredNorm {
    pub dim: usize,
}

impl<S: Scalar> Objective<S> for HalfSquaredNorm {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &[S]) -> S {
        S::lit(0.5) * crate::linalg::dot(x, x)
    }
    fn gradient(&self, x: &[S], grad: &mut [S]) {
        grad.copy_from_slice(x);
    }
}

/// Objective from a pair of closures.
pub struct FnObjective<V, G> {
    dim: usize,
    value: V,
    grad: G,
}

impl<V, G> FnObjective<V, G> {
    pub fn new(dim: usize, value: V, grad: G) -> Self {
        Self { dim, value, grad }
    }
}

impl<S, V, G> Objective<S> for FnObjective<V, G>
where
    S: Scalar,
    V: Fn(&[S]) -> S,
    G: Fn(&[S], &mut [S]),
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &[S]) -> S {
        (self.value)(x)
    }
    fn gradient(&self, x: &[S], grad: &mut [S]) {
        (self.grad)(x, grad)
    }
}
