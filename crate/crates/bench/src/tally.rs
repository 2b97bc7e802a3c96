//! Call counting that sits beneath the oracle, used to cross-check the
//! counts the optimizers report.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use mso_core::oracle::{CallCounts, Objective};
use mso_core::Scalar;

#[derive(Clone, Debug, Default)]
pub struct TallyHandle {
    value: Arc<AtomicU64>,
    grad: Arc<AtomicU64>,
}

impl TallyHandle {
    pub fn counts(&self) -> CallCounts {
        CallCounts { value_calls: self.value.load(Ordering::Relaxed), grad_calls: self.grad.load(Ordering::Relaxed) }
    }
}

/// Wraps an objective and counts raw evaluations.
pub struct CallTally<O> {
    inner: O,
    handle: TallyHandle,
}

impl<O> CallTally<O> {
    pub fn new(inner: O) -> (Self, TallyHandle) {
        let handle = TallyHandle::default();
        (Self { inner, handle: handle.clone() }, handle)
    }
}

impl<S: Scalar, O: Objective<S>> Objective<S> for CallTally<O> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn value(&self, x: &[S]) -> S {
        self.handle.value.fetch_add(1, Ordering::Relaxed);
        self.inner.value(x)
    }
    fn gradient(&self, x: &[S], grad: &mut [S]) {
        self.handle.grad.fetch_add(1, Ordering::Relaxed);
        self.inner.gradient(x, grad)
    }
    fn is_stochastic(&self) -> bool {
        self.inner.is_stochastic()
    }
    fn resample(&mut self) {
        self.inner.resample()
    }
    fn full_value(&self, x: &[S]) -> S {
        self.handle.value.fetch_add(1, Ordering::Relaxed);
        self.inner.full_value(x)
    }
}
