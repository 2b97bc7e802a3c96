//! The outer subspace-optimisation loop.
//!
//! Each outer iteration builds the subspace `[stored steps…, ∇f(x_k),
//! x_k − x_0, Σ w_j ∇f(x_j)]` (the last two only with ORTH enabled), solves
//! the restricted problem with BFGS from `α = 0`, moves to
//! `x_{k+1} = x_k + Pα`, and then lets the eviction policy drop one stored
//! step once the memory of `d − 1` steps is full before appending the new
//! step `p_{k+1} = x_{k+1} − x_k`.

use std::io::Write;
use std::time::Instant;

use thiserror::Error;

use crate::inner::{bfgs_minimize, restrict, BfgsConfig, BfgsStatus, InnerError};
use crate::linalg::Vector;
use crate::oracle::{CallCounts, Objective, Oracle, OracleError};
use crate::policy::{EvictionPolicy, PolicyError, PolicyInput};
use crate::Scalar;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid engine configuration: {0}")]
    InvalidConfig(String),
    #[error("every subspace column is zero")]
    DegenerateSubspace,
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Inner(#[from] InnerError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct EngineConfig<S> {
    /// Subspace dimension; the step memory holds `d − 1` steps (none for
    /// `d = 1`, which leaves only the gradient and ORTH directions).
    pub d: usize,
    /// Depth of the step-size history seen by the policy.
    pub h: usize,
    pub use_orth: bool,
    pub max_outer_iters: usize,
    /// Outer stopping rule on `‖∇f‖∞`.
    pub outer_grad_tol: S,
    pub normalize_directions: bool,
    /// Adds the gradient column's coefficient to the policy state.
    pub include_gradient_alpha: bool,
    pub bfgs: BfgsConfig<S>,
}

impl<S: Scalar> Default for EngineConfig<S> {
    fn default() -> Self {
        Self {
            d: 10,
            h: 5,
            use_orth: true,
            max_outer_iters: 100,
            outer_grad_tol: S::lit(1e-8),
            normalize_directions: true,
            include_gradient_alpha: false,
            bfgs: BfgsConfig::default(),
        }
    }
}

impl<S: Scalar> EngineConfig<S> {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.d < 1 {
            return Err(EngineError::InvalidConfig("d must be >= 1".into()));
        }
        if self.h < 1 {
            return Err(EngineError::InvalidConfig("h must be >= 1".into()));
        }
        self.bfgs.validate()?;
        Ok(())
    }

    /// Number of stored-step slots, `d − 1`.
    pub fn slots(&self) -> usize {
        self.d - 1
    }

    /// Width of the canonical α layout: step slots, gradient, then the two
    /// ORTH columns when enabled.
    pub fn alpha_width(&self) -> usize {
        self.slots() + 1 + if self.use_orth { 2 } else { 0 }
    }
}

/// ORTH weights: `w_0 = 1`, `w_j = ½ + √(¼ + w_{j−1}²)`.
pub fn orth_weight<S: Scalar>(j: usize) -> S {
    let mut w = S::one();
    for _ in 0..j {
        w = next_orth_weight(w);
    }
    w
}

fn next_orth_weight<S: Scalar>(w: S) -> S {
    let q = S::lit(0.25);
    S::lit(0.5) + (q + w * w).sqrt()
}

/// Where a subspace column came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ColumnKind {
    Step(usize),
    Gradient,
    Anchor,
    WeightedGradient,
}

impl ColumnKind {
    /// Position in the canonical α layout for a memory of `slots` steps.
    pub fn canonical_index(self, slots: usize) -> usize {
        match self {
            ColumnKind::Step(j) => j,
            ColumnKind::Gradient => slots,
            ColumnKind::Anchor => slots + 1,
            ColumnKind::WeightedGradient => slots + 2,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Subspace<S> {
    pub columns: Vec<Vector<S>>,
    pub kinds: Vec<ColumnKind>,
    /// Euclidean norm each column had before normalisation (1 if off), so
    /// raw coefficients are `α_i / norms_i`.
    pub norms: Vec<S>,
}

impl<S> Subspace<S> {
    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct SubspaceState<S> {
    /// Stored steps, oldest first.
    pub steps: Vec<Vector<S>>,
    pub x0: Vector<S>,
    pub weighted_grad_sum: Vector<S>,
    pub next_orth_weight_index: usize,
    next_weight: S,
    pub alpha_history: PolicyInput<S>,
}

impl<S: Scalar> SubspaceState<S> {
    pub fn new(x0: Vector<S>, cfg: &EngineConfig<S>) -> Self {
        let n = x0.len();
        Self {
            steps: Vec::with_capacity(cfg.slots()),
            x0,
            weighted_grad_sum: Vector::zeros(n),
            next_orth_weight_index: 0,
            next_weight: S::one(),
            alpha_history: PolicyInput::zeros(cfg.h, cfg.slots(), cfg.include_gradient_alpha),
        }
    }

    /// `Σ w_j ∇f(x_j) += w_k ∇f(x_k)` for the next weight index.
    pub fn accumulate_gradient(&mut self, g: &Vector<S>) {
        self.weighted_grad_sum.axpy(self.next_weight, g);
        self.next_orth_weight_index += 1;
        self.next_weight = next_orth_weight(self.next_weight);
    }
}

/// Assembles the subspace columns in the fixed order steps (oldest first),
/// gradient, anchor difference, weighted gradient sum. Zero columns are
/// dropped; with normalisation the rest are scaled to unit length.
pub fn build_subspace<S: Scalar>(
    state: &SubspaceState<S>,
    x_k: &Vector<S>,
    g_k: &Vector<S>,
    cfg: &EngineConfig<S>,
) -> Result<Subspace<S>, EngineError> {
    let mut raw: Vec<(ColumnKind, Vector<S>)> = Vec::with_capacity(cfg.alpha_width());
    for (j, s) in state.steps.iter().enumerate() {
        raw.push((ColumnKind::Step(j), s.clone()));
    }
    raw.push((ColumnKind::Gradient, g_k.clone()));
    if cfg.use_orth {
        raw.push((ColumnKind::Anchor, x_k.sub(&state.x0)));
        raw.push((ColumnKind::WeightedGradient, state.weighted_grad_sum.clone()));
    }
    let mut sub = Subspace { columns: Vec::new(), kinds: Vec::new(), norms: Vec::new() };
    for (kind, mut v) in raw {
        let norm = v.norm2();
        if !(norm > S::zero()) || !norm.is_finite() {
            continue;
        }
        if cfg.normalize_directions {
            v.scale(S::one() / norm);
            sub.norms.push(norm);
        } else {
            sub.norms.push(S::one());
        }
        sub.columns.push(v);
        sub.kinds.push(kind);
    }
    if sub.is_empty() {
        return Err(EngineError::DegenerateSubspace);
    }
    Ok(sub)
}

/// Current outer iterate with its cached value and gradient.
#[derive(Clone, Debug)]
pub struct Iterate<S> {
    pub k: usize,
    pub x: Vector<S>,
    pub f: S,
    pub g: Vector<S>,
}

/// One eviction: the state the policy saw, what it chose and the reward of
/// the iteration it was taken in.
#[derive(Clone, Debug)]
pub struct DecisionRecord<S> {
    pub k: usize,
    pub state: PolicyInput<S>,
    pub action: usize,
    pub probs: Option<Vec<S>>,
    pub reward: S,
}

#[derive(Clone, Debug)]
pub struct StepOutcome<S> {
    /// Coefficients in the canonical layout (zeros for absent columns).
    pub alpha: Vec<S>,
    /// `‖α_i v_i‖₂` per canonical column.
    pub step_lengths: Vec<S>,
    pub f_prev: S,
    pub f_next: S,
    /// `(f_k − f_{k+1}) / f_k`, or the absolute decrease when `f_k ≤ 0`.
    pub reward: S,
    pub reward_is_absolute: bool,
    pub decision: Option<DecisionRecord<S>>,
    pub inner_status: BfgsStatus,
    pub inner_iterations: usize,
    pub subspace_dim: usize,
}

/// Reward for moving from `f_prev` to `f_next`.
pub fn relative_decrease<S: Scalar>(f_prev: S, f_next: S) -> (S, bool) {
    if f_prev > S::zero() {
        ((f_prev - f_next) / f_prev, false)
    } else {
        (f_prev - f_next, true)
    }
}

/// A subspace-optimisation run in progress.
pub struct MsoRun<'a, S, O> {
    oracle: &'a mut Oracle<S, O>,
    cfg: EngineConfig<S>,
    state: SubspaceState<S>,
    iterate: Iterate<S>,
}

impl<'a, S: Scalar, O: Objective<S>> MsoRun<'a, S, O> {
    /// Evaluates `f(x0)` and `∇f(x0)` (one call each).
    pub fn new(oracle: &'a mut Oracle<S, O>, x0: Vector<S>, cfg: &EngineConfig<S>) -> Result<Self, EngineError> {
        cfg.validate()?;
        if x0.len() != oracle.dim() {
            return Err(OracleError::DimensionMismatch { expected: oracle.dim(), got: x0.len() }.into());
        }
        let f = oracle.eval_value(&x0)?;
        let g = oracle.eval_grad(&x0)?;
        let state = SubspaceState::new(x0.clone(), cfg);
        Ok(Self { oracle, cfg: cfg.clone(), state, iterate: Iterate { k: 0, x: x0, f, g } })
    }

    pub fn iterate(&self) -> &Iterate<S> {
        &self.iterate
    }

    pub fn state(&self) -> &SubspaceState<S> {
        &self.state
    }

    pub fn config(&self) -> &EngineConfig<S> {
        &self.cfg
    }

    pub fn oracle(&self) -> &Oracle<S, O> {
        self.oracle
    }

    pub fn converged(&self) -> bool {
        self.iterate.g.norm_inf() <= self.cfg.outer_grad_tol
    }

    /// One outer iteration.
    pub fn step(&mut self, policy: &mut dyn EvictionPolicy<S>) -> Result<StepOutcome<S>, EngineError> {
        let cfg = &self.cfg;
        let slots = cfg.slots();
        if self.oracle.is_stochastic() {
            // fresh minibatch; f(x_k) and the reward share it
            self.oracle.resample_batch();
            self.iterate.f = self.oracle.eval_value(&self.iterate.x)?;
            self.iterate.g = self.oracle.eval_grad(&self.iterate.x)?;
        }
        self.state.accumulate_gradient(&self.iterate.g);
        let sub = build_subspace(&self.state, &self.iterate.x, &self.iterate.g, cfg)?;

        let oracle: &Oracle<S, O> = self.oracle;
        let problem = restrict(oracle, &self.iterate.x, sub.columns.clone())?
            .with_base(self.iterate.f, self.iterate.g.clone());
        let res = bfgs_minimize(&problem, &cfg.bfgs)?;
        // x_{k+1} is the exact point BFGS evaluated; p_{k+1} = Pα
        let x_next = problem.point(&res.alpha);
        let step = problem.step(&res.alpha);
        drop(problem);

        let mut alpha = vec![S::zero(); cfg.alpha_width()];
        let mut step_lengths = vec![S::zero(); cfg.alpha_width()];
        for (i, kind) in sub.kinds.iter().enumerate() {
            let c = kind.canonical_index(slots);
            alpha[c] = res.alpha[i];
            step_lengths[c] = (res.alpha[i] * sub.columns[i].norm2()).abs();
        }

        let f_prev = self.iterate.f;
        let f_next = res.value;
        let (reward, reward_is_absolute) = relative_decrease(f_prev, f_next);

        let mut row: Vec<S> = alpha[..slots].to_vec();
        if cfg.include_gradient_alpha {
            row.push(alpha[slots]);
        }
        self.state.alpha_history.push_row(&row);
        self.state.alpha_history.set_filled(self.state.steps.len());

        let decision = if slots == 0 {
            None
        } else if self.state.steps.len() >= slots {
            let d = policy.select(&self.state.alpha_history)?;
            if d.action >= self.state.steps.len() {
                return Err(PolicyError::ActionOutOfRange { action: d.action, slots }.into());
            }
            let record = DecisionRecord {
                k: self.iterate.k,
                state: self.state.alpha_history.clone(),
                action: d.action,
                probs: d.probs,
                reward,
            };
            self.state.steps.remove(d.action);
            self.state.alpha_history.evict_slot(d.action);
            Some(record)
        } else {
            None
        };

        self.iterate.x = x_next;
        if slots > 0 {
            self.state.steps.push(step);
        }
        self.state.alpha_history.set_filled(self.state.steps.len());
        self.iterate.f = f_next;
        self.iterate.g = res.full_gradient;
        self.iterate.k += 1;

        Ok(StepOutcome {
            alpha,
            step_lengths,
            f_prev,
            f_next,
            reward,
            reward_is_absolute,
            decision,
            inner_status: res.status,
            inner_iterations: res.iterations,
            subspace_dim: sub.len(),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum RunStatus {
    Converged,
    IterLimit,
    Diverged,
    Failed(String),
}

impl std::fmt::Display for RunStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunStatus::Converged => write!(f, "converged"),
            RunStatus::IterLimit => write!(f, "iter-limit"),
            RunStatus::Diverged => write!(f, "diverged"),
            RunStatus::Failed(e) => write!(f, "failed: {e}"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TraceRecord<S> {
    pub k: usize,
    pub f: S,
    pub grad_norm: S,
    /// Canonical-layout coefficients; empty for the initial record and for
    /// optimisers without a subspace.
    pub alpha: Vec<S>,
    pub action: Option<usize>,
    pub probs: Option<Vec<S>>,
    pub value_calls: u64,
    pub grad_calls: u64,
    pub elapsed_secs: f64,
}

/// Per-iteration history of a run.
#[derive(Clone, Debug)]
pub struct RunTrace<S> {
    pub optimizer: String,
    pub records: Vec<TraceRecord<S>>,
    pub decisions: Vec<DecisionRecord<S>>,
    pub rewards: Vec<S>,
    pub status: RunStatus,
    /// Column counts for CSV output.
    pub alpha_width: usize,
    pub action_slots: usize,
}

impl<S: Scalar> RunTrace<S> {
    pub fn new(optimizer: impl Into<String>, alpha_width: usize, action_slots: usize) -> Self {
        Self {
            optimizer: optimizer.into(),
            records: Vec::new(),
            decisions: Vec::new(),
            rewards: Vec::new(),
            status: RunStatus::IterLimit,
            alpha_width,
            action_slots,
        }
    }

    pub fn iterations(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    pub fn final_value(&self) -> S {
        self.records.last().map_or(S::nan(), |r| r.f)
    }

    pub fn final_counts(&self) -> CallCounts {
        self.records
            .last()
            .map_or_else(CallCounts::default, |r| CallCounts { value_calls: r.value_calls, grad_calls: r.grad_calls })
    }

    pub fn csv_header(&self) -> Vec<String> {
        let mut h: Vec<String> = ["k", "f", "grad_norm"].map(String::from).to_vec();
        h.extend((0..self.alpha_width).map(|i| format!("alpha_{i}")));
        h.extend(["action", "value_calls", "grad_calls"].map(String::from));
        h.extend((0..self.action_slots).map(|i| format!("prob_{i}")));
        h
    }

    /// One row per record:
    /// `k,f,grad_norm,alpha_0..alpha_{m−1},action,value_calls,grad_calls,prob_0..prob_{d−2}`.
    /// Floats use shortest round-trip exponent notation; absent values are
    /// empty cells.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), EngineError> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(self.csv_header())?;
        for r in &self.records {
            let mut row = vec![r.k.to_string(), fmt_float(r.f), fmt_float(r.grad_norm)];
            for i in 0..self.alpha_width {
                row.push(r.alpha.get(i).map(|&a| fmt_float(a)).unwrap_or_default());
            }
            row.push(r.action.map(|a| a.to_string()).unwrap_or_default());
            row.push(r.value_calls.to_string());
            row.push(r.grad_calls.to_string());
            for i in 0..self.action_slots {
                let p = match (&r.probs, r.action) {
                    (Some(p), _) => p.get(i).map(|&v| fmt_float(v)).unwrap_or_default(),
                    // deterministic policies log as one-hot rows
                    (None, Some(a)) => fmt_float(if a == i { S::one() } else { S::zero() }),
                    (None, None) => String::new(),
                };
                row.push(p);
            }
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn push_record(&mut self, record: TraceRecord<S>) {
        self.records.push(record);
    }
}

pub fn fmt_float<S: Scalar>(v: S) -> String {
    format!("{:e}", v.to_f64_lossy())
}

/// Runs the engine until `‖∇f‖∞ ≤ outer_grad_tol` or `max_outer_iters`.
///
/// Failures after the initial evaluation end the run and are reported in
/// the trace status; the trace up to that point is kept.
pub fn mso_run<S: Scalar, O: Objective<S>>(
    oracle: &mut Oracle<S, O>,
    x0: Vector<S>,
    policy: &mut dyn EvictionPolicy<S>,
    cfg: &EngineConfig<S>,
) -> Result<RunTrace<S>, EngineError> {
    let start = Instant::now();
    let name = policy.name();
    let mut run = MsoRun::new(oracle, x0, cfg)?;
    let mut trace = RunTrace::new(name, cfg.alpha_width(), cfg.slots());
    let counts = run.oracle().read_counters();
    trace.push_record(TraceRecord {
        k: 0,
        f: run.iterate().f,
        grad_norm: run.iterate().g.norm2(),
        alpha: Vec::new(),
        action: None,
        probs: None,
        value_calls: counts.value_calls,
        grad_calls: counts.grad_calls,
        elapsed_secs: start.elapsed().as_secs_f64(),
    });

    for _ in 0..cfg.max_outer_iters {
        if run.converged() {
            break;
        }
        let outcome = match run.step(policy) {
            Ok(o) => o,
            Err(e) => {
                trace.status = RunStatus::Failed(e.to_string());
                return Ok(trace);
            }
        };
        let counts = run.oracle().read_counters();
        let it = run.iterate();
        trace.push_record(TraceRecord {
            k: it.k,
            f: it.f,
            grad_norm: it.g.norm2(),
            alpha: outcome.alpha,
            action: outcome.decision.as_ref().map(|d| d.action),
            probs: outcome.decision.as_ref().and_then(|d| d.probs.clone()),
            value_calls: counts.value_calls,
            grad_calls: counts.grad_calls,
            elapsed_secs: start.elapsed().as_secs_f64(),
        });
        trace.rewards.push(outcome.reward);
        if let Some(d) = outcome.decision {
            trace.decisions.push(d);
        }
        if outcome.inner_status == BfgsStatus::Diverged {
            trace.status = RunStatus::Diverged;
            return Ok(trace);
        }
    }
    trace.status = if run.converged() { RunStatus::Converged } else { RunStatus::IterLimit };
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{make_quadratic, QuadraticSpec};
    use crate::oracle::HalfSquaredNorm;
    use crate::policy::{Fifo, RuleBased};

    #[test]
    fn orth_weights() {
        assert_eq!(orth_weight::<f64>(0), 1.0);
        assert!((orth_weight::<f64>(1) - (0.5 + 1.25f64.sqrt())).abs() < 1e-15);
        assert!((orth_weight::<f64>(1) - 1.6180).abs() < 1e-4);
        let mut prev = orth_weight::<f64>(0);
        let mut w = prev;
        for _ in 1..=1000 {
            w = next_orth_weight(w);
            assert!(w > prev);
            prev = w;
        }
        assert_eq!(w, orth_weight::<f64>(1000));
    }

    #[test]
    fn first_subspace_drops_zero_anchor() {
        let cfg = EngineConfig::<f64>::default();
        let x0 = Vector::from_f64_slice(&[1.0, 2.0, 3.0]);
        let g0 = Vector::from_f64_slice(&[0.5, 0.0, -1.0]);
        let mut state = SubspaceState::new(x0.clone(), &cfg);
        state.accumulate_gradient(&g0);
        let sub = build_subspace(&state, &x0, &g0, &cfg).unwrap();
        assert_eq!(sub.kinds, vec![ColumnKind::Gradient, ColumnKind::WeightedGradient]);
        for c in &sub.columns {
            assert!((c.norm2() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn full_memory_without_orth_has_d_columns() {
        let cfg = EngineConfig::<f64> { use_orth: false, ..Default::default() };
        let n = 20;
        let x0 = Vector::zeros(n);
        let mut state = SubspaceState::new(x0.clone(), &cfg);
        state.steps = (0..9).map(|i| Vector::basis(n, i)).collect();
        let sub = build_subspace(&state, &x0, &Vector::basis(n, 12), &cfg).unwrap();
        assert_eq!(sub.len(), 10);
    }

    #[test]
    fn all_zero_columns_is_degenerate() {
        let cfg = EngineConfig::<f64>::default();
        let x0 = Vector::zeros(3);
        let state = SubspaceState::new(x0.clone(), &cfg);
        assert!(matches!(build_subspace(&state, &x0, &Vector::zeros(3), &cfg), Err(EngineError::DegenerateSubspace)));
    }

    #[test]
    fn reward_formula() {
        assert_eq!(relative_decrease(2.0, 1.0), (0.5, false));
        assert_eq!(relative_decrease(-1.0, -3.0), (2.0, true));
    }

    #[test]
    fn zero_iterations_give_single_record() {
        let mut o = Oracle::new(HalfSquaredNorm { dim: 3 });
        let cfg = EngineConfig::<f64> { max_outer_iters: 0, ..Default::default() };
        let t = mso_run(&mut o, Vector::from_f64_slice(&[1.0, 0.0, 0.0]), &mut Fifo, &cfg).unwrap();
        assert_eq!(t.records.len(), 1);
        assert_eq!(t.status, RunStatus::IterLimit);
    }

    #[test]
    fn invalid_config_rejected() {
        let mut o = Oracle::new(HalfSquaredNorm { dim: 3 });
        let cfg = EngineConfig::<f64> { d: 0, ..Default::default() };
        assert!(matches!(mso_run(&mut o, Vector::zeros(3), &mut Fifo, &cfg), Err(EngineError::InvalidConfig(_))));
        let cfg = EngineConfig::<f64>::default();
        assert!(mso_run(&mut o, Vector::zeros(4), &mut Fifo, &cfg).is_err());
    }

    #[test]
    fn step_is_p_alpha_and_memory_is_bounded() {
        let q = make_quadratic::<f64>(&QuadraticSpec { dim: 40, condition_number: 100.0, seed: 1 }).unwrap();
        let mut o = Oracle::new(q);
        let cfg = EngineConfig { d: 4, h: 2, ..Default::default() };
        let x0 = Vector::from_elem(40, 1.0);
        let mut run = MsoRun::new(&mut o, x0, &cfg).unwrap();
        let mut rb = RuleBased;
        for _ in 0..12 {
            let x_before = run.iterate().x.clone();
            let out = run.step(&mut rb).unwrap();
            assert!(out.f_next <= out.f_prev + 1e-12);
            assert!(run.state().steps.len() <= cfg.slots());
            assert!(out.subspace_dim <= cfg.d + 2);
            let newest = run.state().steps.last().unwrap();
            let moved = run.iterate().x.sub(&x_before);
            assert!(newest.sub(&moved).norm_inf() < 1e-12);
        }
    }
}
