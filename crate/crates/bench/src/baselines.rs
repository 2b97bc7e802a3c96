//! First-order comparators emitting the engine's trace schema.

use std::time::Instant;

use mso_core::engine::{RunStatus, RunTrace, TraceRecord};
use mso_core::linalg::Vector;
use mso_core::oracle::{Objective, Oracle, OracleError};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GdConfig {
    pub initial_step: f64,
    pub c1: f64,
    pub shrink: f64,
    pub max_backtracks: usize,
    /// Stop when `‖∇f‖∞` falls to this.
    pub grad_tol: f64,
}

impl Default for GdConfig {
    fn default() -> Self {
        Self { initial_step: 1.0, c1: 1e-4, shrink: 0.5, max_backtracks: 50, grad_tol: 1e-8 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamBaselineConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub grad_tol: f64,
}

impl Default for AdamBaselineConfig {
    fn default() -> Self {
        Self { lr: 1e-2, beta1: 0.9, beta2: 0.999, eps: 1e-8, grad_tol: 1e-8 }
    }
}

/// Learning rates tried by [`adam_best_of_grid`].
pub const ADAM_LR_GRID: [f64; 3] = [1e-3, 1e-2, 1e-1];

struct Recorder {
    trace: RunTrace<f64>,
    start: Instant,
}

impl Recorder {
    fn new(name: String, alpha_width: usize, action_slots: usize) -> Self {
        Self { trace: RunTrace::new(name, alpha_width, action_slots), start: Instant::now() }
    }

    fn push<O: Objective<f64>>(&mut self, oracle: &Oracle<f64, O>, k: usize, f: f64, g: &Vector<f64>) {
        let c = oracle.read_counters();
        self.trace.push_record(TraceRecord {
            k,
            f,
            grad_norm: g.norm2(),
            alpha: Vec::new(),
            action: None,
            probs: None,
            value_calls: c.value_calls,
            grad_calls: c.grad_calls,
            elapsed_secs: self.start.elapsed().as_secs_f64(),
        });
    }
}

fn fail(mut trace: RunTrace<f64>, e: OracleError) -> RunTrace<f64> {
    trace.status = match e {
        OracleError::NonFiniteOutput | OracleError::NonFiniteInput => RunStatus::Diverged,
        other => RunStatus::Failed(other.to_string()),
    };
    trace
}

/// Gradient descent with backtracking Armijo line search.
///
/// Each iteration costs one gradient (at the accepted point) and
/// `1 + backtracks` values. The first trial step is twice the last accepted
/// one. `alpha_width` and `action_slots` only pad the CSV columns.
pub fn gd_baseline<O: Objective<f64>>(
    oracle: &mut Oracle<f64, O>,
    x0: Vector<f64>,
    budget: usize,
    cfg: &GdConfig,
    alpha_width: usize,
    action_slots: usize,
) -> RunTrace<f64> {
    let mut rec = Recorder::new("gd".into(), alpha_width, action_slots);
    let mut x = x0;
    let (mut f, mut g) = match oracle.eval_value(&x).and_then(|f| Ok((f, oracle.eval_grad(&x)?))) {
        Ok(v) => v,
        Err(e) => return fail(rec.trace, e),
    };
    rec.push(oracle, 0, f, &g);
    let mut t = cfg.initial_step;
    for k in 1..=budget {
        if g.norm_inf() <= cfg.grad_tol {
            rec.trace.status = RunStatus::Converged;
            return rec.trace;
        }
        if oracle.is_stochastic() {
            oracle.resample_batch();
            match oracle.eval_value(&x).and_then(|f| Ok((f, oracle.eval_grad(&x)?))) {
                Ok(v) => (f, g) = v,
                Err(e) => return fail(rec.trace, e),
            }
        }
        let gg = g.dot(&g);
        let mut accepted = None;
        for _ in 0..=cfg.max_backtracks {
            let trial = x.sub(&g.scaled(t));
            match oracle.eval_value(&trial) {
                Ok(ft) if ft <= f - cfg.c1 * t * gg => {
                    accepted = Some((trial, ft));
                    break;
                }
                Ok(_) | Err(OracleError::NonFiniteOutput) => t *= cfg.shrink,
                Err(e) => return fail(rec.trace, e),
            }
        }
        let Some((xn, fnext)) = accepted else {
            rec.trace.status = RunStatus::Failed("line search found no decrease".into());
            return rec.trace;
        };
        x = xn;
        f = fnext;
        g = match oracle.eval_grad(&x) {
            Ok(g) => g,
            Err(e) => return fail(rec.trace, e),
        };
        rec.push(oracle, k, f, &g);
        t *= 2.0;
    }
    rec.trace.status = if g.norm_inf() <= cfg.grad_tol { RunStatus::Converged } else { RunStatus::IterLimit };
    rec.trace
}

/// Adam with a fixed learning rate. Each iteration costs one gradient and
/// one value (for the trace).
pub fn adam_baseline<O: Objective<f64>>(
    oracle: &mut Oracle<f64, O>,
    x0: Vector<f64>,
    budget: usize,
    cfg: &AdamBaselineConfig,
    alpha_width: usize,
    action_slots: usize,
) -> RunTrace<f64> {
    let mut rec = Recorder::new(format!("adam(lr={})", cfg.lr), alpha_width, action_slots);
    let n = x0.len();
    let mut x = x0;
    let (f0, mut g) = match oracle.eval_value(&x).and_then(|f| Ok((f, oracle.eval_grad(&x)?))) {
        Ok(v) => v,
        Err(e) => return fail(rec.trace, e),
    };
    rec.push(oracle, 0, f0, &g);
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    for k in 1..=budget {
        if g.norm_inf() <= cfg.grad_tol {
            rec.trace.status = RunStatus::Converged;
            return rec.trace;
        }
        let c1 = 1.0 - cfg.beta1.powi(k as i32);
        let c2 = 1.0 - cfg.beta2.powi(k as i32);
        for i in 0..n {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            x[i] -= cfg.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.eps);
        }
        if oracle.is_stochastic() {
            oracle.resample_batch();
        }
        let f = match oracle.eval_value(&x) {
            Ok(f) => f,
            Err(e) => return fail(rec.trace, e),
        };
        g = match oracle.eval_grad(&x) {
            Ok(g) => g,
            Err(e) => return fail(rec.trace, e),
        };
        rec.push(oracle, k, f, &g);
    }
    rec.trace.status = RunStatus::IterLimit;
    rec.trace
}

/// Runs Adam once per learning rate in [`ADAM_LR_GRID`] on fresh oracles and
/// keeps the run with the lowest final value, returned with its grid index.
/// Diverged runs rank last.
pub fn adam_best_of_grid<O: Objective<f64>>(
    mut make_oracle: impl FnMut() -> Oracle<f64, O>,
    x0: &Vector<f64>,
    budget: usize,
    alpha_width: usize,
    action_slots: usize,
) -> (RunTrace<f64>, usize) {
    let mut best: Option<(RunTrace<f64>, usize)> = None;
    for (i, lr) in ADAM_LR_GRID.into_iter().enumerate() {
        let mut oracle = make_oracle();
        let cfg = AdamBaselineConfig { lr, ..Default::default() };
        let trace = adam_baseline(&mut oracle, x0.clone(), budget, &cfg, alpha_width, action_slots);
        let score = |t: &RunTrace<f64>| {
            let f = t.final_value();
            if t.status == RunStatus::Diverged || !f.is_finite() {
                f64::INFINITY
            } else {
                f
            }
        };
        if best.as_ref().is_none_or(|(b, _)| score(&trace) < score(b)) {
            best = Some((trace, i));
        }
    }
    best.expect("grid is nonempty")
}
