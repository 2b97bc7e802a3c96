//! REINFORCE meta-training of the eviction policy.
//!
//! An episode runs the subspace engine for `T` outer iterations on a
//! sampled task with the stochastic policy and keeps one
//! `(state, action, reward)` triple per eviction. Updates ascend
//! `(1/m) Σ_k Σ_t (R_t − b_t) ∇_θ log π_θ(a_t | s_t)` with Adam, where
//! `b_t` is an exponential moving average of the returns seen at time
//! index `t`.

pub mod bandit;
mod tasks;

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use tasks::{BoxedObjective, Task, TaskDistribution, TaskFamily};

use crate::engine::{mso_run, EngineConfig, EngineError, RunStatus};
use crate::objectives::ObjectiveError;
use crate::oracle::Oracle;
use crate::policy::{save_checkpoint, Learned, MetaPolicy, PolicyError, PolicyInput};
use crate::Scalar;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("empty trajectory batch")]
    EmptyBatch,
    #[error("non-finite policy gradient; parameters left unchanged")]
    NonFiniteGradient,
    #[error("episode failed: {0}")]
    Episode(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig<S> {
    pub beta1: S,
    pub beta2: S,
    pub eps: S,
}

impl<S: Scalar> Default for AdamConfig<S> {
    fn default() -> Self {
        Self { beta1: S::lit(0.9), beta2: S::lit(0.999), eps: S::lit(1e-8) }
    }
}

/// Adam moment estimates for a flat parameter vector.
#[derive(Clone, Debug)]
pub struct Adam<S> {
    pub cfg: AdamConfig<S>,
    m: Vec<S>,
    v: Vec<S>,
    t: i32,
}

impl<S: Scalar> Adam<S> {
    pub fn new(len: usize, cfg: AdamConfig<S>) -> Self {
        Self { cfg, m: vec![S::zero(); len], v: vec![S::zero(); len], t: 0 }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// `θ ← θ + lr · m̂ / (√v̂ + ε)` (ascent).
    pub fn ascent_step(&mut self, theta: &mut [S], grad: &[S], lr: S) {
        assert_eq!(theta.len(), grad.len());
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        self.t += 1;
        let c1 = S::one() - beta1.powi(self.t);
        let c2 = S::one() - beta2.powi(self.t);
        for i in 0..theta.len() {
            self.m[i] = beta1 * self.m[i] + (S::one() - beta1) * grad[i];
            self.v[i] = beta2 * self.v[i] + (S::one() - beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            theta[i] += lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainConfig<S> {
    pub episodes: usize,
    /// Outer iterations per episode, `T`.
    pub steps_per_episode: usize,
    /// Trajectories per update, `m`.
    pub batch: usize,
    pub gamma: S,
    pub lr: S,
    pub ema_decay: S,
    pub adam: AdamConfig<S>,
    pub seed: u64,
    /// Scale advantages to unit standard deviation per update. Off by default.
    pub normalize_advantages: bool,
    /// Entropy bonus coefficient. Zero by default.
    pub entropy_coef: S,
    pub checkpoint_every: Option<usize>,
    pub checkpoint_dir: Option<PathBuf>,
    pub engine: EngineConfig<S>,
}

impl<S: Scalar> Default for TrainConfig<S> {
    fn default() -> Self {
        Self {
            episodes: 200,
            steps_per_episode: 100,
            batch: 1,
            gamma: S::one(),
            lr: S::lit(5e-3),
            ema_decay: S::lit(0.95),
            adam: AdamConfig::default(),
            seed: 0,
            normalize_advantages: false,
            entropy_coef: S::zero(),
            checkpoint_every: None,
            checkpoint_dir: None,
            engine: EngineConfig::default(),
        }
    }
}

impl<S: Scalar> TrainConfig<S> {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.gamma >= S::zero() && self.gamma <= S::one()) {
            return Err(TrainError::InvalidConfig("gamma must lie in [0, 1]".into()));
        }
        if self.batch == 0 {
            return Err(TrainError::InvalidConfig("batch must be >= 1".into()));
        }
        if self.steps_per_episode == 0 {
            return Err(TrainError::InvalidConfig("steps_per_episode must be >= 1".into()));
        }
        if !(self.ema_decay >= S::zero() && self.ema_decay < S::one()) {
            return Err(TrainError::InvalidConfig("ema_decay must lie in [0, 1)".into()));
        }
        if self.engine.d < 2 {
            return Err(TrainError::InvalidConfig("a learned policy needs d >= 2".into()));
        }
        self.engine.validate()?;
        Ok(())
    }
}

/// The decisions of one episode.
#[derive(Clone, Debug)]
pub struct Trajectory<S> {
    pub states: Vec<PolicyInput<S>>,
    pub actions: Vec<usize>,
    pub rewards: Vec<S>,
    pub initial_value: S,
    pub final_value: S,
}

impl<S: Scalar> Trajectory<S> {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn total_return(&self) -> S {
        self.rewards.iter().copied().sum()
    }
}

/// Runs `steps` outer iterations on `task` with the sampling policy.
pub fn run_episode<S: Scalar>(
    task: Task<S>,
    net: &MetaPolicy<S>,
    engine: &EngineConfig<S>,
    steps: usize,
    policy_seed: u64,
) -> Result<Trajectory<S>, TrainError> {
    let cfg = EngineConfig { max_outer_iters: steps, ..engine.clone() };
    let mut oracle = Oracle::new(task.objective);
    let mut policy = Learned::sampling(net.clone(), policy_seed);
    let trace = mso_run(&mut oracle, task.x0, &mut policy, &cfg)?;
    if let RunStatus::Failed(e) = &trace.status {
        return Err(TrainError::Episode(e.clone()));
    }
    if trace.status == RunStatus::Diverged {
        return Err(TrainError::Episode("inner solve diverged".into()));
    }
    let mut traj = Trajectory {
        states: Vec::with_capacity(trace.decisions.len()),
        actions: Vec::with_capacity(trace.decisions.len()),
        rewards: Vec::with_capacity(trace.decisions.len()),
        initial_value: trace.records[0].f,
        final_value: trace.final_value(),
    };
    for d in trace.decisions {
        if !d.reward.is_finite() {
            return Err(TrainError::Episode(format!("non-finite reward at k={}", d.k)));
        }
        traj.states.push(d.state);
        traj.actions.push(d.action);
        traj.rewards.push(d.reward);
    }
    Ok(traj)
}

/// `R_t = Σ_{t' ≥ t} γ^{t'−t} r_{t'}`.
pub fn compute_returns<S: Scalar>(rewards: &[S], gamma: S) -> Vec<S> {
    let mut out = vec![S::zero(); rewards.len()];
    let mut acc = S::zero();
    for (t, &r) in rewards.iter().enumerate().rev() {
        acc = r + gamma * acc;
        out[t] = acc;
    }
    out
}

/// `decay · prev + (1 − decay) · observed`.
pub fn ema_baseline<S: Scalar>(prev: S, observed: S, decay: S) -> S {
    decay * prev + (S::one() - decay) * observed
}

/// One moving average per time index. An index starts at the first
/// return observed for it.
#[derive(Clone, Debug)]
pub struct EmaBaselines<S> {
    pub decay: S,
    values: Vec<Option<S>>,
}

impl<S: Scalar> EmaBaselines<S> {
    pub fn new(decay: S) -> Self {
        Self { decay, values: Vec::new() }
    }

    pub fn get(&self, t: usize) -> Option<S> {
        self.values.get(t).copied().flatten()
    }

    pub fn observe(&mut self, t: usize, ret: S) {
        if self.values.len() <= t {
            self.values.resize(t + 1, None);
        }
        self.values[t] = Some(match self.values[t] {
            Some(b) => ema_baseline(b, ret, self.decay),
            None => ret,
        });
    }

    /// Baselines for a batch of returns; unseen indices take the batch mean.
    pub fn for_batch(&self, returns: &[Vec<S>]) -> Vec<Vec<S>> {
        let horizon = returns.iter().map(Vec::len).max().unwrap_or(0);
        let mut current = Vec::with_capacity(horizon);
        for t in 0..horizon {
            current.push(self.get(t).unwrap_or_else(|| {
                let (sum, n) = returns
                    .iter()
                    .filter_map(|r| r.get(t))
                    .fold((S::zero(), 0usize), |(s, n), &v| (s + v, n + 1));
                sum / S::from_usize_lossy(n)
            }));
        }
        returns.iter().map(|r| current[..r.len()].to_vec()).collect()
    }
}

/// `(1/m) Σ_k Σ_t (R_t − b_t) ∇_θ log π(a_t | s_t)` for explicit
/// per-step baselines `baselines[k][t]`.
pub fn policy_gradient<S: Scalar>(
    net: &MetaPolicy<S>,
    batch: &[Trajectory<S>],
    baselines: &[Vec<S>],
    gamma: S,
) -> Result<Vec<S>, TrainError> {
    let advantages: Vec<Vec<S>> = batch
        .iter()
        .zip(baselines)
        .map(|(traj, b)| compute_returns(&traj.rewards, gamma).iter().zip(b).map(|(&r, &b)| r - b).collect())
        .collect();
    score_weighted_sum(net, batch, &advantages, S::zero())
}

fn score_weighted_sum<S: Scalar>(
    net: &MetaPolicy<S>,
    batch: &[Trajectory<S>],
    advantages: &[Vec<S>],
    entropy_coef: S,
) -> Result<Vec<S>, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let inv_m = S::one() / S::from_usize_lossy(batch.len());
    let mut grad = vec![S::zero(); net.num_params()];
    for (traj, adv) in batch.iter().zip(advantages) {
        assert_eq!(traj.len(), adv.len());
        for ((state, &action), &a) in traj.states.iter().zip(&traj.actions).zip(adv) {
            if a != S::zero() {
                net.accumulate_logprob_grad(state.flat(), action, a * inv_m, &mut grad)?;
            }
            if entropy_coef != S::zero() {
                // ∇H = −Σ_a π_a log π_a ∇log π_a  (the Σ π_a ∇log π_a term is zero)
                let probs = net.forward(state.flat())?;
                for (b, &p) in probs.iter().enumerate() {
                    if p > S::zero() {
                        net.accumulate_logprob_grad(state.flat(), b, -entropy_coef * inv_m * p * p.ln(), &mut grad)?;
                    }
                }
            }
        }
    }
    Ok(grad)
}

#[derive(Clone, Copy, Debug)]
pub struct UpdateStats<S> {
    pub mean_return: S,
    pub grad_norm: S,
}

/// One Adam ascent step on a batch. Baselines are updated after the
/// advantages are formed; on a non-finite gradient nothing changes.
pub fn reinforce_step<S: Scalar>(
    net: &mut MetaPolicy<S>,
    adam: &mut Adam<S>,
    batch: &[Trajectory<S>],
    baselines: &mut EmaBaselines<S>,
    cfg: &TrainConfig<S>,
) -> Result<UpdateStats<S>, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let returns: Vec<Vec<S>> = batch.iter().map(|t| compute_returns(&t.rewards, cfg.gamma)).collect();
    let base = baselines.for_batch(&returns);
    let mut advantages: Vec<Vec<S>> =
        returns.iter().zip(&base).map(|(r, b)| r.iter().zip(b).map(|(&r, &b)| r - b).collect()).collect();
    if cfg.normalize_advantages {
        let all: Vec<S> = advantages.iter().flatten().copied().collect();
        if all.len() > 1 {
            let n = S::from_usize_lossy(all.len());
            let mean = all.iter().copied().sum::<S>() / n;
            let var = all.iter().map(|&a| (a - mean) * (a - mean)).sum::<S>() / n;
            if var > S::zero() {
                let sd = var.sqrt();
                advantages.iter_mut().flatten().for_each(|a| *a /= sd);
            }
        }
    }
    let grad = score_weighted_sum(net, batch, &advantages, cfg.entropy_coef).map_err(|e| match e {
        TrainError::Policy(PolicyError::NonFinite) => TrainError::NonFiniteGradient,
        other => other,
    })?;
    if !grad.iter().all(|g| g.is_finite()) {
        return Err(TrainError::NonFiniteGradient);
    }
    adam.ascent_step(net.params_mut(), &grad, cfg.lr);
    for r in &returns {
        for (t, &v) in r.iter().enumerate() {
            baselines.observe(t, v);
        }
    }
    let m = S::from_usize_lossy(batch.len());
    let mean_return = returns.iter().map(|r| r.first().copied().unwrap_or(S::zero())).sum::<S>() / m;
    let grad_norm = grad.iter().map(|&g| g * g).sum::<S>().sqrt();
    Ok(UpdateStats { mean_return, grad_norm })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    pub episode: usize,
    /// Undiscounted episode return `Σ_t r_t`, averaged over the episode's update batch.
    pub mean_return: f64,
    pub mean_final_f: f64,
}

pub fn write_learning_curve<W: Write>(curve: &[CurvePoint], w: W) -> Result<(), TrainError> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["episode", "mean_return", "mean_final_f"])?;
    for p in curve {
        wr.write_record([p.episode.to_string(), format!("{:e}", p.mean_return), format!("{:e}", p.mean_final_f)])?;
    }
    wr.flush()?;
    Ok(())
}

pub struct TrainOutcome<S> {
    pub net: MetaPolicy<S>,
    pub curve: Vec<CurvePoint>,
    pub baselines: EmaBaselines<S>,
    pub checkpoints: Vec<PathBuf>,
}

/// Generator for episode `e`: a stream of the run's seed, so a resumed
/// run samples the same tasks as an uninterrupted one.
fn episode_rng(seed: u64, episode: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(episode as u64);
    rng
}

/// Trains a freshly initialised policy.
pub fn train<S: Scalar>(dist: &TaskDistribution<S>, cfg: &TrainConfig<S>) -> Result<TrainOutcome<S>, TrainError> {
    let net = MetaPolicy::for_subspace(cfg.engine.d, cfg.engine.h, cfg.engine.include_gradient_alpha, cfg.seed);
    train_from(dist, cfg, net, 0)
}

/// Continues training `net` from episode `start_episode` (e.g. after
/// loading a checkpoint). Adam moments and baselines start fresh.
pub fn train_from<S: Scalar>(
    dist: &TaskDistribution<S>,
    cfg: &TrainConfig<S>,
    mut net: MetaPolicy<S>,
    start_episode: usize,
) -> Result<TrainOutcome<S>, TrainError> {
    cfg.validate()?;
    let expected = MetaPolicy::<S>::for_subspace(cfg.engine.d, cfg.engine.h, cfg.engine.include_gradient_alpha, 0);
    if net.layer_sizes() != expected.layer_sizes() {
        return Err(TrainError::InvalidConfig("policy layer sizes do not match d/h".into()));
    }
    let mut adam = Adam::new(net.num_params(), cfg.adam);
    let mut baselines = EmaBaselines::new(cfg.ema_decay);
    let mut curve = Vec::with_capacity(cfg.episodes.saturating_sub(start_episode));
    let mut checkpoints = Vec::new();

    let mut episode = start_episode;
    while episode < cfg.episodes {
        let count = cfg.batch.min(cfg.episodes - episode);
        let mut batch = Vec::with_capacity(count);
        for e in episode..episode + count {
            let mut rng = episode_rng(cfg.seed, e);
            let task = dist.sample(&mut rng)?;
            let policy_seed = rng.random::<u64>();
            batch.push(run_episode(task, &net, &cfg.engine, cfg.steps_per_episode, policy_seed)?);
        }
        let nonempty: Vec<Trajectory<S>> = batch.iter().filter(|t| !t.is_empty()).cloned().collect();
        if !nonempty.is_empty() {
            reinforce_step(&mut net, &mut adam, &nonempty, &mut baselines, cfg)?;
        }
        let m = batch.len() as f64;
        let mean_return = batch.iter().map(|t| t.total_return().to_f64_lossy()).sum::<f64>() / m;
        let mean_final_f = batch.iter().map(|t| t.final_value.to_f64_lossy()).sum::<f64>() / m;
        for e in episode..episode + count {
            curve.push(CurvePoint { episode: e, mean_return, mean_final_f });
        }
        episode += count;

        if let (Some(every), Some(dir)) = (cfg.checkpoint_every, &cfg.checkpoint_dir) {
            if every > 0 && (episode % every < count || episode == cfg.episodes) {
                checkpoints.push(write_checkpoint(dir, &net, cfg, Some(episode))?);
            }
        }
    }
    if let Some(dir) = &cfg.checkpoint_dir {
        checkpoints.push(write_checkpoint(dir, &net, cfg, None)?);
    }
    Ok(TrainOutcome { net, curve, baselines, checkpoints })
}

fn write_checkpoint<S: Scalar>(
    dir: &Path,
    net: &MetaPolicy<S>,
    cfg: &TrainConfig<S>,
    episode: Option<usize>,
) -> Result<PathBuf, TrainError> {
    std::fs::create_dir_all(dir)?;
    let name = match episode {
        Some(e) => format!("policy_ep{e:06}.bin"),
        None => "policy.bin".to_string(),
    };
    let path = dir.join(name);
    save_checkpoint(&path, net, cfg.engine.d, cfg.engine.h, cfg.engine.include_gradient_alpha)?;
    Ok(path)
}
