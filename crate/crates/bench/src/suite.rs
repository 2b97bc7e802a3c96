//! Seeded sweeps: one optimizer over many task instances, per-seed trace
//! CSVs and an aggregate.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use mso_core::engine::{mso_run, EngineConfig, RunStatus, RunTrace};
use mso_core::inner::BfgsConfig;
use mso_core::oracle::{CallCounts, Oracle};
use mso_core::policy::{delta_select, load_checkpoint, EvictionPolicy, Fifo, Learned, MetaPolicy, RuleBased};
use mso_core::train::{BoxedObjective, TaskDistribution};

use crate::baselines::{adam_baseline, adam_best_of_grid, gd_baseline, AdamBaselineConfig, GdConfig, ADAM_LR_GRID};
use crate::spec::{ExperimentSpec, OptimizerId};
use crate::tally::{CallTally, TallyHandle};
use crate::BenchError;

type TalliedOracle = Oracle<f64, CallTally<BoxedObjective<f64>>>;

#[derive(Clone, Debug)]
enum Kind {
    Fifo,
    Rb,
    Delta(usize),
    Learned { net: MetaPolicy<f64>, greedy: bool },
    Gd,
    Adam(Option<f64>),
}

/// An optimizer id resolved against engine settings, with any checkpoint
/// loaded.
#[derive(Clone, Debug)]
pub struct Runner {
    pub id: OptimizerId,
    kind: Kind,
    engine: EngineConfig<f64>,
    /// CSV column counts, so every optimizer of a sweep shares a schema.
    alpha_width: usize,
    action_slots: usize,
}

/// One run with independently tallied call counts.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub task_seed: u64,
    pub x0_seed: u64,
    pub trace: RunTrace<f64>,
    pub tally: CallCounts,
}

impl Runner {
    pub fn new(id: &OptimizerId, base: &EngineConfig<f64>) -> Result<Self, BenchError> {
        let mut engine = base.clone();
        let kind = match id {
            OptimizerId::Fifo => Kind::Fifo,
            OptimizerId::Rb => Kind::Rb,
            OptimizerId::Delta(i) => {
                delta_select(*i, base.d)?;
                Kind::Delta(*i)
            }
            OptimizerId::Learned { checkpoint, greedy } => {
                let (net, meta) = load_checkpoint::<f64>(checkpoint)?;
                if meta.d != base.d || meta.h != base.h || meta.include_gradient_alpha != base.include_gradient_alpha {
                    return Err(BenchError::CheckpointMismatch(format!(
                        "checkpoint has d={} h={}, run uses d={} h={}",
                        meta.d, meta.h, base.d, base.h
                    )));
                }
                Kind::Learned { net, greedy: *greedy }
            }
            OptimizerId::Cg => {
                engine = EngineConfig {
                    d: 2,
                    use_orth: false,
                    normalize_directions: false,
                    bfgs: BfgsConfig { grad_tol: 1e-12, max_iters: base.bfgs.max_iters.max(200), ..base.bfgs },
                    ..base.clone()
                };
                Kind::Fifo
            }
            OptimizerId::OrthOnly => {
                engine = EngineConfig { d: 1, use_orth: true, ..base.clone() };
                Kind::Fifo
            }
            OptimizerId::Gd => Kind::Gd,
            OptimizerId::Adam(lr) => Kind::Adam(*lr),
        };
        engine.validate()?;
        Ok(Self {
            id: id.clone(),
            kind,
            alpha_width: engine.alpha_width().max(base.alpha_width()),
            action_slots: engine.slots().max(base.slots()),
            engine,
        })
    }

    pub fn engine(&self) -> &EngineConfig<f64> {
        &self.engine
    }

    fn oracle(dist: &TaskDistribution<f64>, task_seed: u64, x0_seed: u64) -> Result<(TalliedOracle, mso_core::linalg::Vector<f64>, TallyHandle), BenchError> {
        let task = dist.instance(task_seed, x0_seed)?;
        let (obj, handle) = CallTally::new(task.objective);
        Ok((Oracle::new(obj), task.x0, handle))
    }

    /// Runs for `budget` outer iterations on instance `task_seed` from the
    /// point drawn with `x0_seed`. `policy_seed` drives sampling policies.
    pub fn run(
        &self,
        dist: &TaskDistribution<f64>,
        task_seed: u64,
        x0_seed: u64,
        budget: usize,
        policy_seed: u64,
    ) -> Result<RunResult, BenchError> {
        let (mut oracle, x0, handle) = Self::oracle(dist, task_seed, x0_seed)?;
        let (mut trace, tally) = match &self.kind {
            Kind::Gd => {
                let t = gd_baseline(&mut oracle, x0, budget, &GdConfig::default(), self.alpha_width, self.action_slots);
                (t, handle.counts())
            }
            Kind::Adam(Some(lr)) => {
                let cfg = AdamBaselineConfig { lr: *lr, ..Default::default() };
                let t = adam_baseline(&mut oracle, x0, budget, &cfg, self.alpha_width, self.action_slots);
                (t, handle.counts())
            }
            Kind::Adam(None) => {
                let mut handles = Vec::with_capacity(ADAM_LR_GRID.len());
                let mut first = Some(oracle);
                let (t, best) = adam_best_of_grid(
                    || {
                        if let Some(o) = first.take() {
                            handles.push(handle.clone());
                            return o;
                        }
                        let (o, _, h) = Self::oracle(dist, task_seed, x0_seed).expect("instance built once already");
                        handles.push(h);
                        o
                    },
                    &x0,
                    budget,
                    self.alpha_width,
                    self.action_slots,
                );
                (t, handles[best].counts())
            }
            kind => {
                let cfg = EngineConfig { max_outer_iters: budget, ..self.engine.clone() };
                let mut policy: Box<dyn EvictionPolicy<f64>> = match kind {
                    Kind::Fifo => Box::new(Fifo),
                    Kind::Rb => Box::new(RuleBased),
                    Kind::Delta(i) => Box::new(delta_select(*i, cfg.d)?),
                    Kind::Learned { net, greedy: true } => Box::new(Learned::greedy(net.clone())),
                    Kind::Learned { net, greedy: false } => Box::new(Learned::sampling(net.clone(), policy_seed)),
                    Kind::Gd | Kind::Adam(_) => unreachable!(),
                };
                let t = mso_run(&mut oracle, x0, policy.as_mut(), &cfg)?;
                (t, handle.counts())
            }
        };
        trace.optimizer = self.id.to_string();
        trace.alpha_width = self.alpha_width;
        trace.action_slots = self.action_slots;
        Ok(RunResult { task_seed, x0_seed, trace, tally })
    }
}

/// Per-iteration statistics over seeds. Runs that stop early contribute
/// their last record to later rows. `std_f` is the population deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregateRow {
    pub k: usize,
    pub mean_f: f64,
    pub median_f: f64,
    pub std_f: f64,
    pub mean_value_calls: f64,
    pub mean_grad_calls: f64,
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn aggregate(traces: &[&RunTrace<f64>], iters: usize) -> Vec<AggregateRow> {
    (0..=iters)
        .map(|k| {
            let recs: Vec<_> = traces.iter().filter_map(|t| t.records.get(k).or(t.records.last())).collect();
            let mut f: Vec<f64> = recs.iter().map(|r| r.f).collect();
            let (mean_f, std_f) = mean_std(&f);
            let n = recs.len() as f64;
            AggregateRow {
                k,
                mean_f,
                median_f: median(&mut f),
                std_f,
                mean_value_calls: recs.iter().map(|r| r.value_calls as f64).sum::<f64>() / n,
                mean_grad_calls: recs.iter().map(|r| r.grad_calls as f64).sum::<f64>() / n,
            }
        })
        .collect()
}

pub fn write_aggregate<W: Write>(rows: &[AggregateRow], w: W) -> Result<(), BenchError> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["k", "mean_f", "median_f", "std_f", "mean_value_calls", "mean_grad_calls"])?;
    for r in rows {
        wr.write_record([
            r.k.to_string(),
            format!("{:e}", r.mean_f),
            format!("{:e}", r.median_f),
            format!("{:e}", r.std_f),
            format!("{:e}", r.mean_value_calls),
            format!("{:e}", r.mean_grad_calls),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

pub struct SuiteOutput {
    pub results: Vec<RunResult>,
    pub aggregate: Vec<AggregateRow>,
    pub files: Vec<PathBuf>,
}

/// Runs `runner` once per seed in parallel. Seed `s` uses instance `s`,
/// initial point `s` and policy seed `s`.
pub fn run_seeds(
    runner: &Runner,
    dist: &TaskDistribution<f64>,
    seeds: &[u64],
    budget: usize,
) -> Result<Vec<RunResult>, BenchError> {
    seeds.par_iter().map(|&s| runner.run(dist, s, s, budget, s)).collect()
}

/// Writes `<out>/<label>/seed_<s>.csv` per seed and
/// `<out>/<label>/aggregate.csv`.
pub fn run_suite(spec: &ExperimentSpec) -> Result<SuiteOutput, BenchError> {
    spec.validate()?;
    let runner = Runner::new(&spec.optimizer, &spec.engine_config())?;
    let dist = spec.task_distribution()?;
    let results = run_seeds(&runner, &dist, &spec.seeds, spec.iters)?;
    let dir = spec.out.join(spec.optimizer.label());
    write_suite(&dir, &results, spec.iters)
        .map(|(aggregate, files)| SuiteOutput { results, aggregate, files })
}

fn write_suite(dir: &Path, results: &[RunResult], iters: usize) -> Result<(Vec<AggregateRow>, Vec<PathBuf>), BenchError> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::with_capacity(results.len() + 1);
    for r in results {
        let path = dir.join(format!("seed_{}.csv", r.task_seed));
        r.trace.write_csv(fs::File::create(&path)?)?;
        files.push(path);
    }
    let traces: Vec<&RunTrace<f64>> = results.iter().map(|r| &r.trace).collect();
    let agg = aggregate(&traces, iters);
    let path = dir.join("aggregate.csv");
    write_aggregate(&agg, fs::File::create(&path)?)?;
    files.push(path);
    Ok((agg, files))
}

/// True when the run ended without error.
pub fn run_ok(r: &RunResult) -> bool {
    !matches!(r.trace.status, RunStatus::Failed(_) | RunStatus::Diverged)
}
