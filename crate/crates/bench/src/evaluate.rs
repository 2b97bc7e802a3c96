//! Held-out evaluation of learned policies and head-to-head comparisons.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use mso_core::engine::{EngineConfig, RunTrace};
use mso_core::train::TaskDistribution;

use crate::spec::OptimizerId;
use crate::suite::{aggregate, mean_std, median, write_aggregate, RunResult, Runner};
use crate::BenchError;

/// A held-out task: generator seed plus initial-point seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvalTask {
    pub task_seed: u64,
    pub x0_seed: u64,
}

/// `n` tasks cycling through the distribution's seeds; task `i` draws its
/// initial point with seed `offset + i`.
pub fn held_out_tasks(dist: &TaskDistribution<f64>, n: usize, offset: u64) -> Vec<EvalTask> {
    (0..n)
        .map(|i| EvalTask { task_seed: dist.seeds[i % dist.seeds.len()], x0_seed: offset + i as u64 })
        .collect()
}

/// Runs every optimizer on every task. Rows are `results[optimizer][task]`.
pub fn compare(
    runners: &[Runner],
    dist: &TaskDistribution<f64>,
    tasks: &[EvalTask],
    budget: usize,
) -> Result<Vec<Vec<RunResult>>, BenchError> {
    runners
        .iter()
        .map(|r| {
            tasks
                .par_iter()
                .map(|t| r.run(dist, t.task_seed, t.x0_seed, budget, t.x0_seed))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub optimizer: String,
    pub tasks: usize,
    pub mean_final_f: f64,
    pub median_final_f: f64,
    pub std_final_f: f64,
    pub mean_value_calls: f64,
    pub mean_grad_calls: f64,
}

pub fn summarize(id: &OptimizerId, results: &[RunResult]) -> SummaryRow {
    let mut f: Vec<f64> = results.iter().map(|r| r.trace.final_value()).collect();
    let (mean, std) = mean_std(&f);
    let n = results.len() as f64;
    SummaryRow {
        optimizer: id.to_string(),
        tasks: results.len(),
        mean_final_f: mean,
        median_final_f: median(&mut f),
        std_final_f: std,
        mean_value_calls: results.iter().map(|r| r.trace.final_counts().value_calls as f64).sum::<f64>() / n,
        mean_grad_calls: results.iter().map(|r| r.trace.final_counts().grad_calls as f64).sum::<f64>() / n,
    }
}

/// Long-form CSV: one row per (optimizer, task).
pub fn write_comparison<W: Write>(runners: &[Runner], results: &[Vec<RunResult>], w: W) -> Result<(), BenchError> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record([
        "optimizer",
        "task_seed",
        "x0_seed",
        "initial_f",
        "final_f",
        "iterations",
        "value_calls",
        "grad_calls",
        "status",
    ])?;
    for (r, rows) in runners.iter().zip(results) {
        for res in rows {
            let c = res.trace.final_counts();
            wr.write_record([
                r.id.to_string(),
                res.task_seed.to_string(),
                res.x0_seed.to_string(),
                format!("{:e}", res.trace.records.first().map_or(f64::NAN, |x| x.f)),
                format!("{:e}", res.trace.final_value()),
                res.trace.iterations().to_string(),
                c.value_calls.to_string(),
                c.grad_calls.to_string(),
                res.trace.status.to_string(),
            ])?;
        }
    }
    wr.flush()?;
    Ok(())
}

pub fn write_summary<W: Write>(rows: &[SummaryRow], w: W) -> Result<(), BenchError> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record([
        "optimizer",
        "tasks",
        "mean_final_f",
        "median_final_f",
        "std_final_f",
        "mean_value_calls",
        "mean_grad_calls",
    ])?;
    for r in rows {
        wr.write_record([
            r.optimizer.clone(),
            r.tasks.to_string(),
            format!("{:e}", r.mean_final_f),
            format!("{:e}", r.median_final_f),
            format!("{:e}", r.std_final_f),
            format!("{:e}", r.mean_value_calls),
            format!("{:e}", r.mean_grad_calls),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

/// Writes `comparison.csv` and `summary.csv` into `dir`.
pub fn compare_to_dir(
    runners: &[Runner],
    dist: &TaskDistribution<f64>,
    tasks: &[EvalTask],
    budget: usize,
    dir: &Path,
) -> Result<(Vec<Vec<RunResult>>, Vec<SummaryRow>, Vec<PathBuf>), BenchError> {
    let results = compare(runners, dist, tasks, budget)?;
    let summary: Vec<SummaryRow> = runners.iter().zip(&results).map(|(r, res)| summarize(&r.id, res)).collect();
    fs::create_dir_all(dir)?;
    let cmp = dir.join("comparison.csv");
    write_comparison(runners, &results, fs::File::create(&cmp)?)?;
    let sum = dir.join("summary.csv");
    write_summary(&summary, fs::File::create(&sum)?)?;
    Ok((results, summary, vec![cmp, sum]))
}

/// The δ(a,0) … δ(a,d−2) policies plus FIFO and RB.
pub fn delta_sweep_ids(d: usize) -> Vec<OptimizerId> {
    let mut ids: Vec<OptimizerId> = (0..d.saturating_sub(1)).map(OptimizerId::Delta).collect();
    ids.push(OptimizerId::Fifo);
    ids.push(OptimizerId::Rb);
    ids
}

/// Per-task finals of a learned policy in both modes next to FIFO.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyEvalRow {
    pub task: EvalTask,
    pub sample_final: f64,
    pub greedy_final: f64,
    pub fifo_final: f64,
}

pub struct PolicyEvaluation {
    pub rows: Vec<PolicyEvalRow>,
    /// Mean convergence curves for sampling, greedy and FIFO.
    pub curves: [Vec<f64>; 3],
}

impl PolicyEvaluation {
    pub fn mean_finals(&self) -> (f64, f64, f64) {
        let n = self.rows.len() as f64;
        let m = |g: fn(&PolicyEvalRow) -> f64| self.rows.iter().map(g).sum::<f64>() / n;
        (m(|r| r.sample_final), m(|r| r.greedy_final), m(|r| r.fifo_final))
    }

    pub fn write_summary<W: Write>(&self, w: W) -> Result<(), BenchError> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["task_seed", "x0_seed", "learned_sample", "learned_greedy", "fifo", "greedy_minus_fifo", "sample_minus_fifo"])?;
        for r in &self.rows {
            wr.write_record([
                r.task.task_seed.to_string(),
                r.task.x0_seed.to_string(),
                format!("{:e}", r.sample_final),
                format!("{:e}", r.greedy_final),
                format!("{:e}", r.fifo_final),
                format!("{:e}", r.greedy_final - r.fifo_final),
                format!("{:e}", r.sample_final - r.fifo_final),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn write_curves<W: Write>(&self, w: W) -> Result<(), BenchError> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["k", "learned_sample", "learned_greedy", "fifo"])?;
        for k in 0..self.curves[0].len() {
            wr.write_record([
                k.to_string(),
                format!("{:e}", self.curves[0][k]),
                format!("{:e}", self.curves[1][k]),
                format!("{:e}", self.curves[2][k]),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Runs the checkpointed policy (sampling and greedy) and FIFO on `tasks`.
pub fn evaluate_policy(
    checkpoint: &Path,
    dist: &TaskDistribution<f64>,
    tasks: &[EvalTask],
    budget: usize,
    engine: &EngineConfig<f64>,
) -> Result<PolicyEvaluation, BenchError> {
    let ids = [
        OptimizerId::Learned { checkpoint: checkpoint.to_path_buf(), greedy: false },
        OptimizerId::Learned { checkpoint: checkpoint.to_path_buf(), greedy: true },
        OptimizerId::Fifo,
    ];
    let runners = ids.iter().map(|id| Runner::new(id, engine)).collect::<Result<Vec<_>, _>>()?;
    let results = compare(&runners, dist, tasks, budget)?;
    let rows = tasks
        .iter()
        .enumerate()
        .map(|(i, &task)| PolicyEvalRow {
            task,
            sample_final: results[0][i].trace.final_value(),
            greedy_final: results[1][i].trace.final_value(),
            fifo_final: results[2][i].trace.final_value(),
        })
        .collect();
    let curve = |res: &[RunResult]| {
        let traces: Vec<&RunTrace<f64>> = res.iter().map(|r| &r.trace).collect();
        aggregate(&traces, budget).into_iter().map(|r| r.mean_f).collect::<Vec<_>>()
    };
    Ok(PolicyEvaluation { rows, curves: [curve(&results[0]), curve(&results[1]), curve(&results[2])] })
}

/// Writes `evaluation.csv`, `curves.csv` and FIFO-style aggregates per mode.
pub fn evaluate_to_dir(
    checkpoint: &Path,
    dist: &TaskDistribution<f64>,
    tasks: &[EvalTask],
    budget: usize,
    engine: &EngineConfig<f64>,
    dir: &Path,
) -> Result<(PolicyEvaluation, Vec<PathBuf>), BenchError> {
    let ev = evaluate_policy(checkpoint, dist, tasks, budget, engine)?;
    fs::create_dir_all(dir)?;
    let summary = dir.join("evaluation.csv");
    ev.write_summary(fs::File::create(&summary)?)?;
    let curves = dir.join("curves.csv");
    ev.write_curves(fs::File::create(&curves)?)?;
    Ok((ev, vec![summary, curves]))
}

/// Aggregate CSV for one optimizer's results.
pub fn write_results_aggregate(results: &[RunResult], budget: usize, path: &Path) -> Result<(), BenchError> {
    let traces: Vec<&RunTrace<f64>> = results.iter().map(|r| &r.trace).collect();
    write_aggregate(&aggregate(&traces, budget), fs::File::create(path)?)
}
