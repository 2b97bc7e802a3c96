use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use mso_bench::evaluate::{compare_to_dir, delta_sweep_ids, evaluate_to_dir, held_out_tasks};
use mso_bench::spec::{parse_seeds, preset, ExperimentSpec, ObjectiveSpec, OptimizerId, PRESETS};
use mso_bench::suite::{run_ok, run_suite, Runner};
use mso_core::train::{train, write_learning_curve, TrainConfig};

#[derive(Parser)]
#[command(name = "mso", version, about = "Subspace optimisation benchmarks and policy training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one optimizer over a list of seeds; writes per-seed traces and an aggregate.
    Run(CommonArgs),
    /// Meta-train an eviction policy with REINFORCE.
    Train(TrainArgs),
    /// Evaluate a trained policy (sampling and greedy) against FIFO on held-out tasks.
    Evaluate(EvalArgs),
    /// Run several optimizers on the same tasks and write a comparison table.
    Compare(CompareArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

impl From<OnOff> for bool {
    fn from(v: OnOff) -> bool {
        matches!(v, OnOff::On)
    }
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// TOML file with the experiment keys (flags override it).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from a named preset.
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(PRESETS))]
    preset: Option<String>,
    /// quadratic | rosenbrock | robust-regression | classifier
    #[arg(long)]
    objective: Option<String>,
    /// Problem dimension (quadratic, rosenbrock) or feature count (robust-regression).
    #[arg(long)]
    dim: Option<usize>,
    /// Digits used by the classifier, e.g. 0,1.
    #[arg(long, value_delimiter = ',')]
    digits: Option<Vec<u8>>,
    /// Directory with the MNIST IDX files (default: $MSO_DATA_DIR).
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// fifo | rb | delta-<i> | learned:<ckpt> | learned-sample:<ckpt> | cg | orth-only | gd | adam[:<lr>]
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    h: Option<usize>,
    /// `a..b`, `a..=b` or a comma-separated list.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    orth: Option<OnOff>,
    #[arg(long)]
    normalize: Option<OnOff>,
    /// Policy checkpoint for `--optimizer learned`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, default_value_t = 200)]
    episodes: usize,
    /// Outer iterations per episode (default: --iters).
    #[arg(long)]
    steps: Option<usize>,
    /// Trajectories per update.
    #[arg(long, default_value_t = 1)]
    batch: usize,
    #[arg(long, default_value_t = 5e-3)]
    lr: f64,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long, default_value_t = 0.95)]
    ema_decay: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Start from this checkpoint instead of a fresh network.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Episode index to resume from.
    #[arg(long, default_value_t = 0)]
    start_episode: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Number of held-out tasks.
    #[arg(long, default_value_t = 100)]
    tasks: usize,
    /// Initial-point seed offset for the held-out tasks.
    #[arg(long, default_value_t = 1_000_000)]
    x0_offset: u64,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated optimizer ids.
    #[arg(long, value_delimiter = ',')]
    optimizers: Vec<String>,
    /// Add δ(a,0) … δ(a,d−2), FIFO and RB.
    #[arg(long)]
    delta_sweep: bool,
    #[arg(long)]
    tasks: Option<usize>,
    #[arg(long, default_value_t = 1_000_000)]
    x0_offset: u64,
}

fn objective_from_flags(name: &str, a: &CommonArgs) -> Result<ObjectiveSpec> {
    Ok(match name {
        "quadratic" => ObjectiveSpec::Quadratic { dim: a.dim.unwrap_or(100), condition_number: 1e3 },
        "rosenbrock" => ObjectiveSpec::Rosenbrock { dim: a.dim.unwrap_or(100), a: 1.0, b: 100.0 },
        "robust-regression" => {
            let mut o = ObjectiveSpec::robust_regression();
            if let (ObjectiveSpec::RobustRegression { features, .. }, Some(d)) = (&mut o, a.dim) {
                *features = d;
            }
            o
        }
        "classifier" => ObjectiveSpec::Classifier {
            digits: a.digits.clone().unwrap_or_else(|| vec![0, 1, 2, 3, 4]),
            images: None,
            hidden: 10,
            batch: 8192,
            data_dir: a.data_dir.clone(),
        },
        other => bail!("unknown objective '{other}'"),
    })
}

fn optimizer_from_flag(s: &str, checkpoint: &Option<PathBuf>) -> Result<OptimizerId> {
    match (s, checkpoint) {
        ("learned", Some(p)) => Ok(OptimizerId::Learned { checkpoint: p.clone(), greedy: true }),
        ("learned-sample", Some(p)) => Ok(OptimizerId::Learned { checkpoint: p.clone(), greedy: false }),
        ("learned" | "learned-sample", None) => bail!("--optimizer {s} needs --checkpoint"),
        _ => Ok(s.parse()?),
    }
}

fn build_spec(a: &CommonArgs) -> Result<ExperimentSpec> {
    let mut spec = if let Some(path) = &a.config {
        ExperimentSpec::from_toml_file(path).with_context(|| format!("reading {}", path.display()))?
    } else if let Some(p) = &a.preset {
        preset(p)?
    } else {
        let name = a.objective.as_deref().unwrap_or("quadratic");
        ExperimentSpec::new(objective_from_flags(name, a)?, OptimizerId::Fifo)
    };
    if a.config.is_some() || a.preset.is_some() {
        if let Some(name) = &a.objective {
            spec.objective = objective_from_flags(name, a)?;
        } else if let Some(dim) = a.dim {
            match &mut spec.objective {
                ObjectiveSpec::Quadratic { dim: n, .. } | ObjectiveSpec::Rosenbrock { dim: n, .. } => *n = dim,
                ObjectiveSpec::RobustRegression { features, .. } => *features = dim,
                ObjectiveSpec::Classifier { .. } => bail!("--dim does not apply to the classifier"),
            }
        }
    }
    if let ObjectiveSpec::Classifier { digits, data_dir, .. } = &mut spec.objective {
        if let Some(d) = &a.digits {
            *digits = d.clone();
        }
        if a.data_dir.is_some() {
            *data_dir = a.data_dir.clone();
        }
    }
    if let Some(o) = &a.optimizer {
        spec.optimizer = optimizer_from_flag(o, &a.checkpoint)?;
    }
    if let Some(v) = a.d {
        spec.d = v;
    }
    if let Some(v) = a.h {
        spec.h = v;
    }
    if let Some(s) = &a.seeds {
        spec.seeds = parse_seeds(s)?;
    }
    if let Some(v) = a.iters {
        spec.iters = v;
    }
    if let Some(v) = a.orth {
        spec.orth = v.into();
    }
    if let Some(v) = a.normalize {
        spec.normalize = v.into();
    }
    if let Some(v) = &a.out {
        spec.out = v.clone();
    }
    spec.validate()?;
    Ok(spec)
}

fn cmd_run(a: &CommonArgs) -> Result<()> {
    let spec = build_spec(a)?;
    let out = run_suite(&spec)?;
    let failed = out.results.iter().filter(|r| !run_ok(r)).count();
    let last = out.aggregate.last().expect("aggregate has k = 0");
    println!(
        "{} on {} ({} seeds, {} iterations): mean final f {:e}, median {:e}",
        spec.optimizer,
        spec.objective.name(),
        spec.seeds.len(),
        spec.iters,
        last.mean_f,
        last.median_f
    );
    println!("wrote {} files under {}", out.files.len(), spec.out.display());
    if failed > 0 {
        bail!("{failed} run(s) failed or diverged");
    }
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let spec = build_spec(&a.common)?;
    let dist = spec.task_distribution()?;
    let out_dir = spec.out.clone();
    let cfg = TrainConfig {
        episodes: a.episodes,
        steps_per_episode: a.steps.unwrap_or(spec.iters),
        batch: a.batch,
        gamma: a.gamma,
        lr: a.lr,
        ema_decay: a.ema_decay,
        seed: a.seed,
        checkpoint_every: a.checkpoint_every,
        checkpoint_dir: Some(out_dir.clone()),
        engine: spec.engine_config(),
        ..Default::default()
    };
    let outcome = match &a.resume {
        Some(p) => {
            let (net, _) = mso_core::policy::load_checkpoint::<f64>(p)?;
            mso_core::train::train_from(&dist, &cfg, net, a.start_episode)?
        }
        None => train(&dist, &cfg)?,
    };
    fs::create_dir_all(&out_dir)?;
    let curve_path = out_dir.join("learning_curve.csv");
    write_learning_curve(&outcome.curve, fs::File::create(&curve_path)?)?;
    let final_ckpt = outcome.checkpoints.last().expect("final checkpoint is always written");
    if let Some(p) = outcome.curve.last() {
        println!("episode {}: mean return {:e}, final f {:e}", p.episode, p.mean_return, p.mean_final_f);
    }
    println!("policy: {}\nlearning curve: {}", final_ckpt.display(), curve_path.display());
    Ok(())
}

fn cmd_evaluate(a: &EvalArgs) -> Result<()> {
    let spec = build_spec(&a.common)?;
    let ckpt = match (&a.common.checkpoint, &spec.optimizer) {
        (Some(p), _) => p.clone(),
        (None, OptimizerId::Learned { checkpoint, .. }) => checkpoint.clone(),
        _ => bail!("evaluate needs --checkpoint"),
    };
    let dist = spec.task_distribution()?;
    let tasks = held_out_tasks(&dist, a.tasks, a.x0_offset);
    let (ev, files) = evaluate_to_dir(&ckpt, &dist, &tasks, spec.iters, &spec.engine_config(), &spec.out)?;
    let (s, g, f) = ev.mean_finals();
    println!("mean final f over {} tasks: sampling {s:e}, greedy {g:e}, fifo {f:e}", tasks.len());
    for p in files {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn cmd_compare(a: &CompareArgs) -> Result<()> {
    let spec = build_spec(&a.common)?;
    let mut ids = a
        .optimizers
        .iter()
        .map(|s| optimizer_from_flag(s, &a.common.checkpoint))
        .collect::<Result<Vec<_>>>()?;
    if a.delta_sweep {
        for id in delta_sweep_ids(spec.d) {
            if !ids.contains(&id) {
                ids.push(id);
            }
        }
    }
    if ids.is_empty() {
        bail!("compare needs --optimizers or --delta-sweep");
    }
    let engine = spec.engine_config();
    let runners = ids.iter().map(|id| Runner::new(id, &engine)).collect::<Result<Vec<_>, _>>()?;
    let dist = spec.task_distribution()?;
    let tasks = held_out_tasks(&dist, a.tasks.unwrap_or(spec.seeds.len()), a.x0_offset);
    let (_, summary, files) = compare_to_dir(&runners, &dist, &tasks, spec.iters, &spec.out)?;
    for s in &summary {
        println!(
            "{:<28} mean {:>12.5e}  median {:>12.5e}  calls f/g {:>9.1}/{:<9.1}",
            s.optimizer, s.mean_final_f, s.median_final_f, s.mean_value_calls, s.mean_grad_calls
        );
    }
    for p in files {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Compare(a) => cmd_compare(a),
    }
}
