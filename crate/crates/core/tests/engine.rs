use mso_core::engine::{mso_run, EngineConfig, MsoRun, RunStatus, RunTrace};
use mso_core::inner::BfgsConfig;
use mso_core::linalg::Vector;
use mso_core::objectives::{make_quadratic, Quadratic, QuadraticSpec, RobustRegression, Rosenbrock};
use mso_core::oracle::{Objective, Oracle};
use mso_core::policy::{delta_select, EvictionPolicy, Fifo, Learned, MetaPolicy, RuleBased};
use mso_core::Scalar;

/// Textbook linear CG on `½xᵀAx − bᵀx`, returning `f` after each iteration.
fn textbook_cg(q: &Quadratic<f64>, x0: &[f64], iters: usize) -> Vec<f64> {
    let a = q.matrix();
    let b = q.linear_term();
    let f = |x: &[f64]| {
        let ax = a.mul_vec(x);
        0.5 * x.iter().zip(&ax).map(|(u, v)| u * v).sum::<f64>() - x.iter().zip(b).map(|(u, v)| u * v).sum::<f64>()
    };
    let mut x = x0.to_vec();
    let ax = a.mul_vec(&x);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let mut p = r.clone();
    let mut rr: f64 = r.iter().map(|v| v * v).sum();
    let mut out = vec![f(&x)];
    for _ in 0..iters {
        let ap = a.mul_vec(&p);
        let step = rr / p.iter().zip(&ap).map(|(u, v)| u * v).sum::<f64>();
        for i in 0..x.len() {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        let rr_new: f64 = r.iter().map(|v| v * v).sum();
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..p.len() {
            p[i] = r[i] + beta * p[i];
        }
        out.push(f(&x));
    }
    out
}

fn assert_monotone<S: Scalar>(trace: &RunTrace<S>) {
    for w in trace.records.windows(2) {
        assert!(
            w[1].f.to_f64_lossy() <= w[0].f.to_f64_lossy() + 1e-12,
            "{}: f rose from {} to {} at k={}",
            trace.optimizer,
            w[0].f,
            w[1].f,
            w[1].k
        );
    }
}

// Past ~15 iterations the Krylov process on some of these instances is
// ill-conditioned enough that f64 CG itself drifts from exact CG.
#[test]
fn two_dimensional_subspace_reproduces_cg() {
    for seed in 0..10 {
        let q = make_quadratic::<f64>(&QuadraticSpec { dim: 50, condition_number: 1e3, seed }).unwrap();
        let x0 = vec![0.0; 50];
        let reference = textbook_cg(&q, &x0, 15);
        let cfg = EngineConfig {
            d: 2,
            use_orth: false,
            normalize_directions: false,
            max_outer_iters: 15,
            outer_grad_tol: 0.0,
            bfgs: BfgsConfig { grad_tol: 1e-12, max_iters: 200, ..Default::default() },
            ..Default::default()
        };
        let mut oracle = Oracle::new(q);
        let trace = mso_run(&mut oracle, Vector::from_vec(x0), &mut Fifo, &cfg).unwrap();
        assert_eq!(trace.records.len(), 16);
        for (r, f_cg) in trace.records.iter().zip(&reference) {
            let rel = if *f_cg == 0.0 { r.f.abs() } else { (r.f - f_cg).abs() / f_cg.abs() };
            assert!(rel < 1e-6, "seed {seed} k={} engine {} cg {} rel {rel:e}", r.k, r.f, f_cg);
        }
    }
}

fn policies(d: usize) -> Vec<Box<dyn EvictionPolicy<f64>>> {
    vec![
        Box::new(Fifo),
        Box::new(RuleBased),
        Box::new(delta_select(d / 2, d).unwrap()),
        Box::new(Learned::sampling(MetaPolicy::for_subspace(d, 5, false, 3), 11)),
        Box::new(Learned::greedy(MetaPolicy::for_subspace(d, 5, false, 4))),
    ]
}

fn check_run<O: Objective<f64>>(mut oracle: Oracle<f64, O>, x0: Vector<f64>, policy: &mut dyn EvictionPolicy<f64>, cfg: &EngineConfig<f64>) {
    let trace = mso_run(&mut oracle, x0, policy, cfg).unwrap();
    assert!(!matches!(trace.status, RunStatus::Failed(_) | RunStatus::Diverged), "{:?}", trace.status);
    assert_monotone(&trace);
    let mut prev = (0u64, 0u64);
    for r in &trace.records[1..] {
        let dg = r.grad_calls - prev.1;
        if prev != (0, 0) {
            assert!(dg as usize <= cfg.bfgs.max_iters + 1);
        }
        prev = (r.value_calls, r.grad_calls);
        assert_eq!(r.alpha.len(), cfg.alpha_width());
    }
    let warmup = cfg.d - 1;
    for (i, d) in trace.decisions.iter().enumerate() {
        assert_eq!(d.k, warmup + i);
        assert_eq!(d.state.slots_filled(), cfg.d - 1);
        assert!(d.action < cfg.d - 1);
    }
    if trace.optimizer == "fifo" {
        assert!(trace.decisions.iter().all(|d| d.action == 0));
    }
}

#[test]
fn every_policy_descends_monotonically() {
    let cfg = EngineConfig { max_outer_iters: 40, ..Default::default() };
    for mut p in policies(cfg.d) {
        let q = make_quadratic::<f64>(&QuadraticSpec { dim: 60, condition_number: 1e3, seed: 5 }).unwrap();
        check_run(Oracle::new(q), Vector::from_elem(60, 1.0), p.as_mut(), &cfg);

        let r = Rosenbrock::<f64>::classic(30).unwrap();
        check_run(Oracle::new(r), Vector::zeros(30), p.as_mut(), &cfg);

        let rr = RobustRegression::<f64>::from_seed(2);
        let n = rr.dim();
        check_run(Oracle::new(rr), Vector::zeros(n), p.as_mut(), &cfg);
    }
}

#[test]
fn alpha_history_tracks_evictions() {
    let q = make_quadratic::<f64>(&QuadraticSpec { dim: 30, condition_number: 50.0, seed: 2 }).unwrap();
    let mut oracle = Oracle::new(q);
    let cfg = EngineConfig { d: 4, h: 3, outer_grad_tol: 0.0, ..Default::default() };
    let mut run = MsoRun::new(&mut oracle, Vector::from_elem(30, 1.0), &cfg).unwrap();
    let mut policy = delta_select(1, 4).unwrap();
    let mut prev_hist: Option<Vec<f64>> = None;
    for k in 0..10 {
        let out = run.step(&mut policy).unwrap();
        let hist = run.state().alpha_history.clone();
        // after a step the newest slot column is zero in every lag
        let filled = hist.slots_filled();
        assert_eq!(filled, (k + 1).min(3));
        if let Some(d) = &out.decision {
            assert_eq!(d.action, 1);
            // row 0 of the decision state is the α just solved, step slots only
            assert_eq!(d.state.row(0), &out.alpha[..3]);
            let prev = prev_hist.as_ref().unwrap();
            // older rows are the previous rows shifted one lag
            for lag in 1..3 {
                assert_eq!(d.state.row(lag), &prev[(lag - 1) * 3..lag * 3]);
            }
            for lag in 0..3 {
                assert_eq!(hist.get(lag, 2), 0.0);
                assert_eq!(hist.get(lag, 0), d.state.get(lag, 0));
                assert_eq!(hist.get(lag, 1), d.state.get(lag, 2));
            }
        }
        prev_hist = Some(hist.flat().to_vec());
    }
}

#[test]
fn orth_only_has_no_memory() {
    let q = make_quadratic::<f64>(&QuadraticSpec { dim: 40, condition_number: 100.0, seed: 8 }).unwrap();
    let mut oracle = Oracle::new(q);
    let cfg = EngineConfig { d: 1, max_outer_iters: 25, ..Default::default() };
    let trace = mso_run(&mut oracle, Vector::from_elem(40, 1.0), &mut Fifo, &cfg).unwrap();
    assert!(trace.decisions.is_empty());
    assert_eq!(cfg.alpha_width(), 3);
    assert_monotone(&trace);
    assert!(trace.final_value() < trace.records[0].f);
}

#[test]
fn single_precision_run() {
    let q = make_quadratic::<f32>(&QuadraticSpec { dim: 30, condition_number: 100.0, seed: 4 }).unwrap();
    let mut oracle = Oracle::new(q);
    let cfg = EngineConfig::<f32> {
        max_outer_iters: 30,
        outer_grad_tol: 1e-4,
        bfgs: BfgsConfig { grad_tol: 1e-4, ..Default::default() },
        ..Default::default()
    };
    let trace = mso_run(&mut oracle, Vector::from_elem(30, 1.0f32), &mut RuleBased, &cfg).unwrap();
    assert!(trace.final_value() < trace.records[0].f);
    assert!(trace.records.iter().all(|r| r.f.is_finite()));
}

#[test]
fn csv_layout() {
    let q = make_quadratic::<f64>(&QuadraticSpec { dim: 20, condition_number: 10.0, seed: 0 }).unwrap();
    let mut oracle = Oracle::new(q);
    let cfg = EngineConfig { d: 3, max_outer_iters: 5, outer_grad_tol: 0.0, ..Default::default() };
    let trace = mso_run(&mut oracle, Vector::from_elem(20, 1.0), &mut RuleBased, &cfg).unwrap();
    let mut buf = Vec::new();
    trace.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "k,f,grad_norm,alpha_0,alpha_1,alpha_2,alpha_3,alpha_4,action,value_calls,grad_calls,prob_0,prob_1"
    );
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(first[0], "0");
    assert_eq!(first[8], "");
    assert_eq!(&first[9..11], &["1", "1"]);
    let rows: Vec<Vec<String>> = text.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 6);
    // warm-up: no eviction before the memory is full
    assert_eq!(rows[1][8], "");
    assert_eq!(rows[2][8], "");
    assert!(!rows[3][8].is_empty());
    let p: f64 = rows[3][11].parse::<f64>().unwrap() + rows[3][12].parse::<f64>().unwrap();
    assert_eq!(p, 1.0);
}
