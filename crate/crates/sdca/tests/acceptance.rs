//! End-to-end acceptance checks: solver-vs-oracle equivalence, engine
//! agreement, determinism, coverage, bucketing mechanics, scaling, and
//! duality-gap sanity. Each test prints one `ACCEPTANCE <n> ...: PASS` line
//! when it succeeds.

mod common;

use rand::Rng;

use common::{grid_golden_min, median, rel_l2_error, ridge_closed_form};
use sdca::data::{generate_synthetic, split, SyntheticSpec, Task};
use sdca::metrics::evaluate_test_loss;
use sdca::objective::{self, CoordState, LossKind, Objective};
use sdca::partition::{buckets_enabled, compute_bucket_size, stream_rng, WorkQueue};
use sdca::solver::{train, train_traced, BucketMode, Engine, SolverConfig};
use sdca::topology::{probe, SystemTopology, TopologyOverrides};

fn topo_with(groups: Vec<usize>, cache_line: usize, llc_bytes: Option<usize>) -> SystemTopology {
    probe(&TopologyOverrides {
        cache_line: Some(cache_line),
        llc_bytes,
        groups: Some(groups),
        data_group: None,
    })
}

fn dense(n: usize, d: usize, task: Task, seed: u64) -> sdca::data::Dataset {
    generate_synthetic(
        &SyntheticSpec {
            n,
            d,
            sparsity: 1.0,
            noise_sigma: 0.1,
            task,
        },
        seed,
    )
    .unwrap()
}

#[test]
fn acceptance_1_ridge_oracle_equivalence() {
    let ds = dense(50, 10, Task::Regression, 1234);
    let lambda = 0.1;
    let mut cfg = SolverConfig::new(
        Engine::Sequential,
        Objective::new(LossKind::Ridge, lambda).unwrap(),
    );
    cfg.max_epochs = 500;
    cfg.tol = 1e-15;
    let started = std::time::Instant::now();
    let (model, _) = train(&ds, &cfg, &topo_with(vec![8], 64, None)).unwrap();
    let elapsed = started.elapsed().as_secs_f64();

    let w_star = ridge_closed_form(&ds, lambda);
    let err = rel_l2_error(&model.w, &w_star);
    assert!(err < 1e-4, "relative L2 error {err} vs closed form");
    assert!(elapsed < 1.0, "took {elapsed}s, budget 1s");
    println!("ACCEPTANCE 1 ridge oracle equivalence: PASS (rel err {err:.2e}, {elapsed:.2}s)");
}

#[test]
fn acceptance_2_subproblem_oracle() {
    const GRID: usize = 1_000_000;
    let mut rng = stream_rng(99, 0);
    let mut worst_ridge = 0.0f64;
    let mut worst_logistic = 0.0f64;

    for _ in 0..1000 {
        let lambda = 10f64.powf(rng.random_range(-2.0..1.0));
        let n = rng.random_range(1..1000usize);
        let q_denom = lambda * n as f64;
        let obj = Objective::new(LossKind::Ridge, lambda).unwrap();
        let s = CoordState {
            alpha_j: rng.random_range(-3.0..3.0),
            label_j: rng.random_range(-2.0..2.0),
            dot_j: rng.random_range(-5.0..5.0),
            norm_sq_j: rng.random_range(0.0..10.0),
            n,
        };
        let got = objective::coord_delta(&obj, &s).unwrap();
        // coordinate objective: h(delta) = (alpha - y + dot)·delta
        //                                + delta^2 (1 + |x|^2/(lambda n)) / 2
        let q = s.norm_sq_j / q_denom;
        let h = |delta: f64| {
            (s.alpha_j - s.label_j + s.dot_j) * delta + 0.5 * delta * delta * (1.0 + q)
        };
        let bound = s.label_j.abs() + s.alpha_j.abs() + s.dot_j.abs() + 1.0;
        let want = grid_golden_min(h, -bound, bound, GRID);
        worst_ridge = worst_ridge.max((got - want).abs());
    }

    for _ in 0..1000 {
        let lambda = 10f64.powf(rng.random_range(-2.0..1.0));
        let n = rng.random_range(1..1000usize);
        let obj = Objective::new(LossKind::Logistic, lambda).unwrap();
        let y: f64 = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let a0: f64 = rng.random_range(0.0..1.0);
        let s = CoordState {
            alpha_j: y * a0,
            label_j: y,
            dot_j: rng.random_range(-5.0..5.0),
            norm_sq_j: rng.random_range(0.0..10.0),
            n,
        };
        let got = objective::coord_delta(&obj, &s).unwrap();
        // In terms of a = y(alpha + delta) in (0,1):
        // h(a) = a ln a + (1-a) ln(1-a) + y·dot·(a - a0) + q (a - a0)^2 / 2
        let q = s.norm_sq_j / (lambda * n as f64);
        let h = |a: f64| {
            let ent = a * a.ln() + (1.0 - a) * (1.0 - a).ln();
            ent + y * s.dot_j * (a - a0) + 0.5 * q * (a - a0) * (a - a0)
        };
        let a_star = grid_golden_min(h, 1e-12, 1.0 - 1e-12, GRID);
        let want = y * (a_star - a0);
        worst_logistic = worst_logistic.max((got - want).abs());
    }

    assert!(worst_ridge < 1e-6, "ridge worst abs error {worst_ridge}");
    assert!(worst_logistic < 1e-6, "logistic worst abs error {worst_logistic}");
    println!(
        "ACCEPTANCE 2 subproblem oracle: PASS (worst ridge {worst_ridge:.2e}, \
         worst logistic {worst_logistic:.2e})"
    );
}

#[test]
fn acceptance_3_engine_agreement() {
    let full = dense(20_000, 100, Task::Classification, 7);
    let (train_set, test_set) = split(&full, 0.2, 7).unwrap();
    let obj = Objective::new(LossKind::Logistic, 1e-3).unwrap();
    let topo = topo_with(vec![8], 64, None);

    let mut losses = Vec::new();
    for (engine, threads) in [
        (Engine::Sequential, 1),
        (Engine::StaticPartitioned, 4),
        (Engine::DynamicHierarchical, 4),
    ] {
        let mut cfg = SolverConfig::new(engine, obj);
        cfg.threads = threads;
        cfg.max_epochs = 500;
        cfg.tol = 1e-3;
        let (model, report) = train(&train_set, &cfg, &topo).unwrap();
        assert!(report.converged(), "{engine} did not converge in 500 epochs");
        losses.push(evaluate_test_loss(&model.w, &test_set, &obj).unwrap());
    }
    let spread = losses.iter().fold(f64::MIN, |m, &x| m.max(x))
        - losses.iter().fold(f64::MAX, |m, &x| m.min(x));
    assert!(spread < 5e-3, "test losses {losses:?} spread {spread}");
    println!("ACCEPTANCE 3 engine agreement: PASS (test losses {losses:?})");
}

#[test]
fn acceptance_4_single_thread_degeneracy() {
    let ds = dense(500, 20, Task::Classification, 21);
    let topo = topo_with(vec![8], 64, None);
    let mut seq = SolverConfig::new(
        Engine::Sequential,
        Objective::new(LossKind::Logistic, 0.01).unwrap(),
    );
    seq.max_epochs = 10;
    seq.tol = 1e-15;
    seq.bucket_mode = BucketMode::Fixed(8);
    let (m_seq, _) = train(&ds, &seq, &topo).unwrap();

    let mut wild = seq.clone();
    wild.engine = Engine::Wild;
    wild.threads = 1;
    let (m_wild, _) = train(&ds, &wild, &topo).unwrap();
    assert_eq!(m_seq.alpha, m_wild.alpha, "wild(1) alpha differs");

    let mut dynamic = seq.clone();
    dynamic.engine = Engine::DynamicHierarchical;
    dynamic.threads = 1;
    dynamic.gamma = 1.0;
    let (m_dyn, _) = train(&ds, &dynamic, &topo).unwrap();
    assert_eq!(m_seq.alpha, m_dyn.alpha, "dynamic(1) alpha differs");

    println!("ACCEPTANCE 4 single-thread degeneracy: PASS (bit-identical alpha)");
}

#[test]
fn acceptance_5_partition_count_trend() {
    let ds = dense(20_000, 100, Task::Classification, 11);
    let obj = Objective::new(LossKind::Logistic, 1e-3).unwrap();
    let topo = topo_with(vec![16], 64, None);
    let seeds = [1u64, 2, 3, 4, 5];

    let median_epochs = |engine: Engine, threads: usize| -> f64 {
        let mut counts = Vec::new();
        for &seed in &seeds {
            let mut cfg = SolverConfig::new(engine, obj);
            cfg.threads = threads;
            cfg.max_epochs = 500;
            cfg.tol = 1e-3;
            cfg.seed = seed;
            let (_, report) = train(&ds, &cfg, &topo).unwrap();
            assert!(report.converged(), "{engine} x{threads} seed {seed} not converged");
            counts.push(report.epochs.len() as f64);
        }
        median(&mut counts)
    };

    let static_1 = median_epochs(Engine::StaticPartitioned, 1);
    let static_4 = median_epochs(Engine::StaticPartitioned, 4);
    let static_16 = median_epochs(Engine::StaticPartitioned, 16);
    assert!(
        static_1 <= static_4 && static_4 <= static_16,
        "median epochs not non-decreasing: {static_1} -> {static_4} -> {static_16}"
    );

    let static_8 = median_epochs(Engine::StaticPartitioned, 8);
    let dynamic_8 = median_epochs(Engine::DynamicHierarchical, 8);
    assert!(
        dynamic_8 <= static_8,
        "dynamic(8) median {dynamic_8} > static(8) median {static_8}"
    );
    println!(
        "ACCEPTANCE 5 partition-count trend: PASS (static 1/4/16 -> \
         {static_1}/{static_4}/{static_16} epochs, dynamic(8) {dynamic_8} <= static(8) {static_8})"
    );
}

#[test]
fn acceptance_6_exactly_once_coverage() {
    let ds = dense(1000, 10, Task::Classification, 31);
    let topo = topo_with(vec![8], 64, None);
    for engine in [
        Engine::Sequential,
        Engine::Wild,
        Engine::StaticPartitioned,
        Engine::DynamicHierarchical,
    ] {
        for threads in [1usize, 2, 4, 8] {
            if engine == Engine::Sequential && threads > 1 {
                continue;
            }
            let mut cfg = SolverConfig::new(
                engine,
                Objective::new(LossKind::Logistic, 0.01).unwrap(),
            );
            cfg.threads = threads;
            cfg.max_epochs = 3;
            cfg.tol = 1e-15;
            cfg.bucket_mode = BucketMode::Fixed(8);
            let (_, _, trace) = train_traced(&ds, &cfg, &topo).unwrap();
            assert_eq!(trace.epochs.len(), 3);
            for epoch in &trace.epochs {
                let mut visited: Vec<usize> = epoch.iter().flatten().copied().collect();
                visited.sort_unstable();
                assert_eq!(
                    visited,
                    (0..ds.n()).collect::<Vec<_>>(),
                    "{engine} x{threads}: coverage violated"
                );
            }
        }
    }

    // claim stress: 10 000 buckets, 8 threads, each bucket exactly once
    let order: Vec<usize> = (0..10_000).collect();
    for _ in 0..100 {
        let q = WorkQueue::new(&order);
        let claimed: Vec<Vec<usize>> = std::thread::scope(|s| {
            (0..8)
                .map(|_| {
                    s.spawn(|| {
                        let mut mine = Vec::new();
                        while let Some(b) = q.claim_next() {
                            mine.push(b);
                        }
                        mine
                    })
                })
                .collect::<Vec<_>>()
                .into_iter()
                .map(|h| h.join().unwrap())
                .collect()
        });
        let mut all: Vec<usize> = claimed.into_iter().flatten().collect();
        all.sort_unstable();
        assert_eq!(all, order, "claim_next handed out a bucket twice or never");
    }
    println!("ACCEPTANCE 6 exactly-once coverage: PASS");
}

#[test]
fn acceptance_7_bucket_mechanics() {
    assert_eq!(compute_bucket_size(64, 8).unwrap(), 8);

    // consecutive visits inside each bucket, all engines, forced bucketing
    let ds = dense(1600, 10, Task::Classification, 41);
    let topo = topo_with(vec![8], 64, None);
    for (engine, threads) in [
        (Engine::Sequential, 1),
        (Engine::Wild, 4),
        (Engine::StaticPartitioned, 4),
        (Engine::DynamicHierarchical, 4),
    ] {
        let mut cfg = SolverConfig::new(
            engine,
            Objective::new(LossKind::Logistic, 0.01).unwrap(),
        );
        cfg.threads = threads;
        cfg.max_epochs = 2;
        cfg.tol = 1e-15;
        cfg.bucket_mode = BucketMode::On; // resolves to 64/8 = 8
        let (_, _, trace) = train_traced(&ds, &cfg, &topo).unwrap();
        for epoch in &trace.epochs {
            for thread_trace in epoch {
                assert_eq!(thread_trace.len() % 8, 0, "{engine}: partial bucket visit");
                for bucket in thread_trace.chunks(8) {
                    for pair in bucket.windows(2) {
                        assert_eq!(
                            pair[1],
                            pair[0] + 1,
                            "{engine}: non-consecutive visit inside a bucket"
                        );
                    }
                    assert_eq!(bucket[0] % 8, 0, "{engine}: bucket not aligned");
                }
            }
        }
    }

    // enablement threshold, explicit LLC and fallback
    let llc = 4 * 1024 * 1024;
    assert!(!buckets_enabled(llc / 8, Some(llc), 8));
    assert!(buckets_enabled(llc / 8 + 1, Some(llc), 8));
    assert!(!buckets_enabled(500_000, None, 8));
    assert!(buckets_enabled(500_001, None, 8));
    println!("ACCEPTANCE 7 bucket mechanics: PASS");
}

/// Best-effort scaling measurement; informational on machines with < 4
/// cores, asserted nowhere either way (paper-scale hardware only).
#[test]
fn acceptance_8_per_epoch_scaling() {
    let cores = std::thread::available_parallelism().map_or(1, |c| c.get());
    let ds = dense(200_000, 100, Task::Classification, 51);
    let obj = Objective::new(LossKind::Logistic, 1e-3).unwrap();
    let topo = topo_with(vec![cores.max(4)], 64, None);

    let per_epoch = |threads: usize| -> f64 {
        let mut cfg = SolverConfig::new(Engine::DynamicHierarchical, obj);
        cfg.threads = threads;
        cfg.max_epochs = 3;
        cfg.tol = 1e-15;
        let (_, report) = train(&ds, &cfg, &topo).unwrap();
        report.total_time_s() / report.epochs.len() as f64
    };
    let t1 = per_epoch(1);
    let t4 = per_epoch(4);
    let ratio = t4 / t1;
    let verdict = if cores < 4 {
        format!("SKIPPED assertion ({cores} cores < 4)")
    } else if ratio <= 0.6 {
        "PASS".to_string()
    } else {
        "MISSED 0.6x target (best-effort, not gated)".to_string()
    };
    println!(
        "ACCEPTANCE 8 per-epoch scaling: {verdict} \
         (1 thread {t1:.4}s/epoch, 4 threads {t4:.4}s/epoch, ratio {ratio:.2}, {cores} cores)"
    );
}

#[test]
fn acceptance_9_duality_gap_sanity() {
    let ds = dense(5000, 50, Task::Classification, 61);
    let obj = Objective::new(LossKind::Logistic, 0.01).unwrap();

    // gap at the zero model is exactly ln 2
    let w0 = vec![0.0; ds.d()];
    let alpha0 = vec![0.0; ds.n()];
    let gap0 = objective::primal_value(&w0, &ds, &obj).unwrap()
        - objective::dual_value(&alpha0, &w0, &ds, &obj).unwrap();
    assert!(
        (gap0 - std::f64::consts::LN_2).abs() < 1e-12,
        "gap at zero: {gap0}"
    );

    let mut cfg = SolverConfig::new(Engine::Sequential, obj);
    cfg.max_epochs = 30;
    cfg.tol = 1e-15;
    cfg.eval_objective = true;
    let (_, report) = train(&ds, &cfg, &topo_with(vec![8], 64, None)).unwrap();
    let gaps: Vec<f64> = report.epochs.iter().map(|r| r.gap).collect();
    for pair in gaps.windows(2) {
        assert!(
            pair[1] <= pair[0] + 1e-9,
            "gap increased: {} -> {}",
            pair[0],
            pair[1]
        );
    }
    println!(
        "ACCEPTANCE 9 duality-gap sanity: PASS (gap(0) = ln 2, gap fell {:.2e} -> {:.2e})",
        gaps[0],
        gaps.last().unwrap()
    );
}
