//! SDCA training engines: sequential, wild asynchronous, statically
//! partitioned replicas, and dynamic hierarchical partitioning with
//! epoch-end reduction and convergence checking.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use rand_chacha::ChaCha8Rng;

use crate::data::{column_norms, ColumnView, Dataset};
use crate::metrics::{record_epoch, TrainReport};
use crate::objective::{self, CoordState, LossKind, Objective};
use crate::partition::{
    buckets_enabled, compute_bucket_size, shuffle, static_partition, stream_rng, BucketPlan,
    WorkQueue,
};
use crate::topology::{plan_threads, SystemTopology, ThreadPlan};
use crate::{Error, Result};

/// Bytes per model entry (f64); drives bucket sizing.
pub const MODEL_ENTRY_BYTES: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Engine {
    Sequential,
    Wild,
    StaticPartitioned,
    DynamicHierarchical,
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Engine::Sequential => "sequential",
            Engine::Wild => "wild",
            Engine::StaticPartitioned => "static",
            Engine::DynamicHierarchical => "dynamic",
        };
        f.write_str(s)
    }
}

impl FromStr for Engine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sequential" => Ok(Engine::Sequential),
            "wild" => Ok(Engine::Wild),
            "static" | "static_partitioned" => Ok(Engine::StaticPartitioned),
            "dynamic" | "dynamic_hierarchical" => Ok(Engine::DynamicHierarchical),
            other => Err(Error::InvalidConfig(format!(
                "unknown engine `{other}` (expected sequential|wild|static|dynamic)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BucketMode {
    /// Bucketing on iff the model vector does not fit in the LLC.
    Auto,
    On,
    Off,
    Fixed(usize),
}

impl FromStr for BucketMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(BucketMode::Auto),
            "on" => Ok(BucketMode::On),
            "off" => Ok(BucketMode::Off),
            other => other
                .parse::<usize>()
                .ok()
                .filter(|&v| v >= 1)
                .map(BucketMode::Fixed)
                .ok_or_else(|| {
                    Error::InvalidConfig(format!(
                        "unknown bucket mode `{other}` (expected auto|on|off|N)"
                    ))
                }),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolverConfig {
    pub engine: Engine,
    pub threads: usize,
    pub max_epochs: usize,
    /// Relative-change convergence threshold on alpha.
    pub tol: f64,
    pub objective: Objective,
    pub bucket_mode: BucketMode,
    /// Replica aggregation weight in (0, 1].
    pub gamma: f64,
    pub seed: u64,
    /// Cores per group, replacing the probed group layout when set.
    pub groups_override: Option<Vec<usize>>,
    /// Evaluate primal/dual/gap every epoch (costs a full data pass, timed
    /// separately from epoch time).
    pub eval_objective: bool,
    pub oversubscribe: bool,
}

impl SolverConfig {
    pub fn new(engine: Engine, objective: Objective) -> Self {
        SolverConfig {
            engine,
            threads: 1,
            max_epochs: 100,
            tol: 1e-3,
            objective,
            bucket_mode: BucketMode::Auto,
            gamma: 1.0,
            seed: 42,
            groups_override: None,
            eval_objective: false,
            oversubscribe: false,
        }
    }

    fn validate(&self, ds: &Dataset) -> Result<()> {
        if ds.n() == 0 {
            return Err(Error::InvalidData("dataset is empty".into()));
        }
        if self.threads < 1 {
            return Err(Error::InvalidConfig("threads must be >= 1".into()));
        }
        if self.max_epochs < 1 {
            return Err(Error::InvalidConfig("max_epochs must be >= 1".into()));
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(Error::InvalidConfig(format!("tol must be > 0, got {}", self.tol)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "gamma must be in (0, 1], got {}",
                self.gamma
            )));
        }
        if self.objective.kind == LossKind::Logistic {
            if let Some(y) = ds.labels().iter().find(|&&y| y != 1.0 && y != -1.0) {
                return Err(Error::InvalidData(format!(
                    "logistic labels must be -1 or +1, found {y}"
                )));
            }
        }
        Ok(())
    }
}

/// Dual coordinates plus the derived primal-scaled shared vector.
#[derive(Clone, Debug)]
pub struct Model {
    pub alpha: Vec<f64>,
    pub w: Vec<f64>,
}

impl Model {
    pub fn zeros(n: usize, d: usize) -> Self {
        Model {
            alpha: vec![0.0; n],
            w: vec![0.0; d],
        }
    }
}

/// Thread-local copy of the shared vector plus the updates it accumulated
/// this epoch.
#[derive(Clone, Debug)]
pub struct Replica {
    pub w_local: Vec<f64>,
    pub delta_w: Vec<f64>,
    pub owned_updates: Vec<(usize, f64)>,
}

impl Replica {
    pub fn new(w: &[f64]) -> Self {
        Replica {
            w_local: w.to_vec(),
            delta_w: vec![0.0; w.len()],
            owned_updates: Vec::new(),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn apply_update(
        &mut self,
        j: usize,
        ds: &Dataset,
        norms: &[f64],
        obj: &Objective,
        alpha_j: f64,
        inv_lambda_n: f64,
        sigma: f64,
    ) -> Result<()> {
        let col = ds.col(j);
        let state = CoordState {
            alpha_j,
            label_j: ds.label(j),
            dot_j: col.dot(&self.w_local),
            // sigma is the safe-adding correction: with K replicas whose
            // deltas are summed at full weight, each local subproblem must
            // penalize its step K times harder or the combined step can
            // overshoot and the iteration oscillates on correlated data.
            norm_sq_j: sigma * norms[j],
            n: ds.n(),
        };
        let delta = objective::coord_delta(obj, &state)?;
        let scale = delta * inv_lambda_n;
        // The same correction applies to this replica's own accumulated
        // updates: the local view weights them by sigma, while delta_w keeps
        // the unscaled contribution that the reduction actually merges.
        col.axpy(scale * sigma, &mut self.w_local);
        col.axpy(scale, &mut self.delta_w);
        self.owned_updates.push((j, delta));
        Ok(())
    }
}

/// Merge replica deltas into the global shared vector and dual coordinates
/// with aggregation weight `gamma`, then reset the replicas for the next
/// epoch. Each coordinate must have been updated by at most one replica.
pub fn reduce_replicas(w: &mut [f64], alpha: &mut [f64], replicas: &mut [Replica], gamma: f64) {
    #[cfg(debug_assertions)]
    {
        let mut seen = std::collections::HashSet::new();
        for r in replicas.iter() {
            for &(j, _) in &r.owned_updates {
                assert!(seen.insert(j), "coordinate {j} owned by two replicas");
            }
        }
    }
    if replicas.len() == 1 && gamma == 1.0 {
        // Single replica at full weight: the reduction is the identity, so
        // adopt its working copy verbatim instead of re-adding the deltas
        // (w + (d1 + d2) rounds differently from (w + d1) + d2, and this
        // path must reproduce the sequential trajectory bit for bit).
        w.copy_from_slice(&replicas[0].w_local);
        for &(j, delta) in &replicas[0].owned_updates {
            alpha[j] += delta;
        }
    } else {
        for r in replicas.iter_mut() {
            for (wi, di) in w.iter_mut().zip(&r.delta_w) {
                *wi += gamma * di;
            }
            for &(j, delta) in &r.owned_updates {
                alpha[j] += gamma * delta;
            }
        }
    }
    for r in replicas.iter_mut() {
        r.owned_updates.clear();
        r.delta_w.iter_mut().for_each(|x| *x = 0.0);
        r.w_local.copy_from_slice(w);
    }
}

/// Relative L2 change of the dual vector between epochs.
pub fn check_convergence(alpha_prev: &[f64], alpha_cur: &[f64], tol: f64) -> Result<(bool, f64)> {
    if alpha_prev.len() != alpha_cur.len() {
        return Err(Error::DimensionMismatch {
            expected: alpha_prev.len(),
            got: alpha_cur.len(),
        });
    }
    let diff_sq: f64 = alpha_prev
        .iter()
        .zip(alpha_cur)
        .map(|(a, b)| (b - a) * (b - a))
        .sum();
    let prev_sq: f64 = alpha_prev.iter().map(|a| a * a).sum();
    let rel_change = diff_sq.sqrt() / prev_sq.sqrt().max(1e-10);
    Ok((rel_change < tol, rel_change))
}

/// Coordinate visit order per epoch and worker thread, recorded by
/// [`train_traced`].
#[derive(Clone, Debug, Default)]
pub struct TraceLog {
    /// `epochs[e][t]` is the ordered list of coordinates thread `t` updated
    /// in epoch `e`.
    pub epochs: Vec<Vec<Vec<usize>>>,
}

pub fn train(ds: &Dataset, cfg: &SolverConfig, topo: &SystemTopology) -> Result<(Model, TrainReport)> {
    let (model, report, _) = train_impl(ds, cfg, topo, false)?;
    Ok((model, report))
}

/// Like [`train`] but additionally records coordinate visit traces.
pub fn train_traced(
    ds: &Dataset,
    cfg: &SolverConfig,
    topo: &SystemTopology,
) -> Result<(Model, TrainReport, TraceLog)> {
    train_impl(ds, cfg, topo, true)
}

fn resolve_bucket_size(cfg: &SolverConfig, topo: &SystemTopology, n: usize) -> Result<usize> {
    match cfg.bucket_mode {
        BucketMode::Off => Ok(1),
        BucketMode::Fixed(size) => Ok(size),
        BucketMode::On => compute_bucket_size(topo.cache_line_bytes, MODEL_ENTRY_BYTES),
        BucketMode::Auto => {
            if buckets_enabled(n, topo.llc_bytes, MODEL_ENTRY_BYTES) {
                compute_bucket_size(topo.cache_line_bytes, MODEL_ENTRY_BYTES)
            } else {
                Ok(1)
            }
        }
    }
}

/// Scheduling state for the partitioned engines, fixed at training start.
struct PartitionSchedule {
    groups: Vec<GroupSched>,
}

struct GroupSched {
    threads: usize,
    /// Bucket ids owned by this group (static split over groups at start).
    /// Shuffled in place every epoch in dynamic mode.
    buckets: Vec<usize>,
    /// One fixed bucket list per thread (static mode), each shuffled in
    /// place every epoch.
    static_lists: Vec<Vec<usize>>,
    /// Group shuffle stream (dynamic mode).
    rng: ChaCha8Rng,
    /// Per-thread shuffle streams (static mode), ids global across groups.
    thread_rngs: Vec<ChaCha8Rng>,
}

impl PartitionSchedule {
    fn new(plan: &ThreadPlan, num_buckets: usize, seed: u64) -> Self {
        let group_ranges = static_partition(num_buckets, plan.assignments.len());
        let mut groups = Vec::with_capacity(plan.assignments.len());
        let mut next_thread_id = 0u64;
        for (gi, (&(_, threads), range)) in plan.assignments.iter().zip(group_ranges).enumerate() {
            let buckets: Vec<usize> = range.collect();
            let static_lists: Vec<Vec<usize>> = static_partition(buckets.len(), threads)
                .into_iter()
                .map(|r| buckets[r].to_vec())
                .collect();
            let thread_rngs = (0..threads)
                .map(|t| stream_rng(seed, next_thread_id + t as u64))
                .collect();
            groups.push(GroupSched {
                threads,
                buckets,
                static_lists,
                rng: stream_rng(seed, gi as u64),
                thread_rngs,
            });
            next_thread_id += threads as u64;
        }
        PartitionSchedule { groups }
    }
}

fn train_impl(
    ds: &Dataset,
    cfg: &SolverConfig,
    topo: &SystemTopology,
    collect_trace: bool,
) -> Result<(Model, TrainReport, TraceLog)> {
    cfg.validate(ds)?;
    let topo = match &cfg.groups_override {
        Some(cores) => {
            let mut t = topo.clone();
            t.groups = cores
                .iter()
                .enumerate()
                .map(|(id, &c)| crate::topology::Group { id, cores: c.max(1) })
                .collect();
            t
        }
        None => topo.clone(),
    };

    let bucket_size = resolve_bucket_size(cfg, &topo, ds.n())?;
    let mut plan = BucketPlan::new(ds.n(), bucket_size)?;
    let norms = column_norms(ds);
    let inv_lambda_n = 1.0 / (cfg.objective.lambda * ds.n() as f64);

    let mut model = Model::zeros(ds.n(), ds.d());
    let mut report = TrainReport::new(cfg.clone(), topo.clone());
    let mut trace_log = TraceLog::default();

    // Engine-specific state, created once for the whole run.
    let mut shuffle_rng = stream_rng(cfg.seed, 0);
    let mut wild_w: Vec<AtomicU64> = Vec::new();
    let mut schedule: Option<PartitionSchedule> = None;
    match cfg.engine {
        Engine::Sequential => {}
        Engine::Wild => {
            wild_w = model.w.iter().map(|&x| AtomicU64::new(x.to_bits())).collect();
        }
        Engine::StaticPartitioned | Engine::DynamicHierarchical => {
            let tplan = plan_threads(cfg.threads, &topo, cfg.oversubscribe)?;
            schedule = Some(PartitionSchedule::new(&tplan, plan.num_buckets, cfg.seed));
        }
    }

    let mut alpha_prev = vec![0.0; ds.n()];
    let mut cumulative_s = 0.0;
    let mut primal_rises = 0u32;
    let mut last_primal = f64::INFINITY;

    for _epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        let traces = match cfg.engine {
            Engine::Sequential => epoch_sequential(
                ds,
                &norms,
                &cfg.objective,
                &mut plan,
                &mut shuffle_rng,
                &mut model,
                inv_lambda_n,
                collect_trace,
            )?,
            Engine::Wild => epoch_wild(
                ds,
                &norms,
                &cfg.objective,
                &mut plan,
                &mut shuffle_rng,
                &mut model,
                &wild_w,
                cfg.threads,
                inv_lambda_n,
                collect_trace,
            )?,
            Engine::StaticPartitioned | Engine::DynamicHierarchical => epoch_partitioned(
                ds,
                &norms,
                &cfg.objective,
                &plan,
                schedule.as_mut().expect("schedule built above"),
                cfg.engine == Engine::DynamicHierarchical,
                &mut model,
                cfg.gamma,
                inv_lambda_n,
                collect_trace,
            )?,
        };
        cumulative_s += started.elapsed().as_secs_f64();

        if cfg.engine != Engine::Wild {
            if let Some(bad) = model.w.iter().find(|x| !x.is_finite()) {
                return Err(Error::InvalidData(format!(
                    "shared vector became non-finite ({bad}); try a smaller gamma or lambda"
                )));
            }
        }

        if collect_trace {
            trace_log.epochs.push(traces);
        }

        let (converged, rel_change) = check_convergence(&alpha_prev, &model.alpha, cfg.tol)?;
        alpha_prev.copy_from_slice(&model.alpha);

        // Objective evaluation runs on its own clock inside record_epoch and
        // never counts towards epoch time.
        record_epoch(
            &mut report,
            cumulative_s,
            &model,
            ds,
            &cfg.objective,
            rel_change,
            converged,
            cfg.eval_objective,
        )?;

        if cfg.eval_objective {
            let primal = report.epochs.last().expect("just recorded").primal;
            if primal > last_primal {
                primal_rises += 1;
                if primal_rises == 3 {
                    log::warn!(
                        "primal objective increased 3 epochs in a row; \
                         consider a smaller --gamma"
                    );
                }
            } else {
                primal_rises = 0;
            }
            last_primal = primal;
        }

        if converged {
            break;
        }
    }

    Ok((model, report, trace_log))
}

#[allow(clippy::too_many_arguments)]
fn epoch_sequential(
    ds: &Dataset,
    norms: &[f64],
    obj: &Objective,
    plan: &mut BucketPlan,
    rng: &mut ChaCha8Rng,
    model: &mut Model,
    inv_lambda_n: f64,
    collect_trace: bool,
) -> Result<Vec<Vec<usize>>> {
    shuffle(&mut plan.order, rng);
    let mut trace = Vec::new();
    for &b in &plan.order {
        for j in plan.bucket_range(b) {
            let col = ds.col(j);
            let state = CoordState {
                alpha_j: model.alpha[j],
                label_j: ds.label(j),
                dot_j: col.dot(&model.w),
                norm_sq_j: norms[j],
                n: ds.n(),
            };
            let delta = objective::coord_delta(obj, &state)?;
            model.alpha[j] += delta;
            col.axpy(delta * inv_lambda_n, &mut model.w);
            if collect_trace {
                trace.push(j);
            }
        }
    }
    Ok(vec![trace])
}

fn atomic_dot(col: &ColumnView<'_>, w: &[AtomicU64]) -> f64 {
    let load = |wi: &AtomicU64| f64::from_bits(wi.load(Ordering::Relaxed));
    match col {
        ColumnView::Dense(vals) => vals.iter().zip(w).map(|(x, wi)| x * load(wi)).sum(),
        ColumnView::Sparse(entries) => entries.iter().map(|&(i, x)| x * load(&w[i])).sum(),
    }
}

/// Element-granularity add with relaxed ordering and no mutual exclusion:
/// values are never torn, but a racing add may be lost.
fn atomic_axpy_racy(col: &ColumnView<'_>, scale: f64, w: &[AtomicU64]) {
    let add = |wi: &AtomicU64, v: f64| {
        let cur = f64::from_bits(wi.load(Ordering::Relaxed));
        wi.store((cur + v).to_bits(), Ordering::Relaxed);
    };
    match col {
        ColumnView::Dense(vals) => {
            for (wi, x) in w.iter().zip(*vals) {
                add(wi, scale * x);
            }
        }
        ColumnView::Sparse(entries) => {
            for &(i, x) in *entries {
                add(&w[i], scale * x);
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn epoch_wild(
    ds: &Dataset,
    norms: &[f64],
    obj: &Objective,
    plan: &mut BucketPlan,
    rng: &mut ChaCha8Rng,
    model: &mut Model,
    w_shared: &[AtomicU64],
    threads: usize,
    inv_lambda_n: f64,
    collect_trace: bool,
) -> Result<Vec<Vec<usize>>> {
    shuffle(&mut plan.order, rng);
    let ranges = static_partition(plan.num_buckets, threads);
    let order = &plan.order;
    let alpha = &model.alpha;
    let plan_ref = &*plan;

    type WildOut = Result<(Vec<(usize, f64)>, Vec<usize>)>;
    let outcomes: Vec<WildOut> = std::thread::scope(|scope| {
        let handles: Vec<_> = ranges
            .into_iter()
            .map(|range| {
                scope.spawn(move || -> WildOut {
                    let mut updates = Vec::new();
                    let mut trace = Vec::new();
                    for &b in &order[range] {
                        for j in plan_ref.bucket_range(b) {
                            let col = ds.col(j);
                            let state = CoordState {
                                alpha_j: alpha[j],
                                label_j: ds.label(j),
                                dot_j: atomic_dot(&col, w_shared),
                                norm_sq_j: norms[j],
                                n: ds.n(),
                            };
                            let delta = objective::coord_delta(obj, &state)?;
                            updates.push((j, delta));
                            atomic_axpy_racy(&col, delta * inv_lambda_n, w_shared);
                            if collect_trace {
                                trace.push(j);
                            }
                        }
                    }
                    Ok((updates, trace))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });

    let mut traces = Vec::new();
    for outcome in outcomes {
        let (updates, trace) = outcome?;
        for (j, delta) in updates {
            model.alpha[j] += delta;
        }
        traces.push(trace);
    }
    for (wi, shared) in model.w.iter_mut().zip(w_shared) {
        *wi = f64::from_bits(shared.load(Ordering::Relaxed));
    }
    Ok(traces)
}

#[allow(clippy::too_many_arguments)]
fn epoch_partitioned(
    ds: &Dataset,
    norms: &[f64],
    obj: &Objective,
    plan: &BucketPlan,
    sched: &mut PartitionSchedule,
    dynamic: bool,
    model: &mut Model,
    gamma: f64,
    inv_lambda_n: f64,
    collect_trace: bool,
) -> Result<Vec<Vec<usize>>> {
    // All shuffling runs single-threaded between epochs.
    for group in sched.groups.iter_mut() {
        if dynamic {
            shuffle(&mut group.buckets, &mut group.rng);
        } else {
            for (list, rng) in group.static_lists.iter_mut().zip(&mut group.thread_rngs) {
                shuffle(list, rng);
            }
        }
    }

    let queues: Vec<WorkQueue<'_>> = sched
        .groups
        .iter()
        .map(|g| WorkQueue::new(&g.buckets))
        .collect();
    let alpha = &model.alpha;
    let w0 = &model.w;
    let sigma = sched.groups.iter().map(|g| g.threads).sum::<usize>() as f64;

    type PartOut = Result<(Replica, Vec<usize>)>;
    let outcomes: Vec<Vec<PartOut>> = std::thread::scope(|scope| {
        let mut group_handles = Vec::new();
        for (group, queue) in sched.groups.iter().zip(&queues) {
            let handles: Vec<_> = (0..group.threads)
                .map(|t| {
                    let static_list = &group.static_lists[t];
                    scope.spawn(move || -> PartOut {
                        let mut replica = Replica::new(w0);
                        let mut trace = Vec::new();
                        let mut work = |j: usize, replica: &mut Replica| -> Result<()> {
                            replica.apply_update(j, ds, norms, obj, alpha[j], inv_lambda_n, sigma)?;
                            if collect_trace {
                                trace.push(j);
                            }
                            Ok(())
                        };
                        if dynamic {
                            while let Some(b) = queue.claim_next() {
                                for j in plan.bucket_range(b) {
                                    work(j, &mut replica)?;
                                }
                            }
                        } else {
                            for &b in static_list {
                                for j in plan.bucket_range(b) {
                                    work(j, &mut replica)?;
                                }
                            }
                        }
                        Ok((replica, trace))
                    })
                })
                .collect();
            group_handles.push(handles);
        }
        group_handles
            .into_iter()
            .map(|handles| {
                handles
                    .into_iter()
                    .map(|h| h.join().expect("worker panicked"))
                    .collect()
            })
            .collect()
    });

    let multi_group = sched.groups.len() > 1;
    let mut traces = Vec::new();
    if multi_group {
        // Two-level reduction: thread replicas fold into a per-group replica
        // with weight gamma, group replicas fold into the global model with
        // weight gamma.
        let mut group_replicas = Vec::with_capacity(outcomes.len());
        for group_out in outcomes {
            let mut merged = Replica::new(&vec![0.0; ds.d()]);
            for outcome in group_out {
                let (replica, trace) = outcome?;
                for (mi, di) in merged.delta_w.iter_mut().zip(&replica.delta_w) {
                    *mi += gamma * di;
                }
                merged
                    .owned_updates
                    .extend(replica.owned_updates.iter().map(|&(j, d)| (j, gamma * d)));
                traces.push(trace);
            }
            group_replicas.push(merged);
        }
        reduce_replicas(&mut model.w, &mut model.alpha, &mut group_replicas, gamma);
    } else {
        let mut replicas = Vec::new();
        for outcome in outcomes.into_iter().flatten() {
            let (replica, trace) = outcome?;
            replicas.push(replica);
            traces.push(trace);
        }
        reduce_replicas(&mut model.w, &mut model.alpha, &mut replicas, gamma);
    }
    Ok(traces)
}
