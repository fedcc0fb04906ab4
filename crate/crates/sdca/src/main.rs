//! Command-line front end: synthetic dataset generation, training with any
//! of the four engines, and scripted benchmark sweeps.
//!
//! Exit codes: 0 converged (or nothing to converge), 1 usage/input error,
//! 2 ran to max_epochs without converging.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sdca::data::{self, Dataset, StorageKind, SyntheticSpec, Task};
use sdca::metrics::{self, evaluate_test_loss};
use sdca::objective::{LossKind, Objective};
use sdca::solver::{train, BucketMode, Engine, SolverConfig};
use sdca::topology::{probe, TopologyOverrides};

const EXIT_NOT_CONVERGED: u8 = 2;

#[derive(Parser)]
#[command(name = "sdca", version, about = "Parallel dual coordinate ascent for linear models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and write it to disk.
    Generate(GenerateArgs),
    /// Train a model on a dataset and emit per-epoch CSV.
    Train(TrainArgs),
    /// Run a training sweep over engines x threads x seeds.
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Number of examples.
    #[arg(long)]
    n: usize,
    /// Number of features.
    #[arg(long)]
    d: usize,
    /// Fraction of nonzero features per example; 1.0 means dense.
    #[arg(long, default_value_t = 1.0)]
    sparsity: f64,
    /// Standard deviation of the label noise.
    #[arg(long, default_value_t = 0.1)]
    noise_sigma: f64,
    /// Label model: classification gives -1/+1 labels, regression real ones.
    #[arg(long, default_value = "classification", value_parser = parse_task)]
    task: Task,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output format: `bin` (dense binary) or `libsvm` (sparse text).
    #[arg(long, default_value = "bin", value_parser = parse_format)]
    format: StorageKind,
    /// Output path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct SolverFlags {
    #[arg(long, default_value = "sequential", value_parser = clap::value_parser!(Engine))]
    engine: Engine,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long, default_value = "logistic", value_parser = parse_loss)]
    objective: LossKind,
    /// Regularization strength (must be > 0).
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Convergence threshold on the relative change of the dual vector.
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
    #[arg(long, default_value_t = 100)]
    max_epochs: usize,
    /// Bucketing: auto (on iff model exceeds LLC), on, off, or explicit size.
    #[arg(long, default_value = "auto", value_parser = clap::value_parser!(BucketMode))]
    bucket: BucketMode,
    /// Replica aggregation weight in (0, 1].
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Override the probed core groups, as cores per group, e.g. `8,8`.
    #[arg(long, value_delimiter = ',')]
    groups: Option<Vec<usize>>,
    /// Override the probed cache line size in bytes.
    #[arg(long)]
    cache_line: Option<usize>,
    /// Override the probed last-level cache size in bytes.
    #[arg(long)]
    llc_bytes: Option<usize>,
    /// Group holding the data, preferred when placing threads.
    #[arg(long)]
    data_group: Option<usize>,
    /// Compute primal/dual/gap every epoch (costs an extra data pass).
    #[arg(long)]
    eval_objective: bool,
    /// Hold out this fraction of examples and report their final loss.
    #[arg(long, default_value_t = 0.0)]
    test_fraction: f64,
    /// Allow more threads than cores.
    #[arg(long)]
    oversubscribe: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset file; format is sniffed (binary magic vs LibSVM text).
    dataset: PathBuf,
    #[command(flatten)]
    solver: SolverFlags,
    /// Write the per-epoch CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Dataset file; omit to use a synthetic problem (--n/--d/--sparsity).
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, default_value_t = 20_000)]
    n: usize,
    #[arg(long, default_value_t = 100)]
    d: usize,
    #[arg(long, default_value_t = 1.0)]
    sparsity: f64,
    /// Engines to sweep.
    #[arg(long, value_delimiter = ',', default_value = "sequential,dynamic")]
    engines: Vec<Engine>,
    /// Thread counts to sweep.
    #[arg(long = "threads", value_delimiter = ',', default_value = "1")]
    thread_counts: Vec<usize>,
    /// Seeds to sweep; medians are reported over these.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    seeds: Vec<u64>,
    #[arg(long, default_value = "logistic", value_parser = parse_loss)]
    objective: LossKind,
    #[arg(long, default_value_t = 1e-3)]
    lambda: f64,
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
    #[arg(long, default_value_t = 500)]
    max_epochs: usize,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long, default_value = "auto", value_parser = clap::value_parser!(BucketMode))]
    bucket: BucketMode,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    #[arg(long, value_delimiter = ',')]
    groups: Option<Vec<usize>>,
    #[arg(long)]
    cache_line: Option<usize>,
    #[arg(long)]
    llc_bytes: Option<usize>,
    #[arg(long)]
    oversubscribe: bool,
    /// Write the per-cell CSV here; medians then go to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_task(s: &str) -> Result<Task, String> {
    match s {
        "classification" => Ok(Task::Classification),
        "regression" => Ok(Task::Regression),
        _ => Err(format!("unknown task `{s}` (expected classification|regression)")),
    }
}

fn parse_format(s: &str) -> Result<StorageKind, String> {
    match s {
        "bin" => Ok(StorageKind::Dense),
        "libsvm" => Ok(StorageKind::Sparse),
        _ => Err(format!("unknown format `{s}` (expected bin|libsvm)")),
    }
}

fn parse_loss(s: &str) -> Result<LossKind, String> {
    match s {
        "logistic" => Ok(LossKind::Logistic),
        "ridge" => Ok(LossKind::Ridge),
        _ => Err(format!("unknown objective `{s}` (expected logistic|ridge)")),
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Train(args) => cmd_train(args),
        Command::Bench(args) => cmd_bench(args),
    };
    match outcome {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}

fn cmd_generate(args: GenerateArgs) -> sdca::Result<ExitCode> {
    let spec = SyntheticSpec {
        n: args.n,
        d: args.d,
        sparsity: args.sparsity,
        noise_sigma: args.noise_sigma,
        task: args.task,
    };
    let ds = data::generate_synthetic(&spec, args.seed)?;
    match args.format {
        StorageKind::Dense => data::write_binary(&ds, &args.out)?,
        StorageKind::Sparse => data::write_libsvm(&ds, &args.out)?,
    }
    println!(
        "wrote {}: n={} d={} nnz={}",
        args.out.display(),
        ds.n(),
        ds.d(),
        ds.nnz()
    );
    Ok(ExitCode::SUCCESS)
}

/// Binary datasets start with the `GLMD` magic; everything else is LibSVM.
fn load_dataset(path: &Path) -> sdca::Result<Dataset> {
    let mut magic = [0u8; 4];
    let read = File::open(path)
        .and_then(|mut f| f.read(&mut magic))
        .map_err(|e| sdca::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
    if read == 4 && &magic == b"GLMD" {
        data::load_binary(path)
    } else {
        data::load_libsvm(path, None)
    }
}

fn solver_config(flags: &SolverFlags) -> sdca::Result<SolverConfig> {
    let objective = Objective::new(flags.objective, flags.lambda)?;
    let mut cfg = SolverConfig::new(flags.engine, objective);
    cfg.threads = flags.threads;
    cfg.max_epochs = flags.max_epochs;
    cfg.tol = flags.tol;
    cfg.bucket_mode = flags.bucket;
    cfg.gamma = flags.gamma;
    cfg.seed = flags.seed;
    cfg.eval_objective = flags.eval_objective;
    cfg.oversubscribe = flags.oversubscribe;
    Ok(cfg)
}

fn cmd_train(args: TrainArgs) -> sdca::Result<ExitCode> {
    let flags = &args.solver;
    if !(0.0..1.0).contains(&flags.test_fraction) {
        return Err(sdca::Error::InvalidConfig(format!(
            "test fraction must be in [0, 1), got {}",
            flags.test_fraction
        )));
    }
    let load_started = std::time::Instant::now();
    let full = load_dataset(&args.dataset)?;
    eprintln!(
        "loaded {}: n={} d={} nnz={} in {:.3}s",
        args.dataset.display(),
        full.n(),
        full.d(),
        full.nnz(),
        load_started.elapsed().as_secs_f64()
    );

    let topo = probe(&TopologyOverrides {
        cache_line: flags.cache_line,
        llc_bytes: flags.llc_bytes,
        groups: flags.groups.clone(),
        data_group: flags.data_group,
    });
    let cfg = solver_config(flags)?;

    let (train_set, test_set) = if flags.test_fraction > 0.0 {
        let (tr, te) = data::split(&full, flags.test_fraction, flags.seed)?;
        (tr, Some(te))
    } else {
        (full, None)
    };

    let (model, report) = train(&train_set, &cfg, &topo)?;
    if let Some(test) = &test_set {
        let loss = evaluate_test_loss(&model.w, test, &cfg.objective)?;
        eprintln!("test loss over {} held-out examples: {loss}", test.n());
    }

    let csv = metrics::to_csv_string(&report.epochs);
    match &args.out {
        Some(path) => {
            let mut f = BufWriter::new(File::create(path).map_err(|e| sdca::Error::Io {
                path: path.clone(),
                source: e,
            })?);
            f.write_all(csv.as_bytes()).map_err(|e| sdca::Error::Io {
                path: path.clone(),
                source: e,
            })?;
        }
        None => print!("{csv}"),
    }
    eprintln!(
        "{} epochs in {:.3}s, converged: {}",
        report.epochs.len(),
        report.total_time_s(),
        report.converged()
    );
    Ok(if report.converged() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_NOT_CONVERGED)
    })
}

const BENCH_HEADER: &str = "engine,threads,seed,epochs,time_s,test_loss,converged";

fn cmd_bench(args: BenchArgs) -> sdca::Result<ExitCode> {
    if args.engines.is_empty() || args.thread_counts.is_empty() || args.seeds.is_empty() {
        return Err(sdca::Error::InvalidConfig(
            "bench needs at least one engine, thread count, and seed".into(),
        ));
    }
    if !(0.0..1.0).contains(&args.test_fraction) {
        return Err(sdca::Error::InvalidConfig(format!(
            "test fraction must be in [0, 1), got {}",
            args.test_fraction
        )));
    }

    let load_started = std::time::Instant::now();
    let full = match &args.dataset {
        Some(path) => load_dataset(path)?,
        None => data::generate_synthetic(
            &SyntheticSpec {
                n: args.n,
                d: args.d,
                sparsity: args.sparsity,
                noise_sigma: 0.1,
                task: Task::Classification,
            },
            args.seeds[0],
        )?,
    };
    eprintln!(
        "dataset ready: n={} d={} nnz={} in {:.3}s (excluded from timings)",
        full.n(),
        full.d(),
        full.nnz(),
        load_started.elapsed().as_secs_f64()
    );
    let (train_set, test_set) = if args.test_fraction > 0.0 {
        let (tr, te) = data::split(&full, args.test_fraction, args.seeds[0])?;
        (tr, Some(te))
    } else {
        (full, None)
    };

    let topo = probe(&TopologyOverrides {
        cache_line: args.cache_line,
        llc_bytes: args.llc_bytes,
        groups: args.groups.clone(),
        data_group: None,
    });
    let objective = Objective::new(args.objective, args.lambda)?;

    // One training at a time so cells don't contend for cores.
    let mut cells = String::from(BENCH_HEADER);
    cells.push('\n');
    let mut medians: Vec<(Engine, usize, f64, f64, f64)> = Vec::new();
    for &engine in &args.engines {
        for &threads in &args.thread_counts {
            let mut epoch_counts = Vec::new();
            let mut times = Vec::new();
            let mut losses = Vec::new();
            for &seed in &args.seeds {
                let mut cfg = SolverConfig::new(engine, objective);
                cfg.threads = threads;
                cfg.max_epochs = args.max_epochs;
                cfg.tol = args.tol;
                cfg.bucket_mode = args.bucket;
                cfg.gamma = args.gamma;
                cfg.seed = seed;
                cfg.oversubscribe = args.oversubscribe;
                match train(&train_set, &cfg, &topo) {
                    Ok((model, report)) => {
                        let loss = match &test_set {
                            Some(test) => evaluate_test_loss(&model.w, test, &objective)?,
                            None => f64::NAN,
                        };
                        cells.push_str(&format!(
                            "{engine},{threads},{seed},{},{},{},{}\n",
                            report.epochs.len(),
                            report.total_time_s(),
                            loss,
                            report.converged()
                        ));
                        if report.converged() {
                            epoch_counts.push(report.epochs.len() as f64);
                            times.push(report.total_time_s());
                            losses.push(loss);
                        }
                    }
                    Err(err) => {
                        log::warn!("{engine} x {threads} threads x seed {seed} failed: {err}");
                        cells.push_str(&format!("{engine},{threads},{seed},NA,NA,NA,NA\n"));
                    }
                }
            }
            if !epoch_counts.is_empty() {
                medians.push((
                    engine,
                    threads,
                    median(&mut epoch_counts),
                    median(&mut times),
                    median(&mut losses),
                ));
            }
        }
    }

    let median_table = {
        let mut s = String::from("engine,threads,median_epochs,median_time_s,median_test_loss\n");
        for (engine, threads, ep, t, loss) in &medians {
            s.push_str(&format!("{engine},{threads},{ep},{t},{loss}\n"));
        }
        s
    };
    match &args.out {
        Some(path) => {
            std::fs::write(path, &cells).map_err(|e| sdca::Error::Io {
                path: path.clone(),
                source: e,
            })?;
            print!("{median_table}");
        }
        None => {
            print!("{cells}");
            eprint!("{median_table}");
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}
