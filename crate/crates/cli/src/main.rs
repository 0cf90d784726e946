mod data;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use leafprox::bench::{
    emit_report, gaussian_blobs, fit_curves, load_idx, BenchConfig, Dataset, Method,
    NAIVE_BENCH_GUARD,
    TrackingAllocator,
};
use leafprox::ensemble::{load_ensemble, load_ensemble_unchecked, save_ensemble, SplitCriterion};
use leafprox::oracle::{compare, proximity_naive, DEFAULT_GUARD};
use leafprox::proximity::build_factors;
use leafprox::sparse::write_matrix_market;
use leafprox::{
    proximity_query_rows, proximity_sparse, train_forest, Ensemble, Error, Scheme, SchemeWeights,
    SparseMatrix, TrainConfig,
};

#[global_allocator]
static ALLOC: TrackingAllocator = TrackingAllocator;

/// Smallest tolerance `oracle-check` accepts; the two paths may round
/// differently in the last bit.
const MIN_TOLERANCE: f64 = 1e-15;

#[derive(Parser)]
#[command(name = "leafprox", version, about = "Sparse tree-ensemble proximities")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a bagged forest and write it as JSON.
    Train(TrainArgs),
    /// Write the proximity matrix (or query rows) as Matrix Market.
    Prox(ProxArgs),
    /// Compare the sparse product with the pairwise computation.
    OracleCheck(OracleArgs),
    /// Time sparse vs pairwise proximities over growing N.
    Bench(BenchArgs),
    /// Write the Q and W factors (and optionally the pairwise P) as Matrix Market.
    Export(ExportArgs),
}

#[derive(Args)]
struct InputArgs {
    /// CSV with a header row.
    #[arg(long, conflicts_with_all = ["idx_images", "idx_labels"])]
    data: Option<PathBuf>,
    /// Name of the label column in --data.
    #[arg(long)]
    label_column: Option<String>,
    /// IDX image file (used with --idx-labels).
    #[arg(long, requires = "idx_labels")]
    idx_images: Option<PathBuf>,
    #[arg(long, requires = "idx_images")]
    idx_labels: Option<PathBuf>,
    /// Keep only the first rows of the input.
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Args)]
struct ForestArgs {
    #[arg(long, default_value_t = 100)]
    trees: usize,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long, default_value_t = 1)]
    min_leaf: usize,
    #[arg(long)]
    mtry: Option<usize>,
    #[arg(long)]
    no_bootstrap: bool,
    /// Variance splits and mean leaf values instead of Gini and majority vote.
    #[arg(long)]
    regression: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl ForestArgs {
    fn config(&self) -> TrainConfig {
        let base = if self.regression {
            TrainConfig::regression(self.trees, self.seed)
        } else {
            TrainConfig::classification(self.trees, self.seed)
        };
        TrainConfig {
            max_depth: self.max_depth,
            min_samples_leaf: self.min_leaf,
            mtry: self.mtry,
            bootstrap: !self.no_bootstrap,
            criterion: if self.regression {
                SplitCriterion::Variance
            } else {
                SplitCriterion::Gini
            },
            ..base
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    forest: ForestArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ProxArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "original")]
    scheme: Scheme,
    #[arg(long)]
    out: PathBuf,
    /// CSV of new samples; writes their rows against the training set.
    #[arg(long)]
    query: Option<PathBuf>,
    /// Column of --query to ignore (e.g. its labels).
    #[arg(long)]
    label_column: Option<String>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    model: PathBuf,
    /// Check one scheme; by default every scheme the model supports.
    #[arg(long)]
    scheme: Option<Scheme>,
    #[arg(long, default_value_t = 1e-12)]
    tolerance: f64,
    #[arg(long, default_value_t = DEFAULT_GUARD)]
    guard: usize,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    forest: ForestArgs,
    /// Comma-separated ascending subset sizes.
    #[arg(long, value_delimiter = ',', default_values_t = [2000usize, 4000, 8000, 16000, 32000])]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    trials: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [Scheme::Original, Scheme::RfGap])]
    scheme: Vec<Scheme>,
    #[arg(long, value_delimiter = ',', default_values_t = [Method::Sparse, Method::Naive])]
    methods: Vec<Method>,
    /// Largest N for pairwise runs.
    #[arg(long, default_value_t = NAIVE_BENCH_GUARD)]
    guard: usize,
    /// Seed of the synthetic dataset when no input is given.
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
    /// Dimension of the synthetic blobs.
    #[arg(long, default_value_t = 8)]
    blob_features: usize,
    #[arg(long, default_value_t = 10)]
    blob_classes: usize,
    /// Standard deviation of the blob centres (points have unit variance).
    #[arg(long, default_value_t = 1.0)]
    blob_spread: f64,
    #[arg(long)]
    no_warmup: bool,
    /// Directory for results.csv and summary.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "original")]
    scheme: Scheme,
    /// Directory for q.mtx and w.mtx.
    #[arg(long)]
    out: PathBuf,
    /// Also write the pairwise P as p_naive.mtx.
    #[arg(long)]
    naive: bool,
    #[arg(long, default_value_t = DEFAULT_GUARD)]
    guard: usize,
}

/// Failure with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: if e.is_config() { 2 } else { 1 },
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn load_input(input: &InputArgs) -> CliResult<Dataset> {
    let mut data = match (&input.data, &input.idx_images, &input.idx_labels) {
        (Some(path), _, _) => {
            let label = input
                .label_column
                .as_deref()
                .ok_or_else(|| usage("--label-column is required with --data"))?;
            let table = data::read_csv(path, Some(label))?;
            Dataset {
                x: table.x,
                y: table.y.expect("label column requested"),
            }
        }
        (None, Some(images), Some(labels)) => load_idx(images, labels, input.limit)?,
        _ => return Err(usage("give --data <csv> or --idx-images/--idx-labels")),
    };
    if let Some(limit) = input.limit {
        if limit < data.n_samples() {
            let (x, y) = data.head(limit)?;
            data = Dataset {
                x: x.to_owned(),
                y: y.to_vec(),
            };
        }
    }
    Ok(data)
}

fn cmd_train(args: &TrainArgs) -> CliResult {
    let data = load_input(&args.input)?;
    let cfg = args.forest.config();
    let ensemble = train_forest(data.x.view(), &data.y, &cfg)?;
    save_ensemble(&ensemble, &args.out)?;
    println!("trees: {}", ensemble.n_trees());
    println!("threads: {}", rayon::current_num_threads());
    println!("samples: {}", ensemble.n_train());
    println!("features: {}", ensemble.n_features());
    println!("never out-of-bag: {}", ensemble.bagging().never_oob());
    if let Some(err) = ensemble.oob_error(&data.y) {
        println!("oob error: {err:.6}");
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn scheme_weights<'a>(ensemble: &'a Ensemble, scheme: Scheme) -> CliResult<SchemeWeights<'a>> {
    SchemeWeights::new(ensemble, scheme).map_err(|e| {
        usage(format!(
            "scheme {scheme} cannot be used with this model: {e}"
        ))
    })
}

fn print_matrix_stats(p: &SparseMatrix) {
    let cells = (p.n_rows() * p.n_cols()).max(1) as f64;
    println!("shape: {} x {}", p.n_rows(), p.n_cols());
    println!("nnz: {}", p.nnz());
    println!("density: {:.6}", p.nnz() as f64 / cells);
    let sums = p.row_sums();
    if !sums.is_empty() {
        let min = sums.iter().copied().fold(f64::INFINITY, f64::min);
        let max = sums.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = sums.iter().sum::<f64>() / sums.len() as f64;
        println!("row sums: min {min:.6} mean {mean:.6} max {max:.6}");
    }
}

fn cmd_prox(args: &ProxArgs) -> CliResult {
    let ensemble = load_ensemble(&args.model)?;
    let weights = scheme_weights(&ensemble, args.scheme)?;
    let p = match &args.query {
        Some(path) => {
            let table = data::read_csv(path, args.label_column.as_deref())?;
            proximity_query_rows(&ensemble, table.x.view(), &weights)?
        }
        None => proximity_sparse(&ensemble, None, &weights)?,
    };
    write_matrix_market(&p, &args.out)?;
    println!("scheme: {}", args.scheme);
    println!("threads: {}", rayon::current_num_threads());
    if args.scheme == Scheme::RfGap && args.query.is_none() {
        let zero = weights.zero_query_rows();
        if zero > 0 {
            println!("warning: {zero} samples are never out-of-bag; their rows are all zero");
        }
    }
    print_matrix_stats(&p);
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_oracle_check(args: &OracleArgs) -> CliResult {
    if !(args.tolerance >= MIN_TOLERANCE) {
        return Err(usage(format!(
            "--tolerance must be at least {MIN_TOLERANCE:e}; the two paths are only \
             guaranteed to agree up to floating-point rounding"
        )));
    }
    // Structural checks that would reject a corrupted leaf table are skipped
    // here so the comparison itself can locate the fault.
    let ensemble = load_ensemble_unchecked(&args.model)?;
    let schemes: Vec<Scheme> = match args.scheme {
        Some(s) => vec![s],
        None => Scheme::ALL.to_vec(),
    };
    let mut failed = false;
    for scheme in schemes {
        let weights = match (args.scheme, SchemeWeights::new(&ensemble, scheme)) {
            (_, Ok(w)) => w,
            (Some(_), Err(e)) => return Err(usage(format!("scheme {scheme}: {e}"))),
            (None, Err(e)) => {
                println!("{scheme}: skipped ({e})");
                continue;
            }
        };
        let dense = proximity_naive(&ensemble, &weights, args.guard)?;
        let sparse = match proximity_sparse(&ensemble, None, &weights) {
            Ok(p) => p,
            Err(e) => {
                println!("{scheme}: FAIL (sparse path rejected the model: {e})");
                failed = true;
                continue;
            }
        };
        let d = compare(&sparse, &dense)?;
        let pass = d.max_abs_diff <= args.tolerance;
        failed |= !pass;
        match (pass, d.cell) {
            (true, _) => println!("{scheme}: PASS max |diff| = {:e}", d.max_abs_diff),
            (false, Some((i, j))) => println!(
                "{scheme}: FAIL max |diff| = {:e} at ({i}, {j}): sparse {} vs naive {}",
                d.max_abs_diff,
                sparse.get(i, j),
                dense[[i, j]]
            ),
            (false, None) => println!("{scheme}: FAIL max |diff| = {:e}", d.max_abs_diff),
        }
    }
    if failed {
        Err(Failure {
            code: 1,
            message: format!("oracle check failed at tolerance {:e}", args.tolerance),
        })
    } else {
        Ok(())
    }
}

fn cmd_bench(args: &BenchArgs) -> CliResult {
    let largest = args.sizes.iter().copied().max().unwrap_or(0);
    let data = if args.input.data.is_some() || args.input.idx_images.is_some() {
        load_input(&args.input)?
    } else {
        gaussian_blobs(
            largest,
            args.blob_features,
            args.blob_classes,
            args.blob_spread,
            args.data_seed,
        )
    };
    let cfg = BenchConfig {
        sizes: args.sizes.clone(),
        trials: args.trials,
        schemes: args.scheme.clone(),
        methods: args.methods.clone(),
        train: args.forest.config(),
        naive_guard: args.guard,
        warmup: !args.no_warmup,
    };
    let result = leafprox::bench::run_scaling(&data, &cfg)?;
    let fits = fit_curves(&result.runs);
    let paths = emit_report(&result, &fits, &args.out)?;
    println!("threads: {}", rayon::current_num_threads());
    for s in &result.skipped {
        println!("skipped {} {} N={}: {}", s.method, s.scheme, s.n, s.reason);
    }
    for e in &result.equivalence {
        println!("equivalence {} N={}: max |diff| = {:e}", e.scheme, e.n, e.max_abs_diff);
    }
    for f in &fits {
        let time = f.time.map_or("n/a".to_string(), |t| format!("{:.3}", t.exponent));
        let mem = f.memory.map_or("n/a".to_string(), |m| format!("{:.3}", m.exponent));
        println!("{} {}: time exponent {time}, memory exponent {mem}", f.method, f.scheme);
    }
    println!("wrote {} and {}", paths.csv.display(), paths.summary.display());
    Ok(())
}

fn cmd_export(args: &ExportArgs) -> CliResult {
    let ensemble = load_ensemble(&args.model)?;
    let weights = scheme_weights(&ensemble, args.scheme)?;
    let factors = build_factors(&ensemble, ensemble.training_leaves(), &weights)?;
    fs::create_dir_all(&args.out).map_err(Error::from)?;
    let write = |name: &str, m: &SparseMatrix| -> CliResult {
        let path: PathBuf = Path::new(&args.out).join(name);
        write_matrix_market(m, &path)?;
        println!("wrote {} ({} x {}, nnz {})", path.display(), m.n_rows(), m.n_cols(), m.nnz());
        Ok(())
    };
    write("q.mtx", &factors.q)?;
    write("w.mtx", &factors.w)?;
    if args.naive {
        let dense = proximity_naive(&ensemble, &weights, args.guard)?;
        let triplets: Vec<(usize, usize, f64)> = dense
            .indexed_iter()
            .filter(|&(_, &v)| v != 0.0)
            .map(|((i, j), &v)| (i, j, v))
            .collect();
        let p = SparseMatrix::from_triplets(dense.nrows(), dense.ncols(), &triplets)?;
        write("p_naive.mtx", &p)?;
    }
    Ok(())
}

fn run(cli: &Cli) -> CliResult {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure {
                code: 1,
                message: e.to_string(),
            })?;
    }
    match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Prox(a) => cmd_prox(a),
        Command::OracleCheck(a) => cmd_oracle_check(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Export(a) => cmd_export(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
