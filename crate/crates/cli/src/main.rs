use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use ratsnas::bench_io::{gen_synthetic, load_benchmark, save_benchmark, BenchError, SynthSpec};
use ratsnas::metrics::EvalReport;
use ratsnas::predictors::{train_predictor, trail_weights, PredictorError, PredictorParams};
use ratsnas::search::{
    evaluate_surrogate, run_p3s, run_random_search, sample_pool, write_events, NeuralSurrogate, OracleSurrogate,
    P3SConfig, RefocusFallback, SearchError, SearchResult, Surrogate,
};
use ratsnas::{PredictorConfig, PredictorKind, SearchSpace, TrainConfig};

#[derive(Parser)]
#[command(name = "ratsnas", version, about = "Predictor-guided architecture search over tabular benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic benchmark file.
    GenSynth(GenSynthArgs),
    /// Train predictors on random pools and score them over the whole space.
    EvalPredictor(EvalArgs),
    /// Run P3S (or random search) repeatedly.
    Search(SearchArgs),
    /// Train one predictor and save its parameters as JSON.
    Train(TrainArgs),
    /// Print the per-layer trail weights a predictor uses for one cell.
    DumpTrails(DumpArgs),
}

#[derive(Args)]
struct SynthFlags {
    /// Number of cells.
    #[arg(long, default_value_t = 4096)]
    cells: usize,
    /// Nodes per cell, terminals included.
    #[arg(long, default_value_t = 7)]
    nodes: usize,
    /// Number of non-terminal operations.
    #[arg(long, default_value_t = 3)]
    ops: usize,
    #[arg(long, default_value_t = 0.002)]
    noise: f64,
}

impl SynthFlags {
    fn spec(&self, seed: u64) -> SynthSpec {
        SynthSpec {
            n_cells: self.cells,
            n_nodes: self.nodes,
            vocab_size: self.ops,
            noise_sigma: self.noise,
            seed,
            ..SynthSpec::default()
        }
    }
}

#[derive(Args)]
struct GenSynthArgs {
    #[command(flatten)]
    synth: SynthFlags,
    /// Generator seed; defaults to $RATS_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    /// Output JSONL path.
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Source {
    /// Benchmark JSONL file.
    #[arg(long)]
    bench: Option<PathBuf>,
    /// Generate a synthetic space of this many cells in memory instead.
    #[arg(long)]
    synth_cells: Option<usize>,
}

#[derive(Args)]
struct SourceArgs {
    #[command(flatten)]
    source: Source,
    /// Seed of the in-memory synthetic space.
    #[arg(long, default_value_t = 0)]
    synth_seed: u64,
}

impl SourceArgs {
    fn load(&self) -> Result<SearchSpace, CliError> {
        match (&self.source.bench, self.source.synth_cells) {
            (Some(path), _) => Ok(load_benchmark(path)?),
            (None, Some(n)) => {
                let spec = SynthSpec { n_cells: n, seed: self.synth_seed, ..SynthSpec::default() };
                Ok(gen_synthetic(&spec)?.0)
            }
            (None, None) => Err(CliError::Usage("no benchmark source".into())),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KindArg {
    Mlp,
    Gcn,
    Bigcn,
    Rats,
    /// Scores entries by their true accuracy.
    Oracle,
}

impl KindArg {
    fn predictor(self) -> Option<PredictorKind> {
        match self {
            KindArg::Mlp => Some(PredictorKind::Mlp),
            KindArg::Gcn => Some(PredictorKind::Gcn),
            KindArg::Bigcn => Some(PredictorKind::BiGcn),
            KindArg::Rats => Some(PredictorKind::RatsGcn),
            KindArg::Oracle => None,
        }
    }

    fn label(self) -> &'static str {
        self.predictor().map_or("ORACLE", PredictorKind::as_str)
    }
}

#[derive(Args)]
struct ModelFlags {
    #[arg(long, value_enum, default_value = "rats")]
    kind: KindArg,
    #[arg(long, default_value_t = 300)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
}

impl ModelFlags {
    fn config(&self, space: &SearchSpace, kind: PredictorKind) -> PredictorConfig {
        let mut c = PredictorConfig::new(kind, space.vocab().len(), space.max_nodes());
        c.layers = self.layers.unwrap_or(c.layers);
        c.hidden = self.hidden.unwrap_or(c.hidden);
        c
    }

    fn train(&self) -> TrainConfig {
        TrainConfig { epochs: self.epochs, lr: self.lr, ..TrainConfig::default() }
    }

    fn surrogate(&self, space: &SearchSpace) -> AnySurrogate {
        match self.kind.predictor() {
            Some(kind) => AnySurrogate::Neural(NeuralSurrogate::new(self.config(space, kind), self.train())),
            None => AnySurrogate::Oracle,
        }
    }
}

#[derive(Args)]
struct RunFlags {
    #[arg(long, default_value_t = 30)]
    runs: usize,
    /// Seed of run 0; run i uses seed + i. Defaults to $RATS_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 means one per available core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Output directory.
    #[arg(long, short, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[command(flatten)]
    model: ModelFlags,
    #[command(flatten)]
    run: RunFlags,
    /// Training pool sizes.
    #[arg(long, value_delimiter = ',', default_values_t = [30, 60, 90])]
    budget: Vec<usize>,
    /// Top-k for mean accuracy.
    #[arg(long, default_value_t = 100)]
    top_k: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum FallbackArg {
    Stay,
    Latter,
}

#[derive(Args)]
struct SearchArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[command(flatten)]
    model: ModelFlags,
    #[command(flatten)]
    run: RunFlags,
    /// Samples per iteration.
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Ground-truth queries per run; defaults to the whole space.
    #[arg(long)]
    budget: Option<usize>,
    /// End each run once the global optimum has been sampled.
    #[arg(long)]
    stop_at_optimum: bool,
    /// Uniform random sampling instead of P3S.
    #[arg(long)]
    random: bool,
    /// What P3S does when the top picks split between halves.
    #[arg(long, value_enum, default_value = "stay")]
    fallback: FallbackArg,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[command(flatten)]
    model: ModelFlags,
    /// Training pool size.
    #[arg(long, default_value_t = 90)]
    budget: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Output params JSON.
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct DumpArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Params JSON written by `train`.
    #[arg(long)]
    params: PathBuf,
    /// Cell id.
    #[arg(long)]
    cell: String,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<PredictorError> for CliError {
    fn from(e: PredictorError) -> Self {
        match e {
            PredictorError::Config(_) | PredictorError::CellShape(_) | PredictorError::Format(_) => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<SearchError> for CliError {
    fn from(e: SearchError) -> Self {
        match e {
            SearchError::KTooLarge { .. } | SearchError::Budget { .. } | SearchError::Metrics(_) => {
                CliError::Usage(e.to_string())
            }
            SearchError::Predictor(p) => p.into(),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

enum AnySurrogate {
    Neural(NeuralSurrogate<f64>),
    Oracle,
}

impl Surrogate for AnySurrogate {
    fn fit(&mut self, space: &SearchSpace, pool: &[(usize, f64)], seed: u64) -> Result<(), SearchError> {
        match self {
            AnySurrogate::Neural(s) => s.fit(space, pool, seed),
            AnySurrogate::Oracle => OracleSurrogate.fit(space, pool, seed),
        }
    }

    fn score(&self, space: &SearchSpace, indices: &[usize]) -> Result<Vec<f64>, SearchError> {
        match self {
            AnySurrogate::Neural(s) => s.score(space, indices),
            AnySurrogate::Oracle => OracleSurrogate.score(space, indices),
        }
    }
}

fn base_seed(flag: Option<u64>) -> Result<u64, CliError> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var("RATS_SEED") {
        Ok(v) => v.trim().parse().map_err(|_| CliError::Usage(format!("RATS_SEED={v:?} is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new().num_threads(jobs).build().map_err(|e| CliError::Runtime(e.to_string()))
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    sum / n as f64
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn gen_synth(args: GenSynthArgs) -> Result<(), CliError> {
    let spec = args.synth.spec(base_seed(args.seed)?);
    let (space, truth) = gen_synthetic(&spec)?;
    save_benchmark(&space, &args.out)?;
    println!("cells {}", space.len());
    println!("optimum {} accuracy {}", truth.optimum_id, truth.optimum_accuracy);
    Ok(())
}

fn eval_predictor(args: EvalArgs) -> Result<(), CliError> {
    let space = args.source.load()?;
    if args.top_k == 0 || args.top_k > space.len() {
        return Err(SearchError::KTooLarge { k: args.top_k, n: space.len() }.into());
    }
    let seed = base_seed(args.run.seed)?;
    let jobs: Vec<(usize, usize)> =
        args.budget.iter().flat_map(|&b| (0..args.run.runs).map(move |r| (b, r))).collect();
    let reports: Vec<EvalReport> = thread_pool(args.run.jobs)?.install(|| {
        jobs.par_iter()
            .map(|&(budget, run)| {
                let mut sur = args.model.surrogate(&space);
                evaluate_surrogate(&space, &mut sur, budget, seed + run as u64, args.top_k)
            })
            .collect::<Result<_, _>>()
    })?;

    fs::create_dir_all(&args.run.out)?;
    let mut csv = csv::Writer::from_path(args.run.out.join("eval.csv"))?;
    csv.write_record(["run", "seed", "budget", "kind", "m_acc", "psp"])?;
    let kind = args.model.kind.label();
    for (&(budget, run), rep) in jobs.iter().zip(&reports) {
        let seed = (seed + run as u64).to_string();
        csv.write_record([&run.to_string(), &seed, &budget.to_string(), kind, &rep.m_acc.to_string(), &rep.psp.to_string()])?;
        println!("{kind} budget {budget} run {run}: m_acc {:.4} psp {:.4}", rep.m_acc, rep.psp);
    }
    csv.flush()?;
    for &budget in &args.budget {
        let rows: Vec<&EvalReport> = jobs.iter().zip(&reports).filter(|(j, _)| j.0 == budget).map(|p| p.1).collect();
        println!(
            "{kind} budget {budget} mean over {} runs: m_acc {:.4} psp {:.4}",
            rows.len(),
            mean(rows.iter().map(|r| r.m_acc)),
            mean(rows.iter().map(|r| r.psp))
        );
    }
    Ok(())
}

fn search(args: SearchArgs) -> Result<(), CliError> {
    let space = args.source.load()?;
    let seed = base_seed(args.run.seed)?;
    let budget = args.budget.unwrap_or(space.len());
    let config = P3SConfig {
        k: args.k,
        fallback: match args.fallback {
            FallbackArg::Stay => RefocusFallback::StayPut,
            FallbackArg::Latter => RefocusFallback::LatterHalf,
        },
        ..P3SConfig::default()
    };
    let results: Vec<SearchResult> = thread_pool(args.run.jobs)?.install(|| {
        (0..args.run.runs)
            .into_par_iter()
            .map(|run| {
                let s = seed + run as u64;
                if args.random {
                    run_random_search(&space, s, budget, args.stop_at_optimum)
                } else {
                    let sur = args.model.surrogate(&space);
                    run_p3s(&space, config, s, budget, args.stop_at_optimum, sur).map(|r| r.0)
                }
            })
            .collect::<Result<_, _>>()
    })?;

    let method = if args.random { "RANDOM" } else { args.model.kind.label() };
    let events_dir = args.run.out.join("events");
    fs::create_dir_all(&events_dir)?;
    let mut csv = csv::Writer::from_path(args.run.out.join("results.csv"))?;
    csv.write_record([
        "run",
        "seed",
        "method",
        "k",
        "budget",
        "samples_used",
        "samples_to_optimum",
        "best_accuracy",
        "optimum_accuracy",
        "escapes",
    ])?;
    for (run, r) in results.iter().enumerate() {
        csv.write_record([
            run.to_string(),
            (seed + run as u64).to_string(),
            method.to_string(),
            args.k.to_string(),
            budget.to_string(),
            r.samples_used.to_string(),
            r.samples_to_optimum.map(|s| s.to_string()).unwrap_or_default(),
            r.best_accuracy.to_string(),
            space.max_accuracy().to_string(),
            r.escapes().to_string(),
        ])?;
        write_jsonl(&events_dir.join(format!("run_{run}.jsonl")), r)?;
    }
    csv.flush()?;

    let found: Vec<f64> = results.iter().filter_map(|r| r.samples_to_optimum).map(|s| s as f64).collect();
    println!("{method}: {} runs, optimum found in {}", results.len(), found.len());
    if !found.is_empty() {
        println!("samples to optimum: mean {:.1} median {:.1}", mean(found.iter().copied()), median(found.clone()));
    }
    println!(
        "best accuracy: mean {:.6} (optimum {})",
        mean(results.iter().map(|r| r.best_accuracy)),
        space.max_accuracy()
    );
    Ok(())
}

fn write_jsonl(path: &Path, result: &SearchResult) -> Result<(), CliError> {
    let out = BufWriter::new(File::create(path)?);
    write_events(&result.events, out)?;
    Ok(())
}

fn train(args: TrainArgs) -> Result<(), CliError> {
    let space = args.source.load()?;
    let kind = args
        .model
        .kind
        .predictor()
        .ok_or_else(|| CliError::Usage("the oracle has no parameters to train".into()))?;
    let seed = base_seed(args.seed)?;
    let pool: Vec<_> = sample_pool(&space, args.budget, seed)?
        .into_iter()
        .map(|i| (&space.entry(i).cell, space.entry(i).accuracy))
        .collect();
    let train = TrainConfig { seed, ..args.model.train() };
    let (params, log) = train_predictor::<f64>(&args.model.config(&space, kind), &pool, &train)?;
    fs::write(&args.out, params.to_json())?;
    println!("{kind} trained on {} cells, final mse {:e}", pool.len(), log.final_loss);
    Ok(())
}

fn dump_trails(args: DumpArgs) -> Result<(), CliError> {
    let space = args.source.load()?;
    let text = fs::read_to_string(&args.params).map_err(|e| CliError::Usage(format!("{}: {e}", args.params.display())))?;
    let params = PredictorParams::<f64>::from_json(&text)?;
    let idx = space.index_of(&args.cell).ok_or_else(|| CliError::Usage(format!("unknown cell {:?}", args.cell)))?;
    let trails = trail_weights(&params, &space.entry(idx).cell)?;
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    writeln!(out, "layer src dst weight")?;
    for (layer, t) in trails.iter().enumerate() {
        let m = t.shape()[0];
        for (pos, w) in t.data().iter().enumerate() {
            writeln!(out, "{layer} {} {} {w}", pos / m, pos % m)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::GenSynth(a) => gen_synth(a),
        Command::EvalPredictor(a) => eval_predictor(a),
        Command::Search(a) => search(a),
        Command::Train(a) => train(a),
        Command::DumpTrails(a) => dump_trails(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (CliError::Usage(msg) | CliError::Runtime(msg)) = &e;
            eprintln!("error: {msg}");
            ExitCode::from(e.code())
        }
    }
}
