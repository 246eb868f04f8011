use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use meanba::archive::{archive_read, archive_write, find, NamedTensor};
use meanba::bench::{emit_report, render_report, run_scan_bench, BenchConfig, ReportFormat, BACKBONE_SHAPES};
use meanba::model::{
    build_toy_model, k_sweep, layer_impact_scores, make_teacher_dataset, prune_l1, select_layers, PruneTarget,
    ToyConfig, ToyModel,
};
use meanba::ssm::{scan_sequential, DiscreteInputs};
use meanba::vmeanba::{approximation_error, channel_stats, flop_count, CostMode};
use meanba::{DType, Error};

#[derive(Parser, Debug)]
#[command(name = "meanba", version, about = "Selective-scan kernels with channel-mean scan compression")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Time original and reduced scans over a shape sweep and write a report.
    ScanBench(ScanBenchArgs),
    /// Channel statistics and reduced-scan error on archived scan inputs.
    Analyze(AnalyzeArgs),
    /// Score every layer of a toy model and select the K least sensitive.
    SelectLayers(SelectArgs),
    /// Accuracy and forward time for several K.
    Eval(EvalArgs),
    /// l1-prune a toy model, then run the K sweep on it.
    Prune(PruneArgs),
    /// Analytic FLOP counts of the original and reduced scan.
    Flops(FlopsArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Json,
    Csv,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Json => ReportFormat::Json,
            Format::Csv => ReportFormat::Csv,
        }
    }
}

#[derive(Args, Debug)]
struct ScanBenchArgs {
    /// `DxL` pair, repeatable. Defaults to the eight backbone shapes.
    #[arg(long = "shape", value_parser = parse_shape)]
    shapes: Vec<(usize, usize)>,
    #[arg(long, default_value_t = 1)]
    batch: usize,
    #[arg(long, default_value_t = 16)]
    state: usize,
    #[arg(long, default_value_t = 5)]
    warmup: usize,
    #[arg(long, default_value_t = 30)]
    iters: usize,
    #[arg(long, default_value = "f32", value_parser = parse_dtype)]
    dtype: DType,
    #[arg(long, env = "MEANBA_THREADS", default_value_t = 1)]
    threads: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// Report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    /// Archive holding `a_bar`, `b_bar_u` (B,D,L,N), `c` (B,N,L), `u` (B,D,L)
    /// and `skip_gain` (D).
    input: PathBuf,
    /// Include per-step statistics in the output.
    #[arg(long)]
    per_step: bool,
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// `tiny` or a JSON config file.
    #[arg(long, default_value = "tiny")]
    config: String,
    /// Load weights from a tensor archive instead of building from the seed.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Teacher-labelled evaluation samples.
    #[arg(long, default_value_t = 256)]
    samples: usize,
    #[arg(long, default_value_t = 1)]
    data_seed: u64,
    #[arg(long, env = "MEANBA_THREADS", default_value_t = 1)]
    threads: usize,
}

#[derive(Args, Debug)]
struct SelectArgs {
    #[arg(long)]
    k: usize,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Comma-separated K values; defaults to 0..=layers.
    #[arg(long, value_delimiter = ',')]
    k: Vec<usize>,
    #[command(flatten)]
    model: ModelArgs,
    /// Write the sweep as JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Target {
    Linear,
    AllProjections,
}

#[derive(Args, Debug)]
struct PruneArgs {
    #[arg(long, default_value_t = 0.4)]
    ratio: f64,
    #[arg(long, value_enum, default_value = "all-projections")]
    target: Target,
    #[command(flatten)]
    eval: EvalArgs,
    /// Save the pruned model as a tensor archive.
    #[arg(long)]
    save: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FlopsArgs {
    #[arg(long)]
    b: u64,
    #[arg(long)]
    d: u64,
    #[arg(long)]
    l: u64,
}

fn parse_shape(s: &str) -> Result<(usize, usize), String> {
    let (d, l) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected DxL, got `{s}`"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("`{s}`: {e}"));
    Ok((parse(d)?, parse(l)?))
}

fn parse_dtype(s: &str) -> Result<DType, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

type CliResult = Result<(), Error>;

fn print_json<T: Serialize>(value: &T) -> CliResult {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> CliResult {
    match out {
        Some(path) => {
            let text = serde_json::to_string_pretty(value)? + "\n";
            std::fs::write(path, text).map_err(|e| Error::io(path, e))
        }
        None => print_json(value),
    }
}

fn scan_bench(args: ScanBenchArgs) -> CliResult {
    let cfg = BenchConfig {
        shapes: if args.shapes.is_empty() { BACKBONE_SHAPES.to_vec() } else { args.shapes },
        batch: args.batch,
        state: args.state,
        warmup_iters: args.warmup,
        measure_iters: args.iters,
        dtype: args.dtype,
        threads: args.threads,
        seed: args.seed,
    };
    let records = run_scan_bench(&cfg)?;
    match args.out {
        Some(path) => emit_report(&records, args.format.into(), path),
        None => {
            let bytes = render_report(&records, args.format.into())?;
            print!("{}", String::from_utf8_lossy(&bytes));
            Ok(())
        }
    }
}

fn required<'a>(set: &'a [NamedTensor], name: &str) -> Result<&'a NamedTensor, Error> {
    find(set, name).ok_or_else(|| Error::Config(format!("archive has no tensor `{name}`")))
}

fn analyze(args: AnalyzeArgs) -> CliResult {
    let set = archive_read(&args.input)?;
    let inputs = DiscreteInputs::<f64>::new(
        required(&set, "a_bar")?.to_tensor4()?,
        required(&set, "b_bar_u")?.to_tensor4()?,
        required(&set, "c")?.to_tensor3()?,
        required(&set, "skip_gain")?.values(),
        required(&set, "u")?.to_tensor3()?,
    )?;
    let y = scan_sequential(&inputs)?;
    let mut stats = channel_stats(&y);
    if !args.per_step {
        stats.per_step.clear();
    }
    #[derive(Serialize)]
    struct Analysis {
        shape: [usize; 4],
        channel_stats: meanba::vmeanba::ChannelStats,
        approximation_error: meanba::vmeanba::ApproxError,
    }
    print_json(&Analysis {
        shape: inputs.dims(),
        channel_stats: stats,
        approximation_error: approximation_error(&inputs)?,
    })
}

fn load_model(args: &ModelArgs) -> Result<ToyModel, Error> {
    if let Some(path) = &args.model {
        return ToyModel::from_archive(&archive_read(path)?);
    }
    let config = if args.config == "tiny" {
        ToyConfig::tiny()
    } else {
        let text = std::fs::read_to_string(&args.config).map_err(|e| Error::io(&args.config, e))?;
        serde_json::from_str(&text)?
    };
    build_toy_model(args.seed, &config)
}

fn with_pool<R: Send>(threads: usize, f: impl FnOnce() -> Result<R, Error> + Send) -> Result<R, Error> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?
        .install(f)
}

fn select(args: SelectArgs) -> CliResult {
    let model = load_model(&args.model)?;
    let data = make_teacher_dataset(&model, args.model.data_seed, args.model.samples)?;
    let plan = with_pool(args.model.threads, || {
        let scores = layer_impact_scores(&model, &data)?;
        select_layers(&scores, args.k)
    })?;
    print_json(&plan)
}

fn sweep(model: &ToyModel, args: &EvalArgs) -> CliResult {
    let data = make_teacher_dataset(model, args.model.data_seed, args.model.samples)?;
    let ks: Vec<usize> = if args.k.is_empty() { (0..=model.num_layers()).collect() } else { args.k.clone() };
    let rows = with_pool(args.model.threads, || k_sweep(model, &data, &ks))?;
    write_json(&rows, args.out.as_deref())
}

fn eval(args: EvalArgs) -> CliResult {
    let model = load_model(&args.model)?;
    sweep(&model, &args)
}

fn prune(args: PruneArgs) -> CliResult {
    let model = load_model(&args.eval.model)?;
    let target = match args.target {
        Target::Linear => PruneTarget::Linear,
        Target::AllProjections => PruneTarget::AllProjections,
    };
    let pruned = prune_l1(&model, target, args.ratio)?;
    if let Some(path) = &args.save {
        archive_write(&pruned.to_archive(), path)?;
    }
    sweep(&pruned, &args.eval)
}

fn flops(args: FlopsArgs) -> CliResult {
    let r = flop_count(args.b, args.d, args.l, CostMode::Vmeanba)?;
    println!("original {}", r.flops_original);
    println!("reduced {}", r.flops_reduced);
    println!("ratio {:.4}", r.reduction_ratio);
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let result = match cli.command {
        Command::ScanBench(a) => scan_bench(a),
        Command::Analyze(a) => analyze(a),
        Command::SelectLayers(a) => select(a),
        Command::Eval(a) => eval(a),
        Command::Prune(a) => prune(a),
        Command::Flops(a) => flops(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
