use std::path::PathBuf;
use std::process::ExitCode;

use attnspec::analyze::{analyze, RunConfig};
use attnspec::fixture_io::{write_fixture_manifest, FixtureLayout};
use attnspec::render::{read_report, render, Format};
use attnspec::selftest::{self, Fault, SelftestConfig};
use attnspec::tensor_io::{write_report, Dtype};
use attnspec_core::fixtures::FixtureSpec;
use attnspec_core::softmax_bounds::DEFAULT_TRUNCATION_RANKS;
use attnspec_core::spectrum_stats::{Threshold, DEFAULT_RANKS, DEFAULT_THRESHOLDS};
use clap::{Args, Parser, Subcommand};

const EXIT_VIOLATION: u8 = 1;
const EXIT_INPUT: u8 = 2;

#[derive(Parser)]
#[command(name = "attnspec", version, about = "Spectral analysis of attention logit fields")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analyze interchange directories and report spectra and bounds.
    Analyze(AnalyzeArgs),
    /// Render a saved JSON report as tables.
    Render(RenderArgs),
    /// Run the seeded theorem checks.
    Selftest(SelftestArgs),
    /// Write a synthetic interchange directory.
    Fixture(FixtureArgs),
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Interchange directory; repeat for several models.
    #[arg(long = "input", required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_RANKS)]
    ranks: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_THRESHOLDS)]
    thresholds: Vec<f64>,
    #[arg(long = "trunc-ranks", value_delimiter = ',', default_values_t = DEFAULT_TRUNCATION_RANKS)]
    trunc_ranks: Vec<usize>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Where to write the JSON report.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct RenderArgs {
    report: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Args)]
struct SelftestArgs {
    #[arg(long, default_value_t = selftest::DEFAULT_SEED)]
    seed: u64,
    #[arg(long = "inject-fault", value_enum)]
    inject_fault: Option<Fault>,
}

#[derive(Args)]
struct FixtureArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "context-length", default_value_t = 64)]
    context_length: usize,
    #[arg(long = "head-dim", default_value_t = 16)]
    head_dim: usize,
    #[arg(long = "model-dim", default_value_t = 64)]
    model_dim: usize,
    #[arg(long = "planted-rank")]
    planted_rank: Option<usize>,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value = "fixture")]
    name: String,
    #[arg(long, default_value_t = 1)]
    layers: u32,
    #[arg(long, default_value_t = 2)]
    heads: u32,
    #[arg(long, default_value_t = 2)]
    texts: u32,
    #[arg(long = "kv-group-size", default_value_t = 1)]
    kv_group_size: u32,
    #[arg(long, value_enum, default_value_t = DtypeArg::F64)]
    dtype: DtypeArg,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum DtypeArg {
    F32,
    F64,
}

fn fail(code: u8, message: impl std::fmt::Display) -> ExitCode {
    eprintln!("attnspec: {message}");
    ExitCode::from(code)
}

fn run_analyze(args: AnalyzeArgs) -> ExitCode {
    let thresholds = match args.thresholds.iter().map(|&t| Threshold::new(t)).collect::<Result<Vec<_>, _>>() {
        Ok(t) => t,
        Err(e) => return fail(EXIT_INPUT, e),
    };
    let config = RunConfig {
        input_dirs: args.inputs,
        ranks: args.ranks,
        thresholds,
        trunc_ranks: args.trunc_ranks,
        jobs: args.jobs,
    };
    let report = match analyze(&config) {
        Ok(r) => r,
        Err(e) => {
            let code = e.exit_code() as u8;
            return fail(code, e);
        }
    };
    if let Some(out) = &args.out {
        if let Err(e) = write_report(&report, out) {
            return fail(EXIT_INPUT, e);
        }
    }
    print!("{}", render(&report, args.format));
    let violations = report.violations();
    if violations > 0 {
        return fail(EXIT_VIOLATION, format!("{violations} invariant violations"));
    }
    ExitCode::SUCCESS
}

fn run_selftest(args: SelftestArgs) -> ExitCode {
    let config = SelftestConfig { seed: args.seed, fault: args.inject_fault, ..Default::default() };
    let results = selftest::run(&config);
    for r in &results {
        println!("{r}");
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed()).map(|r| r.name).collect();
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        fail(EXIT_VIOLATION, format!("failed checks: {}", failed.join(", ")))
    }
}

fn run_fixture(args: FixtureArgs) -> ExitCode {
    let mut spec = FixtureSpec::new(args.seed, args.context_length, args.head_dim, args.model_dim);
    if let Some(rank) = args.planted_rank {
        spec = spec.with_planted_rank(rank, args.noise);
    }
    let layout = FixtureLayout {
        model_name: args.name,
        layers: args.layers,
        heads: args.heads,
        texts: args.texts,
        kv_group_size: args.kv_group_size,
        dtype: match args.dtype {
            DtypeArg::F32 => Dtype::F32,
            DtypeArg::F64 => Dtype::F64,
        },
    };
    if let Err(e) = std::fs::create_dir_all(&args.out) {
        return fail(EXIT_INPUT, format!("{}: {e}", args.out.display()));
    }
    match write_fixture_manifest(&spec, &layout, &args.out) {
        Ok(m) => {
            println!("wrote {} entries to {}", m.entries.len(), args.out.display());
            ExitCode::SUCCESS
        }
        Err(e) => fail(EXIT_INPUT, e),
    }
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Analyze(args) => run_analyze(args),
        Command::Render(args) => match read_report(&args.report) {
            Ok(report) => {
                print!("{}", render(&report, args.format));
                ExitCode::SUCCESS
            }
            Err(e) => fail(EXIT_INPUT, e),
        },
        Command::Selftest(args) => run_selftest(args),
        Command::Fixture(args) => run_fixture(args),
    }
}
