//! The `speckle` command line: argument definitions, dispatch and exit codes.
//!
//! Every command writes under `--out` (default `out/`) into one of
//! `matrices/`, `datasets/`, `models/` or `reports/`, and every output
//! directory gets a `manifest.txt` holding the effective configuration.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod bench_cmd;
mod gen;
mod layout;
mod recon_cmd;
mod stream_cmd;
mod train_cmd;

pub use layout::{parse_shape, ArchChoice, OutLayout};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_DATA: i32 = 4;
pub const EXIT_RUNTIME: i32 = 5;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] speckle_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use speckle_core::ErrorCategory;
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Core(e) => match e.category() {
                ErrorCategory::Config => EXIT_CONFIG,
                ErrorCategory::Data => EXIT_DATA,
                ErrorCategory::Numerical => EXIT_RUNTIME,
            },
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Parser)]
#[command(
    name = "speckle",
    version,
    about = "Speckle spectrometer simulation and spectral reconstruction"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Seed for every random choice; one is generated and printed when absent.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for the parallel stages (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Numeric type of network weights during training and inference.
    #[arg(long, global = true, value_enum, default_value = "f32")]
    pub precision: Precision,
    /// Root of the artifact tree.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate one synthetic fiber transmission matrix.
    GenFiber(gen::GenFiberArgs),
    /// Generate an array of independent fibers.
    GenArray(gen::GenArrayArgs),
    /// Render a labelled speckle dataset through one fiber.
    GenDataset(gen::GenDatasetArgs),
    /// Train a reconstruction network on one or more datasets.
    Train(train_cmd::TrainArgs),
    /// Reconstruct spectra with Tikhonov, compressive sensing or a network.
    Recon(recon_cmd::ReconArgs),
    /// Run one of the benchmark experiments.
    Bench(bench_cmd::BenchArgs),
    /// Stream synthetic full-array frames through per-fiber reconstructors.
    Stream(stream_cmd::StreamArgs),
    /// Copy measured SPKT matrices into the artifact tree as a fiber array.
    ImportMatrix(gen::ImportArgs),
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp
                | clap::error::ErrorKind::DisplayVersion
                | clap::error::ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    let g = cli.global;
    let threads = match g.threads {
        Some(0) => return Err(CliError::Usage("--threads must be >= 1".into())),
        Some(n) => n,
        None => rayon::current_num_threads(),
    };
    // A private pool rather than the global one, so repeated in-process
    // dispatches can use different sizes.
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {threads} worker threads: {e}")))?;
    let ctx = layout::Context {
        out: OutLayout::new(g.out),
        seed: g.seed,
        precision: g.precision,
        threads,
    };
    pool.install(|| match cli.command {
        Command::GenFiber(a) => gen::gen_fiber(&ctx, a),
        Command::GenArray(a) => gen::gen_array(&ctx, a),
        Command::GenDataset(a) => gen::gen_dataset(&ctx, a),
        Command::Train(a) => train_cmd::train(&ctx, a),
        Command::Recon(a) => recon_cmd::recon(&ctx, a),
        Command::Bench(a) => bench_cmd::bench(&ctx, a),
        Command::Stream(a) => stream_cmd::stream(&ctx, a),
        Command::ImportMatrix(a) => gen::import(&ctx, a),
    })
}
