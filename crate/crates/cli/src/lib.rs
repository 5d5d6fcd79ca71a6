//! The `taborder` executable: data generation, training, evaluation,
//! imputation, intervention and theory checks, each writing plain CSV/JSON
//! artifacts plus a `manifest.json` into `--out`.

mod commands;
mod context;
pub mod order_spec;
pub mod sidecar;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser};

pub use commands::Command;
pub use context::{Artifact, RunManifest};

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 1;
    pub const IO: i32 = 2;
    pub const NUMERIC: i32 = 3;
}

#[derive(Debug, Parser)]
#[command(name = "taborder", version, about = "Order-constrained tabular transformer experiments")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, serde::Serialize)]
pub struct GlobalArgs {
    /// Run configuration JSON (`{"model": {...}, "train": {...}}`).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Refuse any nondeterministic execution path.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// 64-bit arithmetic for training and inference.
    #[arg(long = "f64", global = true)]
    pub f64: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => exit::USAGE,
            Self::Io(_) => exit::IO,
            Self::Numeric(_) => exit::NUMERIC,
        }
    }
}

impl From<taborder::Error> for CliError {
    fn from(e: taborder::Error) -> Self {
        use taborder::Error as E;
        match e {
            E::Io { .. } | E::Csv(_) | E::Json(_) | E::Checkpoint(_) => Self::Io(e.to_string()),
            E::InvalidArgument(_) => Self::Usage(e.to_string()),
            E::Tensor(taborder_tensor::TensorError::InvalidArgument(_))
            | E::Tensor(taborder_tensor::TensorError::ShapeMismatch { .. }) => Self::Usage(e.to_string()),
            E::Tensor(_) | E::NonFinite(_) | E::Degenerate(_) => Self::Numeric(e.to_string()),
        }
    }
}

impl From<order_spec::OrderSpecError> for CliError {
    fn from(e: order_spec::OrderSpecError) -> Self {
        Self::Usage(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Worker count from `TABORDER_THREADS`, if set.
pub fn thread_cap() -> CliResult<Option<usize>> {
    match std::env::var("TABORDER_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(CliError::Usage(format!("TABORDER_THREADS must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(None),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::OK };
            let _ = e.print();
            return code;
        }
    };
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let result = thread_cap().and_then(|cap| {
        if let Some(n) = cap {
            // A pool may already exist when `run` is called twice in one process.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
        commands::execute(&cli, &argv)
    });
    match result {
        Ok(()) => exit::OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
