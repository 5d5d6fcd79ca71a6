use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use taborder::training::{checkpoint_dtype, sha256_hex, Checkpoint, RunConfig};
use taborder::Table;
use taborder_tensor::Scalar;

use crate::{CliError, CliResult, GlobalArgs};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Artifact {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Everything needed to rerun a command.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub version: String,
    pub seed: u64,
    pub dtype: String,
    pub deterministic: bool,
    pub threads: usize,
    pub config: serde_json::Value,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    pub wall_clock_seconds: f64,
}

pub(crate) fn io(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Per-run state: resolved configuration, output directory, artifact log.
pub(crate) struct Ctx {
    pub global: GlobalArgs,
    pub run: RunConfig,
    pub seed: u64,
    out: PathBuf,
    command: String,
    argv: Vec<String>,
    started: Instant,
    inputs: Vec<Artifact>,
    outputs: Vec<Artifact>,
}

impl Ctx {
    pub fn new(global: &GlobalArgs, command: &str, argv: &[String]) -> CliResult<Self> {
        let mut run = match &global.config {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| io(p, e))?;
                RunConfig::from_json(&text).map_err(|e| match e {
                    taborder::Error::Json(j) => CliError::Io(format!("{}: {j}", p.display())),
                    other => CliError::Usage(format!("{}: {other}", p.display())),
                })?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = global.seed {
            run.train.seed = s;
        }
        let seed = run.train.seed;
        let mut ctx = Self {
            global: global.clone(),
            run,
            seed,
            out: global.out.clone(),
            command: command.to_owned(),
            argv: argv.to_vec(),
            started: Instant::now(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        };
        if let Some(p) = &global.config {
            ctx.record_input(p)?;
        }
        fs::create_dir_all(&ctx.out).map_err(|e| io(&ctx.out, e))?;
        Ok(ctx)
    }

    pub fn dtype(&self) -> &'static str {
        if self.global.f64 {
            "f64"
        } else {
            "f32"
        }
    }

    pub fn out_path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn artifact(path: &Path, bytes: &[u8]) -> Artifact {
        Artifact {
            path: path.display().to_string(),
            bytes: bytes.len() as u64,
            sha256: sha256_hex(bytes),
        }
    }

    pub fn read_input(&mut self, path: &Path) -> CliResult<Vec<u8>> {
        let bytes = fs::read(path).map_err(|e| io(path, e))?;
        self.inputs.push(Self::artifact(path, &bytes));
        Ok(bytes)
    }

    fn record_input(&mut self, path: &Path) -> CliResult<()> {
        self.read_input(path).map(|_| ())
    }

    pub fn read_table(&mut self, path: &Path) -> CliResult<Table> {
        let bytes = self.read_input(path)?;
        Table::from_csv_bytes(&bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<PathBuf> {
        let path = self.out_path(name);
        fs::write(&path, bytes).map_err(|e| io(&path, e))?;
        self.outputs.push(Self::artifact(&path, bytes));
        Ok(path)
    }

    pub fn write_table(&mut self, name: &str, table: &Table) -> CliResult<PathBuf> {
        self.write(name, table.to_csv_string().as_bytes())
    }

    pub fn write_checkpoint<T: Scalar>(&mut self, name: &str, ck: &Checkpoint<T>) -> CliResult<PathBuf> {
        self.write(name, &ck.to_bytes())
    }

    /// Loads a checkpoint of either precision.
    pub fn read_checkpoint(&mut self, path: &Path) -> CliResult<AnyCheckpoint> {
        let bytes = self.read_input(path)?;
        let wrap = |e: taborder::Error| CliError::Io(format!("{}: {e}", path.display()));
        Ok(match checkpoint_dtype(&bytes).map_err(wrap)?.as_str() {
            "f64" => AnyCheckpoint::F64(Checkpoint::from_bytes(&bytes).map_err(wrap)?),
            _ => AnyCheckpoint::F32(Checkpoint::from_bytes(&bytes).map_err(wrap)?),
        })
    }

    /// Writes `manifest.json`; `config` is the command's resolved settings.
    pub fn finish(self, config: serde_json::Value) -> CliResult<()> {
        let manifest = RunManifest {
            command: self.command.clone(),
            argv: self.argv.clone(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            seed: self.seed,
            dtype: self.dtype().to_owned(),
            deterministic: self.global.deterministic,
            threads: rayon::current_num_threads(),
            config: serde_json::json!({
                "global": self.global,
                "run": self.run,
                "command": config,
            }),
            inputs: self.inputs,
            outputs: self.outputs,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
        };
        let path = self.out.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, text).map_err(|e| io(&path, e))
    }
}

pub(crate) enum AnyCheckpoint {
    F32(Checkpoint<f32>),
    F64(Checkpoint<f64>),
}

/// Model parameters in the precision selected for the run.
pub(crate) enum AnyParams {
    F32(taborder::model::ModelParams<f32>),
    F64(taborder::model::ModelParams<f64>),
}

impl AnyCheckpoint {
    /// Parameters cast to 64 bits when `f64` is set, otherwise as stored.
    pub fn params(&self, f64: bool) -> AnyParams {
        match (self, f64) {
            (Self::F32(c), false) => AnyParams::F32(c.params.clone()),
            (Self::F32(c), true) => AnyParams::F64(c.params.cast()),
            (Self::F64(c), _) => AnyParams::F64(c.params.clone()),
        }
    }
}

/// Runs `$body` with `$p` bound to the concrete `ModelParams<T>`.
macro_rules! with_params {
    ($any:expr, $p:ident => $body:expr) => {
        match $any {
            $crate::context::AnyParams::F32($p) => $body,
            $crate::context::AnyParams::F64($p) => $body,
        }
    };
}
pub(crate) use with_params;
