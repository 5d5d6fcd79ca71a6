mod data;
mod evaluate;
mod impute;
mod intervene;
mod theory;
mod train;

use std::fs;
use std::path::{Path, PathBuf};

use clap::Subcommand;

use crate::context::{io, Ctx};
use crate::sidecar::{sidecar_path, DagSidecar};
use crate::{CliError, CliResult, Cli};

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample synthetic SCM tables with DAG sidecars.
    Generate(data::GenerateArgs),
    /// Pretrain on the synthetic family.
    Train(train::TrainArgs),
    /// Adapt a checkpoint to one table.
    Finetune(train::FinetuneArgs),
    /// Score inferred or baseline orders against known graphs.
    EvalOrder(evaluate::EvalOrderArgs),
    /// Fill missing cells.
    Impute(impute::ImputeArgs),
    /// Chain experiment: prediction error with and without an intervention on Z.
    Intervene(intervene::IntervenArgs),
    /// Held-out NLL under imposed orders.
    OrderAblation(evaluate::AblationArgs),
    /// Forward/backward variance-ratio checks of the missingness gain.
    TheoryCheck(theory::TheoryArgs),
    /// Finite-difference check of the full model's gradients.
    GradCheck(theory::GradCheckArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Generate(_) => "generate",
            Self::Train(_) => "train",
            Self::Finetune(_) => "finetune",
            Self::EvalOrder(_) => "eval-order",
            Self::Impute(_) => "impute",
            Self::Intervene(_) => "intervene",
            Self::OrderAblation(_) => "order-ablation",
            Self::TheoryCheck(_) => "theory-check",
            Self::GradCheck(_) => "grad-check",
        }
    }
}

pub(crate) fn execute(cli: &Cli, argv: &[String]) -> CliResult<()> {
    let mut ctx = Ctx::new(&cli.global, cli.command.name(), argv)?;
    let config = match &cli.command {
        Command::Generate(a) => data::generate(&mut ctx, a)?,
        Command::Train(a) => train::train(&mut ctx, a)?,
        Command::Finetune(a) => train::finetune(&mut ctx, a)?,
        Command::EvalOrder(a) => evaluate::eval_order(&mut ctx, a)?,
        Command::Impute(a) => impute::impute(&mut ctx, a)?,
        Command::Intervene(a) => intervene::intervene(&mut ctx, a)?,
        Command::OrderAblation(a) => evaluate::order_ablation(&mut ctx, a)?,
        Command::TheoryCheck(a) => theory::theory_check(&mut ctx, a)?,
        Command::GradCheck(a) => theory::grad_check(&mut ctx, a)?,
    };
    ctx.finish(config)
}

/// A generated (or user-supplied) table and its optional graph.
pub(crate) struct Dataset {
    pub name: String,
    pub table: taborder::Table,
    pub sidecar: Option<DagSidecar>,
}

/// Every `*.csv` in `dir` except `*.truth.csv`, sorted by name, with the
/// sibling `.dag.json` when present.
pub(crate) fn load_datasets(ctx: &mut Ctx, dir: &Path, need_graph: bool) -> CliResult<Vec<Dataset>> {
    let entries = fs::read_dir(dir).map_err(|e| io(dir, e))?;
    let mut files: Vec<PathBuf> = Vec::new();
    for e in entries {
        let p = e.map_err(|e| io(dir, e))?.path();
        let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if name.ends_with(".csv") && !name.ends_with(".truth.csv") {
            files.push(p);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(CliError::Io(format!("{}: no .csv datasets", dir.display())));
    }
    let mut out = Vec::with_capacity(files.len());
    for f in files {
        let table = ctx.read_table(&f)?;
        let sc = sidecar_path(&f);
        let sidecar = if sc.exists() {
            let bytes = ctx.read_input(&sc)?;
            let text = String::from_utf8_lossy(&bytes);
            let s = DagSidecar::from_json(&text).map_err(|e| CliError::Io(format!("{}: {e}", sc.display())))?;
            if s.d != table.d() {
                return Err(CliError::Io(format!("{}: graph has {} nodes, table {} columns", sc.display(), s.d, table.d())));
            }
            Some(s)
        } else if need_graph {
            return Err(CliError::Io(format!("{}: missing DAG sidecar", sc.display())));
        } else {
            None
        };
        let name = f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        out.push(Dataset { name, table, sidecar });
    }
    Ok(out)
}

pub(crate) fn require_finite(what: &str, v: f64) -> CliResult<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::Numeric(format!("{what} is not finite ({v})")))
    }
}

pub(crate) fn to_json<T: serde::Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("arguments serialize")
}
