use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::Serialize;
use taborder::baselines::{knn_impute, mean_impute};
use taborder::metrics::imputation_rmse;
use taborder::model::MaskSpec;
use taborder::training::{finetune, predict_table, OrderMode};
use taborder::Table;

use super::train::{finetune_config, order_mode, read_sidecar};
use super::{require_finite, to_json};
use crate::context::{with_params, Ctx};
use crate::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ImputeMethod {
    Mean,
    Knn,
    Taborder,
}

#[derive(Debug, Args, Serialize)]
pub struct ImputeArgs {
    /// Table with missing cells (empty CSV fields).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "taborder")]
    pub method: ImputeMethod,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Per-table fine-tuning steps before predicting (0 = none).
    #[arg(long)]
    pub finetune_steps: Option<u64>,
    /// `learned`, `all-ones`, or one fixed order.
    #[arg(long, default_value = "learned")]
    pub order: String,
    /// Complete table; cells missing in `--data` but present here are scored.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

pub(crate) fn impute(ctx: &mut Ctx, a: &ImputeArgs) -> CliResult<serde_json::Value> {
    let table = ctx.read_table(&a.data)?;
    let mut extra = serde_json::Value::Null;
    let filled = match a.method {
        ImputeMethod::Mean => mean_impute(&table)?,
        ImputeMethod::Knn => knn_impute(&table, a.k)?,
        ImputeMethod::Taborder => {
            let path = a
                .checkpoint
                .as_ref()
                .ok_or_else(|| CliError::Usage("--method taborder needs --checkpoint".into()))?;
            let params = ctx.read_checkpoint(path)?.params(ctx.global.f64);
            let sidecar = read_sidecar(ctx, None, &a.data)?;
            let (mode, label) = order_mode(ctx, &a.order, sidecar.as_ref(), table.d())?;
            let cfg = finetune_config(ctx, a.finetune_steps, None, None, None);
            let eval_mask = match &mode {
                OrderMode::Fixed(m) => m.clone(),
                _ => MaskSpec::eval(),
            };
            extra = serde_json::json!({ "finetune": to_json(&cfg), "order": label });
            with_params!(&params, p => {
                let tuned = if cfg.steps > 0 { finetune(p, &table, &cfg, mode)?.0 } else { p.clone() };
                predict_table(&tuned, &table, &eval_mask)?.fill(&table)?
            })
        }
    };
    ctx.write_table("imputed.csv", &filled)?;
    if let Some(tp) = &a.truth {
        let truth = ctx.read_table(tp)?;
        let rmse = score(&table, &filled, &truth)?;
        let targets = (0..table.n() * table.d())
            .filter(|&i| table.mask()[i] && !truth.mask()[i])
            .count();
        let mut report = String::from("method,targets,rmse\n");
        let _ = writeln!(report, "{},{targets},{rmse}", to_json(&a.method).as_str().unwrap_or("?"));
        ctx.write("impute_report.csv", report.as_bytes())?;
        println!("RMSE {rmse:.6} over {targets} cells");
    }
    Ok(serde_json::json!({ "args": to_json(a), "model": extra }))
}

fn score(data: &Table, filled: &Table, truth: &Table) -> CliResult<f64> {
    if (truth.n(), truth.d()) != (data.n(), data.d()) {
        return Err(CliError::Usage(format!(
            "truth is {}x{}, data is {}x{}",
            truth.n(),
            truth.d(),
            data.n(),
            data.d()
        )));
    }
    let targets: Vec<bool> = (0..data.n() * data.d()).map(|i| data.mask()[i] && !truth.mask()[i]).collect();
    if !targets.iter().any(|&t| t) {
        return Err(CliError::Usage("no cell is missing in --data and present in --truth".into()));
    }
    let rmse = imputation_rmse(truth.values(), filled.values(), &targets)?;
    require_finite("RMSE", rmse)
}
