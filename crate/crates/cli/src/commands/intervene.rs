use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use serde::Serialize;
use taborder::metrics::mse;
use taborder::model::{MaskSpec, ModelParams};
use taborder::rng::{substream, Stream};
use taborder::scm::{apply_intervention, sample_chain, ChainKind, InterventionKind};
use taborder::training::{finetune, predict_with_context, subsample_rows, FinetuneConfig, OrderMode};
use taborder::Table;
use taborder_tensor::Scalar;

use super::train::finetune_config;
use super::{require_finite, to_json};
use crate::context::{with_params, Ctx};
use crate::{CliError, CliResult};

const Y: usize = 1;

#[derive(Debug, Args, Serialize)]
pub struct IntervenArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// gp | spline
    #[arg(long, default_value = "gp")]
    pub kind: ChainKind,
    /// mech_shift | hard
    #[arg(long, default_value = "mech_shift")]
    pub intervention: InterventionKind,
    /// Share of test rows whose Z is regenerated.
    #[arg(long, default_value_t = 0.5)]
    pub fraction: f64,
    #[arg(long, default_value_t = 5000)]
    pub n_train: usize,
    #[arg(long, default_value_t = 2500)]
    pub n_test: usize,
    #[arg(long)]
    pub finetune_steps: Option<u64>,
    /// Training rows shown to the model alongside each query chunk.
    #[arg(long, default_value_t = 256)]
    pub context_rows: usize,
    #[arg(long, default_value_t = 256)]
    pub chunk: usize,
    /// Mask configurations: `correct` (X, Y, Z), `all-ones`, `learned`.
    #[arg(long = "mask", default_values = ["correct", "all-ones"])]
    pub masks: Vec<String>,
    /// Also write per-row predictions.
    #[arg(long)]
    pub predictions: bool,
}

/// Per-configuration Y predictions on the test rows.
pub struct ChainRun {
    pub label: String,
    pub predicted: Vec<f64>,
}

fn mask_for(label: &str) -> CliResult<(OrderMode, MaskSpec)> {
    Ok(match label {
        "correct" => {
            let m = MaskSpec::from_order(&[0, 1, 2]);
            (OrderMode::Fixed(m.clone()), m)
        }
        "all-ones" => {
            let m = MaskSpec::all_ones(3);
            (OrderMode::Fixed(m.clone()), m)
        }
        "learned" => (OrderMode::Learned, MaskSpec::eval()),
        other => return Err(CliError::Usage(format!("unknown mask configuration {other:?}"))),
    })
}

fn run_one<T: Scalar>(
    params: &ModelParams<T>,
    train: &Table,
    context: &Table,
    query: &Table,
    cfg: &FinetuneConfig,
    label: &str,
    chunk: usize,
) -> CliResult<ChainRun> {
    let (mode, spec) = mask_for(label)?;
    let tuned = if cfg.steps > 0 { finetune(params, train, cfg, mode)?.0 } else { params.clone() };
    let pred = predict_with_context(&tuned, context, query, &spec, chunk)?;
    let predicted = (0..query.n()).map(|r| pred.mean[r * 3 + Y]).collect();
    Ok(ChainRun {
        label: label.to_owned(),
        predicted,
    })
}

pub(crate) fn intervene(ctx: &mut Ctx, a: &IntervenArgs) -> CliResult<serde_json::Value> {
    if a.context_rows == 0 || a.chunk == 0 {
        return Err(CliError::Usage("--context-rows and --chunk must be positive".into()));
    }
    let params = ctx.read_checkpoint(&a.checkpoint)?.params(ctx.global.f64);
    let chain = sample_chain(a.kind, a.n_train, a.n_test, &mut substream(ctx.seed, Stream::Data, 0))?;
    let shifted = apply_intervention(
        &chain.test,
        &chain.scm,
        a.intervention,
        a.fraction,
        &mut substream(ctx.seed, Stream::Intervention, 0),
    )?;
    let context = subsample_rows(&chain.train, a.context_rows, &mut substream(ctx.seed, Stream::Eval, 0))?;
    let mut query = shifted.table.clone();
    for r in 0..query.n() {
        query.set_missing(r, Y);
    }
    let truth: Vec<f64> = (0..query.n()).map(|r| shifted.table.get(r, Y).expect("test is complete")).collect();
    let cfg = finetune_config(ctx, a.finetune_steps, None, None, Some(a.context_rows));
    let mut csv = String::from("config,split,rows,mse\n");
    let mut rows = String::from("config,row,x,y,predicted,intervened\n");
    for label in &a.masks {
        let run = with_params!(&params, p => run_one(p, &chain.train, &context, &query, &cfg, label, a.chunk)?);
        for (split, want) in [("iid", false), ("intervened", true)] {
            let sel: Vec<bool> = shifted.intervened.iter().map(|&f| f == want).collect();
            let count = sel.iter().filter(|&&s| s).count();
            if count == 0 {
                continue;
            }
            let e = require_finite("MSE", mse(&truth, &run.predicted, &sel)?)?;
            let _ = writeln!(csv, "{},{split},{count},{e}", run.label);
            println!("{:<9} {split:<10} rows {count:>5}  MSE {e:.6}", run.label);
        }
        if a.predictions {
            for r in 0..query.n() {
                let x = shifted.table.get(r, 0).expect("complete");
                let _ = writeln!(rows, "{},{r},{x},{},{},{}", run.label, truth[r], run.predicted[r], shifted.intervened[r]);
            }
        }
    }
    ctx.write("intervene.csv", csv.as_bytes())?;
    if a.predictions {
        ctx.write("intervene_predictions.csv", rows.as_bytes())?;
    }
    Ok(serde_json::json!({ "args": to_json(a), "finetune": to_json(&cfg) }))
}
