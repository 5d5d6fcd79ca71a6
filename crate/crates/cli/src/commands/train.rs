use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::Serialize;
use taborder::model::{MaskSpec, ModelConfig, ModelParams};
use taborder::rng::{substream, Stream};
use taborder::training::{
    finetune_trainer, Checkpoint, FinetuneConfig, LossTrace, OrderMode, SyntheticSource, TrainConfig, Trainer,
};
use taborder_tensor::Scalar;

use super::to_json;
use crate::context::{with_params, AnyCheckpoint, Ctx};
use crate::order_spec::{format_order, OrderSpec};
use crate::sidecar::{sidecar_path, DagSidecar};
use crate::{CliError, CliResult};

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Desk,
    Full,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Built-in model and training sizes; cannot be combined with --config.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub mask_rate: Option<f64>,
    #[arg(long)]
    pub warmup_ratio: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub max_rows: Option<usize>,
    /// Progress line every this many steps (0 = silent).
    #[arg(long)]
    pub log_every: Option<u64>,
    /// Stop (and checkpoint) once this many steps are done; resume later
    /// with `--resume`.
    #[arg(long)]
    pub stop_after: Option<u64>,
    /// Continue from a checkpoint; its stored training settings apply.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

fn apply_overrides(tc: &mut TrainConfig, a: &TrainArgs) {
    if let Some(v) = a.steps {
        tc.total_steps = v;
    }
    if let Some(v) = a.batch_size {
        tc.batch_size = v;
    }
    if let Some(v) = a.lr {
        tc.lr = v;
    }
    if let Some(v) = a.mask_rate {
        tc.mask_rate = v;
    }
    if let Some(v) = a.warmup_ratio {
        tc.warmup_ratio = v;
    }
    if let Some(v) = a.weight_decay {
        tc.weight_decay = v;
    }
    if a.max_rows.is_some() {
        tc.max_rows = a.max_rows;
    }
    if let Some(v) = a.log_every {
        tc.eval_every = v;
    }
}

fn run_trainer<T: Scalar>(ctx: &mut Ctx, mut trainer: Trainer<T>, stop_after: Option<u64>) -> CliResult<()> {
    let source = SyntheticSource::new(trainer.config.seed, trainer.config.data.clone())?;
    let every = trainer.config.eval_every;
    let total = trainer.config.total_steps;
    let stop = stop_after.unwrap_or(total).min(total);
    let mut trace = LossTrace::default();
    while trainer.step_count() < stop {
        let r = trainer.step(&source)?;
        if every > 0 && (r.step % every == 0 || r.step + 1 == total) {
            eprintln!("step {:>6}  nll {:.4}  beta {:.2}  tau {:.3}  |g| {:.3}", r.step, r.nll, r.beta, r.tau, r.grad_norm);
        }
        trace.rows.push(r);
    }
    write_trace(ctx, "loss.csv", &trace)?;
    let ck = Checkpoint::new(trainer.params, trainer.adam, trainer.config);
    ctx.write_checkpoint("model.ck", &ck)?;
    println!("trained to step {}", ck.step);
    Ok(())
}

pub(crate) fn write_trace(ctx: &mut Ctx, name: &str, trace: &LossTrace) -> CliResult<()> {
    if let Some(r) = trace.rows.iter().find(|r| !r.nll.is_finite()) {
        return Err(CliError::Numeric(format!("loss at step {} is not finite", r.step)));
    }
    ctx.write(name, trace.to_csv_string().as_bytes())?;
    Ok(())
}

fn resume<T: Scalar>(ctx: &mut Ctx, ck: Checkpoint<T>, a: &TrainArgs) -> CliResult<()> {
    let mut tc = ck.train.clone();
    apply_overrides(&mut tc, a);
    if tc.seed != ck.rng.master_seed || tc.batch_size != ck.train.batch_size {
        return Err(CliError::Usage("resume cannot change the seed or batch size".into()));
    }
    ctx.run.model = ck.params.config().clone();
    ctx.run.train = tc.clone();
    let mut trainer = Trainer::from_params(ck.params, tc, OrderMode::Learned)?;
    trainer.adam = ck.adam;
    run_trainer(ctx, trainer, a.stop_after)
}

pub(crate) fn train(ctx: &mut Ctx, a: &TrainArgs) -> CliResult<serde_json::Value> {
    if let Some(path) = &a.resume {
        if a.preset.is_some() {
            return Err(CliError::Usage("--resume cannot be combined with --preset".into()));
        }
        if ctx.global.seed.is_some() {
            return Err(CliError::Usage("--resume continues the checkpoint's own seed".into()));
        }
        match ctx.read_checkpoint(path)? {
            AnyCheckpoint::F32(ck) if !ctx.global.f64 => resume(ctx, ck, a)?,
            AnyCheckpoint::F64(ck) if ctx.global.f64 => resume(ctx, ck, a)?,
            _ => return Err(CliError::Usage("checkpoint precision differs from --f64 setting".into())),
        }
        return Ok(to_json(a));
    }
    if a.preset.is_some() && ctx.global.config.is_some() {
        return Err(CliError::Usage("--preset cannot be combined with --config".into()));
    }
    match a.preset {
        Some(Preset::Desk) => {
            ctx.run.model = ModelConfig::desk();
            ctx.run.train = TrainConfig { seed: ctx.seed, ..TrainConfig::desk() };
        }
        Some(Preset::Full) => {
            ctx.run.model = ModelConfig::full();
            ctx.run.train = TrainConfig { seed: ctx.seed, ..TrainConfig::full() };
        }
        None => {}
    }
    apply_overrides(&mut ctx.run.train, a);
    ctx.run.validate()?;
    let (model, tc) = (ctx.run.model.clone(), ctx.run.train.clone());
    if ctx.global.f64 {
        run_trainer(ctx, Trainer::<f64>::new(&model, tc)?, a.stop_after)?;
    } else {
        run_trainer(ctx, Trainer::<f32>::new(&model, tc)?, a.stop_after)?;
    }
    Ok(to_json(a))
}

#[derive(Debug, Args, Serialize)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Table to adapt to (CSV, empty field = missing).
    #[arg(long)]
    pub data: PathBuf,
    /// DAG sidecar for `correct`/`reversed`; defaults to `<data>.dag.json`.
    #[arg(long)]
    pub dag: Option<PathBuf>,
    /// `learned`, or one fixed order (`correct`, `reversed`, `3,1,2`).
    #[arg(long, default_value = "learned")]
    pub order: String,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub mask_rate: Option<f64>,
    #[arg(long)]
    pub max_rows: Option<usize>,
}

/// `learned`, or a spec naming exactly one order for a `d`-column table.
pub(crate) fn order_mode(ctx: &mut Ctx, spec: &str, sidecar: Option<&DagSidecar>, d: usize) -> CliResult<(OrderMode, String)> {
    if spec.trim() == "learned" {
        return Ok((OrderMode::Learned, "learned".into()));
    }
    if spec.trim() == "all-ones" {
        return Ok((OrderMode::Fixed(MaskSpec::all_ones(d)), "all-ones".into()));
    }
    let parsed: OrderSpec = spec.parse()?;
    let dag = sidecar.map(|s| s.dag()).transpose()?;
    let mut rng = substream(ctx.seed, Stream::Eval, 0);
    let orders = parsed.resolve(dag.as_ref(), d, &mut rng)?;
    if orders.len() != 1 {
        return Err(CliError::Usage(format!("--order {spec} must name a single order")));
    }
    let o = &orders[0].order;
    Ok((OrderMode::Fixed(MaskSpec::from_order(o)), format_order(o, " ")))
}

pub(crate) fn read_sidecar(ctx: &mut Ctx, explicit: Option<&PathBuf>, data: &std::path::Path) -> CliResult<Option<DagSidecar>> {
    let path = match explicit {
        Some(p) => p.clone(),
        None => {
            let p = sidecar_path(data);
            if !p.exists() {
                return Ok(None);
            }
            p
        }
    };
    let bytes = ctx.read_input(&path)?;
    let s = DagSidecar::from_json(&String::from_utf8_lossy(&bytes))
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(Some(s))
}

fn finetune_impl<T: Scalar>(
    ctx: &mut Ctx,
    params: &ModelParams<T>,
    table: &taborder::Table,
    cfg: &FinetuneConfig,
    mode: OrderMode,
) -> CliResult<()> {
    let (trainer, trace) = finetune_trainer(params, table, cfg, mode)?;
    write_trace(ctx, "loss.csv", &trace)?;
    let ck = Checkpoint::new(trainer.params, trainer.adam, trainer.config);
    ctx.write_checkpoint("finetuned.ck", &ck)?;
    println!("fine-tuned for {} steps", ck.step);
    Ok(())
}

pub(crate) fn finetune_config(ctx: &Ctx, steps: Option<u64>, lr: Option<f64>, mask_rate: Option<f64>, max_rows: Option<usize>) -> FinetuneConfig {
    let mut cfg = FinetuneConfig {
        seed: ctx.seed,
        ..FinetuneConfig::default()
    };
    if let Some(v) = steps {
        cfg.steps = v;
    }
    if let Some(v) = lr {
        cfg.lr = v;
    }
    if let Some(v) = mask_rate {
        cfg.mask_rate = v;
    }
    if max_rows.is_some() {
        cfg.max_rows = max_rows;
    }
    cfg
}

pub(crate) fn finetune(ctx: &mut Ctx, a: &FinetuneArgs) -> CliResult<serde_json::Value> {
    let ck = ctx.read_checkpoint(&a.checkpoint)?;
    let table = ctx.read_table(&a.data)?;
    let sidecar = read_sidecar(ctx, a.dag.as_ref(), &a.data)?;
    let (mode, label) = order_mode(ctx, &a.order, sidecar.as_ref(), table.d())?;
    let cfg = finetune_config(ctx, a.steps, a.lr, a.mask_rate, a.max_rows);
    if cfg.steps == 0 {
        return Err(CliError::Usage("--steps must be at least 1".into()));
    }
    let params = ck.params(ctx.global.f64);
    with_params!(&params, p => {
        ctx.run.model = p.config().clone();
        finetune_impl(ctx, p, &table, &cfg, mode)?
    });
    Ok(serde_json::json!({ "args": to_json(a), "finetune": to_json(&cfg), "order": label }))
}
