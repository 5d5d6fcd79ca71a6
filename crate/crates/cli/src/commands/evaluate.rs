use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::Serialize;
use taborder::baselines::{greedy_residual_order, mean_impute, random_order, variance_sort_order};
use taborder::metrics::{compare_orders, heldout_nll, sachs, topological_divergence};
use taborder::model::{predict, MaskSpec};
use taborder::rng::{substream, Stream};
use taborder::training::{infer_order, mask_nonempty, Standardization};
use taborder::Table;

use super::{load_datasets, require_finite, to_json};
use crate::context::{with_params, Ctx};
use crate::order_spec::{format_order, OrderSpec};
use crate::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderMethod {
    Taborder,
    Random,
    Varsort,
    Greedy,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalOrderArgs {
    /// Directory of `*.csv` tables with `.dag.json` sidecars.
    #[arg(long, required_unless_present = "sachs")]
    pub datasets: Option<PathBuf>,
    /// Score the embedded published per-condition orders against the
    /// 11-node signaling consensus graph instead.
    #[arg(long, conflicts_with_all = ["datasets", "method", "checkpoint"])]
    pub sachs: bool,
    #[arg(long, value_enum)]
    pub method: Option<OrderMethod>,
    /// Model checkpoint for `--method taborder`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Neighbours for the greedy residual baseline.
    #[arg(long, default_value_t = 20)]
    pub k: usize,
    /// Also write per-node rank shifts and flip fractions.
    #[arg(long)]
    pub compare: bool,
    /// Reference condition for `--sachs --compare`.
    #[arg(long, default_value = "cd3cd28")]
    pub base: String,
}

fn complete(table: &Table) -> CliResult<Table> {
    Ok(if table.missing_count() > 0 { mean_impute(table)? } else { table.clone() })
}

pub(crate) fn eval_order(ctx: &mut Ctx, a: &EvalOrderArgs) -> CliResult<serde_json::Value> {
    if a.sachs {
        return eval_sachs(ctx, a);
    }
    let method = a.method.unwrap_or(OrderMethod::Taborder);
    let dir = a.datasets.as_ref().expect("clap enforces --datasets");
    let params = match (method, &a.checkpoint) {
        (OrderMethod::Taborder, Some(p)) => Some(ctx.read_checkpoint(p)?.params(ctx.global.f64)),
        (OrderMethod::Taborder, None) => return Err(CliError::Usage("--method taborder needs --checkpoint".into())),
        (_, Some(_)) => return Err(CliError::Usage("--checkpoint only applies to --method taborder".into())),
        _ => None,
    };
    let datasets = load_datasets(ctx, dir, true)?;
    let mut csv = String::from("dataset,d,edges,raw,normalized,order\n");
    let mut cmp = String::from("dataset,node,rank_shift,flip_fraction\n");
    let mut total = 0.0;
    for (i, ds) in datasets.iter().enumerate() {
        let dag = ds.sidecar.as_ref().expect("graph required").dag()?;
        let order = match method {
            OrderMethod::Taborder => with_params!(params.as_ref().expect("loaded"), p => infer_order(p, &ds.table)?.order),
            OrderMethod::Random => random_order(ds.table.d(), &mut substream(ctx.seed, Stream::Baseline, i as u64)),
            OrderMethod::Varsort => variance_sort_order(&complete(&ds.table)?)?,
            OrderMethod::Greedy => greedy_residual_order(&complete(&ds.table)?, a.k)?,
        };
        let div = topological_divergence(&order, &dag)?;
        total += div.normalized;
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            ds.name,
            dag.d(),
            dag.edges().len(),
            div.raw,
            div.normalized,
            format_order(&order, " ")
        );
        if a.compare {
            let c = compare_orders(&order, dag.topo_order(), &dag)?;
            for node in 0..dag.d() {
                let _ = writeln!(cmp, "{},{},{},{}", ds.name, node + 1, c.per_node_rank_shift[node], c.per_node_flip_fraction[node]);
            }
        }
    }
    let mean = require_finite("mean divergence", total / datasets.len() as f64)?;
    ctx.write("eval_order.csv", csv.as_bytes())?;
    if a.compare {
        ctx.write("compare.csv", cmp.as_bytes())?;
    }
    println!("{} datasets, mean normalized d_TOP {mean:.4}", datasets.len());
    Ok(to_json(a))
}

fn eval_sachs(ctx: &mut Ctx, a: &EvalOrderArgs) -> CliResult<serde_json::Value> {
    let dag = sachs::consensus_dag();
    let base = sachs::CONDITION_ORDERS
        .iter()
        .find(|c| c.0 == a.base)
        .ok_or_else(|| CliError::Usage(format!("unknown condition {:?}", a.base)))?;
    let base_order = sachs::order_indices(&base.1);
    let mut csv = String::from("condition,d,edges,raw,normalized,order\n");
    let mut cmp = String::from("condition,node,rank_shift,flip_fraction\n");
    for (cond, names, _) in sachs::CONDITION_ORDERS.iter() {
        let order = sachs::order_indices(names);
        let div = topological_divergence(&order, &dag)?;
        let _ = writeln!(csv, "{cond},{},{},{},{},{}", dag.d(), dag.edges().len(), div.raw, div.normalized, names.join(" "));
        if a.compare {
            let c = compare_orders(&order, &base_order, &dag)?;
            for (node, name) in sachs::NODES.iter().enumerate() {
                let _ = writeln!(cmp, "{cond},{name},{},{}", c.per_node_rank_shift[node], c.per_node_flip_fraction[node]);
            }
        }
    }
    ctx.write("eval_order.csv", csv.as_bytes())?;
    if a.compare {
        ctx.write("compare.csv", cmp.as_bytes())?;
    }
    println!("{} conditions scored against the consensus graph", sachs::CONDITION_ORDERS.len());
    Ok(to_json(a))
}

#[derive(Debug, Args, Serialize)]
pub struct AblationArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Directory of `*.csv` tables with `.dag.json` sidecars.
    #[arg(long)]
    pub datasets: PathBuf,
    /// Orders to impose; repeatable.
    #[arg(long = "order", default_values = ["correct", "reversed", "random:10"])]
    pub orders: Vec<String>,
    /// Fraction of observed cells held out for scoring.
    #[arg(long, default_value_t = 0.2)]
    pub mask_rate: f64,
}

pub(crate) fn order_ablation(ctx: &mut Ctx, a: &AblationArgs) -> CliResult<serde_json::Value> {
    let specs: Vec<OrderSpec> = a.orders.iter().map(|s| s.parse()).collect::<Result<_, _>>()?;
    let params = ctx.read_checkpoint(&a.checkpoint)?.params(ctx.global.f64);
    let datasets = load_datasets(ctx, &a.datasets, false)?;
    let mut csv = String::from("dataset,order,imposed_dtop,nll\n");
    for (i, ds) in datasets.iter().enumerate() {
        let dag = ds.sidecar.as_ref().map(|s| s.dag()).transpose()?;
        let z = Standardization::fit(&ds.table).apply(&ds.table)?;
        let task = mask_nonempty(&z, a.mask_rate, &mut substream(ctx.seed, Stream::Mask, i as u64))?;
        let input = task.input()?;
        let mut rng = substream(ctx.seed, Stream::Eval, i as u64);
        for spec in &specs {
            for lo in spec.resolve(dag.as_ref(), ds.table.d(), &mut rng)? {
                let out = with_params!(&params, p => predict(p, &input, &MaskSpec::from_order(&lo.order))?);
                let nll = heldout_nll(&task.truth, &out.mu, &out.sigma2_point, &task.targets)?;
                let nll = require_finite("held-out NLL", nll)?;
                let dtop = match &dag {
                    Some(g) => topological_divergence(&lo.order, g)?.normalized.to_string(),
                    None => String::new(),
                };
                let _ = writeln!(csv, "{},{},{dtop},{nll}", ds.name, lo.label);
            }
        }
    }
    ctx.write("ablation.csv", csv.as_bytes())?;
    println!("scored {} datasets", datasets.len());
    Ok(to_json(a))
}
