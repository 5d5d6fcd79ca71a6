use clap::Args;
use rayon::prelude::*;
use serde::Serialize;
use taborder::rng::{substream, Stream};
use taborder::scm::NoiseKind;
use taborder::training::{mask_entries, SyntheticSource};

use super::to_json;
use crate::context::Ctx;
use crate::sidecar::DagSidecar;
use crate::{CliError, CliResult};

#[derive(Debug, Args, Serialize)]
pub struct GenerateArgs {
    /// Number of datasets.
    #[arg(long, default_value_t = 1)]
    pub num: u64,
    /// Sum of single-parent mechanisms.
    #[arg(long, conflicts_with = "joint")]
    pub additive: bool,
    /// One joint mechanism over all parents.
    #[arg(long)]
    pub joint: bool,
    /// additive | heteroskedastic | multiplicative
    #[arg(long)]
    pub noise: Option<NoiseKind>,
    #[arg(long)]
    pub d_min: Option<usize>,
    #[arg(long)]
    pub d_max: Option<usize>,
    /// Fixed row count (otherwise drawn from the configured range).
    #[arg(long)]
    pub rows: Option<usize>,
    #[arg(long)]
    pub root_prob: Option<f64>,
    #[arg(long)]
    pub features: Option<usize>,
    /// Also write an MCAR-masked copy at this rate, keeping the full table as
    /// `*.truth.csv`.
    #[arg(long)]
    pub missing: Option<f64>,
}

pub(crate) fn generate(ctx: &mut Ctx, a: &GenerateArgs) -> CliResult<serde_json::Value> {
    let mut data = ctx.run.train.data.clone();
    if a.additive {
        data.additive = true;
    }
    if a.joint {
        data.additive = false;
    }
    if let Some(n) = a.noise {
        data.noise = n;
    }
    if let Some(v) = a.d_min {
        data.d_min = v;
    }
    if let Some(v) = a.d_max {
        data.d_max = v;
    }
    if let Some(v) = a.rows {
        data.n_min = v;
        data.n_max = v;
    }
    if let Some(v) = a.root_prob {
        data.root_prob = v;
    }
    if let Some(v) = a.features {
        data.features = v;
    }
    if let Some(q) = a.missing {
        if !(q > 0.0 && q < 1.0) {
            return Err(CliError::Usage(format!("--missing {q} outside (0, 1)")));
        }
    }
    ctx.run.train.data = data.clone();
    let seed = ctx.seed;
    let source = SyntheticSource::new(seed, data.clone())?;
    let made: Vec<_> = (0..a.num)
        .into_par_iter()
        .map(|i| source.dataset_with_dag(i))
        .collect::<Result<_, _>>()?;
    for (i, (dag, table)) in made.into_iter().enumerate() {
        let i = i as u64;
        let stem = format!("dataset_{i:04}");
        let mut sidecar = DagSidecar::new(&dag, seed, i, data.clone());
        if let Some(q) = a.missing {
            let task = mask_entries(&table, q, &mut substream(seed, Stream::Mask, i))?;
            ctx.write_table(&format!("{stem}.csv"), &task.masked)?;
            ctx.write_table(&format!("{stem}.truth.csv"), &table)?;
            sidecar.missing_rate = Some(q);
        } else {
            ctx.write_table(&format!("{stem}.csv"), &table)?;
        }
        ctx.write(&format!("{stem}.dag.json"), sidecar.to_json().as_bytes())?;
    }
    println!("wrote {} datasets to {}", a.num, ctx.out_path("").display());
    Ok(to_json(a))
}
