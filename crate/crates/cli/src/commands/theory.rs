use std::fmt::Write as _;

use clap::{Args, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use taborder::model::{grad_check_mask, model_grad_check, ModelConfig, ModelInput, ModelParams};
use taborder::rng::{substream, Stream};
use taborder::theory::{theorem_check, AnmPair, Mechanism1d, TheoremReport, DEFAULT_K};

use super::{require_finite, to_json};
use crate::context::Ctx;
use crate::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MechanismChoice {
    /// Draw tanh or cubic mechanisms with random coefficients and noise.
    Random,
    Tanh,
    Cubic,
    Linear,
}

#[derive(Debug, Args, Serialize)]
pub struct TheoryArgs {
    #[arg(long, default_value_t = 20)]
    pub instances: u64,
    /// Missingness rate of the conditioning variable.
    #[arg(long, default_value_t = 0.3)]
    pub q: f64,
    #[arg(long, default_value_t = 20_000)]
    pub n_mc: usize,
    /// Neighbours of the backward conditional-moment estimator.
    #[arg(long, default_value_t = DEFAULT_K)]
    pub k: usize,
    #[arg(long, value_enum, default_value = "random")]
    pub mechanism: MechanismChoice,
    /// Noise scale for the fixed mechanisms.
    #[arg(long, default_value_t = 0.3)]
    pub sigma: f64,
}

#[derive(Debug, Serialize)]
struct InstanceReport {
    instance: u64,
    mechanism: String,
    sigma: f64,
    #[serde(flatten)]
    report: TheoremReport,
}

fn pair_for(a: &TheoryArgs, i: u64, seed: u64) -> CliResult<AnmPair> {
    let f = match a.mechanism {
        MechanismChoice::Random => return Ok(AnmPair::random_nonlinear(&mut substream(seed, Stream::Theory, (i << 1) | 1))),
        MechanismChoice::Tanh => Mechanism1d::Tanh { a: 1.0, b: 3.0 },
        MechanismChoice::Cubic => Mechanism1d::Cubic { a: 0.5 },
        MechanismChoice::Linear => Mechanism1d::Linear { a: 1.0 },
    };
    Ok(AnmPair::new(f, a.sigma)?)
}

fn describe(f: &Mechanism1d) -> String {
    match f {
        Mechanism1d::Constant { c } => format!("constant({c})"),
        Mechanism1d::Linear { a } => format!("linear({a})"),
        Mechanism1d::Tanh { a, b } => format!("tanh({a};{b})"),
        Mechanism1d::Cubic { a } => format!("cubic({a})"),
    }
}

pub(crate) fn theory_check(ctx: &mut Ctx, a: &TheoryArgs) -> CliResult<serde_json::Value> {
    if a.instances == 0 {
        return Err(CliError::Usage("--instances must be at least 1".into()));
    }
    let seed = ctx.seed;
    let reports: Vec<InstanceReport> = (0..a.instances)
        .into_par_iter()
        .map(|i| -> CliResult<InstanceReport> {
            let pair = pair_for(a, i, seed)?;
            let report = theorem_check(&pair, a.q, a.n_mc, a.k, &mut substream(seed, Stream::Theory, i << 1))?;
            for (what, v) in [("delta", report.delta), ("mc_delta", report.mc_delta)] {
                require_finite(what, v)?;
            }
            Ok(InstanceReport {
                instance: i,
                mechanism: describe(&pair.f),
                sigma: pair.sigma,
                report,
            })
        })
        .collect::<Result<_, _>>()?;
    let mut csv = String::from("instance,mechanism,sigma,Rf,Rb,G_fwd,G_bwd,delta,mc_delta,amplified,sign_agreement,mc_agreement\n");
    let mut agree = 0;
    for r in &reports {
        let t = &r.report;
        let mc_agree = (t.mc_delta > 0.0) == t.amplified;
        agree += usize::from(mc_agree);
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.instance, r.mechanism, r.sigma, t.rf, t.rb, t.g_fwd, t.g_bwd, t.delta, t.mc_delta, t.amplified, t.sign_agreement, mc_agree
        );
    }
    let json = serde_json::to_string_pretty(&reports).expect("reports serialize");
    ctx.write("theory.json", json.as_bytes())?;
    ctx.write("theory_summary.csv", csv.as_bytes())?;
    println!("simulated gap agrees with the variance-ratio sign on {agree}/{} instances", reports.len());
    Ok(to_json(a))
}

#[derive(Debug, Args, Serialize)]
pub struct GradCheckArgs {
    #[arg(long, default_value_t = 8)]
    pub h: usize,
    #[arg(long, default_value_t = 2)]
    pub heads: usize,
    /// Blocks in each branch.
    #[arg(long, default_value_t = 1)]
    pub blocks: usize,
    #[arg(long, default_value_t = 4)]
    pub rows: usize,
    #[arg(long, default_value_t = 3)]
    pub cols: usize,
    #[arg(long, default_value_t = 0.3)]
    pub missing: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub fd_step: f64,
    /// Largest acceptable relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

pub(crate) fn grad_check(ctx: &mut Ctx, a: &GradCheckArgs) -> CliResult<serde_json::Value> {
    use rand::Rng;
    let config = ModelConfig {
        h: a.h,
        heads: a.heads,
        blocks_ord: a.blocks,
        blocks_pred: a.blocks,
        dropout: 0.0,
        ..ctx.run.model.clone()
    };
    let params = ModelParams::<f64>::init(&config, &mut substream(ctx.seed, Stream::Init, 0))?;
    let mut rng = substream(ctx.seed, Stream::Data, 0);
    let n = a.rows * a.cols;
    let values = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let missing = (0..n).map(|_| rng.random::<f64>() < a.missing).collect();
    let input = ModelInput::new(a.rows, a.cols, values, missing)?;
    let err = require_finite("relative error", model_grad_check(&params, &input, &grad_check_mask(), a.fd_step)?)?;
    let pass = err < a.tolerance;
    let report = serde_json::json!({
        "max_relative_error": err,
        "tolerance": a.tolerance,
        "pass": pass,
        "parameters": params.count(),
        "model": config,
    });
    ctx.write("grad_check.json", serde_json::to_string_pretty(&report).expect("json").as_bytes())?;
    println!("max relative error {err:.3e} ({})", if pass { "pass" } else { "FAIL" });
    if !pass {
        return Err(CliError::Numeric(format!("gradient error {err:.3e} exceeds {}", a.tolerance)));
    }
    Ok(to_json(a))
}
