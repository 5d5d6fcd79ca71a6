use rand::Rng;
use taborder_tensor::{CustomOp, Graph, Scalar, TensorError, Var};

use crate::error::{invalid, Result};
use crate::model::{ModelConfig, ModelInput};
use crate::rng::TabRng;
use crate::table::Table;

pub const STD_FLOOR: f64 = 1e-6;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Per-column affine map from original units to zero mean, unit variance.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    /// Observed-cell mean/std per column; columns with no observed cells map
    /// with mean 0, std 1.
    pub fn fit(table: &Table) -> Self {
        let (mut mean, mut std) = (Vec::new(), Vec::new());
        for c in 0..table.d() {
            let xs = table.observed_column(c);
            if xs.is_empty() {
                mean.push(0.0);
                std.push(1.0);
                continue;
            }
            let n = xs.len() as f64;
            let m = xs.iter().sum::<f64>() / n;
            let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
            mean.push(m);
            std.push(v.sqrt().max(STD_FLOOR));
        }
        Self { mean, std }
    }

    pub fn apply(&self, table: &Table) -> Result<Table> {
        self.check(table.d())?;
        let mut out = table.clone();
        for r in 0..table.n() {
            for c in 0..table.d() {
                if let Some(v) = table.get(r, c) {
                    out.set(r, c, (v - self.mean[c]) / self.std[c])?;
                }
            }
        }
        Ok(out)
    }

    pub fn to_original(&self, c: usize, z: f64) -> f64 {
        z * self.std[c] + self.mean[c]
    }

    pub fn variance_to_original(&self, c: usize, v: f64) -> f64 {
        v * self.std[c] * self.std[c]
    }

    fn check(&self, d: usize) -> Result<()> {
        if self.mean.len() != d {
            return Err(invalid(format!("standardization for {} columns applied to {d}", self.mean.len())));
        }
        Ok(())
    }
}

/// A masked-cell prediction task.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedTask {
    /// Input table: original missing cells plus the new targets removed.
    pub masked: Table,
    /// `n × d`; `true` for cells whose value the loss scores.
    pub targets: Vec<bool>,
    /// `n × d` values of the unmasked table (NaN where originally missing).
    pub truth: Vec<f64>,
}

impl MaskedTask {
    pub fn target_count(&self) -> usize {
        self.targets.iter().filter(|&&t| t).count()
    }

    pub fn input(&self) -> Result<ModelInput> {
        ModelInput::from_table(&self.masked)
    }
}

/// Masks each observed cell independently with probability `q`.
pub fn mask_entries(table: &Table, q: f64, rng: &mut TabRng) -> Result<MaskedTask> {
    if !(q > 0.0 && q < 1.0) {
        return Err(invalid(format!("mask rate {q} outside (0, 1)")));
    }
    let (n, d) = (table.n(), table.d());
    let mut masked = table.clone();
    let mut targets = vec![false; n * d];
    let mut truth = vec![f64::NAN; n * d];
    for r in 0..n {
        for c in 0..d {
            let Some(v) = table.get(r, c) else { continue };
            truth[r * d + c] = v;
            if rng.random::<f64>() < q {
                targets[r * d + c] = true;
                masked.set_missing(r, c);
            }
        }
    }
    Ok(MaskedTask { masked, targets, truth })
}

/// Masks like [`mask_entries`], redrawing until at least one target exists.
pub fn mask_nonempty(table: &Table, q: f64, rng: &mut TabRng) -> Result<MaskedTask> {
    if table.missing_count() == table.n() * table.d() {
        return Err(invalid("table has no observed cells to mask"));
    }
    loop {
        let t = mask_entries(table, q, rng)?;
        if t.target_count() > 0 {
            return Ok(t);
        }
    }
}

/// `−(1/|M|) Σ_M log N(truth | mu, σ²)`; reads only target cells.
pub fn gaussian_nll(truth: &[f64], mu: &[f64], sigma2: &[f64], targets: &[bool]) -> Result<f64> {
    if truth.len() != mu.len() || mu.len() != sigma2.len() || mu.len() != targets.len() {
        return Err(invalid("gaussian_nll: length mismatch"));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..mu.len() {
        if !targets[i] {
            continue;
        }
        let s2 = sigma2[i];
        if !(s2 > 0.0) {
            return Err(invalid(format!("gaussian_nll: nonpositive variance {s2}")));
        }
        let r = truth[i] - mu[i];
        total += HALF_LN_2PI + 0.5 * s2.ln() + 0.5 * r * r / s2;
        count += 1;
    }
    if count == 0 {
        return Err(invalid("gaussian_nll: empty target set"));
    }
    Ok(total / count as f64)
}

/// Tape version of [`gaussian_nll`]: inputs `[mu, sigma2]`.
struct NllOp {
    truth: Vec<f64>,
    targets: Vec<bool>,
    count: usize,
}

impl<T: Scalar> CustomOp<T> for NllOp {
    fn name(&self) -> &'static str {
        "gaussian_nll"
    }

    fn forward(&self, inputs: &[&[T]]) -> taborder_tensor::Result<(Vec<usize>, Vec<T>)> {
        let (mu, s2) = (inputs[0], inputs[1]);
        let mut total = 0.0f64;
        for i in 0..mu.len() {
            if self.targets[i] {
                let v = s2[i].as_f64();
                if !(v > 0.0) {
                    return Err(TensorError::InvalidArgument("nonpositive variance".into()));
                }
                let r = self.truth[i] - mu[i].as_f64();
                total += HALF_LN_2PI + 0.5 * v.ln() + 0.5 * r * r / v;
            }
        }
        Ok((vec![], vec![T::from_f64(total / self.count as f64)]))
    }

    fn backward(&self, inputs: &[&[T]], _output: &[T], grad_out: &[T]) -> Vec<Option<Vec<T>>> {
        let (mu, s2) = (inputs[0], inputs[1]);
        let g = grad_out[0].as_f64() / self.count as f64;
        let mut dmu = vec![T::zero(); mu.len()];
        let mut ds2 = vec![T::zero(); mu.len()];
        for i in 0..mu.len() {
            if self.targets[i] {
                let v = s2[i].as_f64();
                let r = self.truth[i] - mu[i].as_f64();
                dmu[i] = T::from_f64(-g * r / v);
                ds2[i] = T::from_f64(g * 0.5 * (1.0 / v - r * r / (v * v)));
            }
        }
        vec![Some(dmu), Some(ds2)]
    }
}

/// Records the masked-cell NLL of `mu`/`sigma2` on the tape.
pub fn gaussian_nll_var<T: Scalar>(
    g: &mut Graph<T>,
    mu: Var,
    sigma2: Var,
    truth: &[f64],
    targets: &[bool],
) -> Result<Var> {
    let len = g.value(mu).len();
    if truth.len() != len || targets.len() != len || g.value(sigma2).len() != len {
        return Err(invalid("gaussian_nll: length mismatch"));
    }
    let count = targets.iter().filter(|&&t| t).count();
    if count == 0 {
        return Err(invalid("gaussian_nll: empty target set"));
    }
    let truth = truth.iter().zip(targets).map(|(&v, &t)| if t { v } else { 0.0 }).collect();
    let op = NllOp {
        truth,
        targets: targets.to_vec(),
        count,
    };
    Ok(g.custom(&[mu, sigma2], Box::new(op))?)
}

/// `(β, τ)` linearly interpolated at `step / total_steps`.
pub fn anneal(step: u64, total_steps: u64, config: &ModelConfig) -> Result<(f64, f64)> {
    if total_steps == 0 || step > total_steps {
        return Err(invalid(format!("anneal: step {step} outside [0, {total_steps}]")));
    }
    let f = step as f64 / total_steps as f64;
    Ok((config.beta_schedule.at(f), config.tau_schedule.at(f)))
}
