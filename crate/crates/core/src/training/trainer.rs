use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use taborder_tensor::{adam_step, AdamState, Graph, Scalar, Tensor};

use super::config::{DataConfig, TrainConfig};
use super::task::{anneal, gaussian_nll_var, mask_nonempty, Standardization};
use crate::error::{invalid, Error, Result};
use crate::model::{forward, param_vars, MaskMode, MaskSpec, ModelConfig, ModelParams};
use crate::rng::{substream, Stream};
use crate::scm::{sample_dag, sample_scm_with_features};
use crate::table::Table;
use crate::Dag;

/// Deterministic indexed supply of training tables.
pub trait DataSource: Sync {
    fn dataset(&self, index: u64) -> Result<Table>;
}

/// Fresh SCM draw per index from the configured family.
#[derive(Debug, Clone)]
pub struct SyntheticSource {
    pub seed: u64,
    pub data: DataConfig,
}

impl SyntheticSource {
    pub fn new(seed: u64, data: DataConfig) -> Result<Self> {
        data.validate()?;
        Ok(Self { seed, data })
    }
}

impl SyntheticSource {
    /// The table at `index` together with the graph that generated it.
    pub fn dataset_with_dag(&self, index: u64) -> Result<(Dag, Table)> {
        let c = &self.data;
        let mut rng = substream(self.seed, Stream::Data, index);
        let dag = sample_dag(c.d_min, c.d_max, c.root_prob, &mut rng)?;
        let scm = sample_scm_with_features(&dag, c.additive, c.noise, c.features, &mut rng);
        let n = rng.random_range(c.n_min..=c.n_max);
        let table = scm.sample_table(n, &mut rng)?;
        Ok((dag, table))
    }
}

impl DataSource for SyntheticSource {
    fn dataset(&self, index: u64) -> Result<Table> {
        Ok(self.dataset_with_dag(index)?.1)
    }
}

/// The same table at every index (per-table fine-tuning).
#[derive(Debug, Clone)]
pub struct FixedSource(pub Table);

impl DataSource for FixedSource {
    fn dataset(&self, _index: u64) -> Result<Table> {
        Ok(self.0.clone())
    }
}

/// Where the feature-mixing mask comes from during training.
#[derive(Debug, Clone, PartialEq)]
pub enum OrderMode {
    /// Inferred scores, straight-through mask, annealed β and τ.
    Learned,
    /// Inferred scores, straight-through mask at constant β and τ.
    Sharpened { beta: f64, tau: f64 },
    /// A fixed mask; the order branch receives no gradient.
    Fixed(MaskSpec),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: u64,
    pub nll: f64,
    pub beta: f64,
    pub tau: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossTrace {
    pub rows: Vec<TraceRow>,
}

impl LossTrace {
    /// `step,nll,beta,tau`
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "step,nll,beta,tau")?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{}", r.step, r.nll, r.beta, r.tau)?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii")
    }

    /// Trailing moving average with the given window.
    pub fn smoothed(&self, window: usize) -> Vec<f64> {
        let w = window.max(1);
        let nll: Vec<f64> = self.rows.iter().map(|r| r.nll).collect();
        (0..nll.len())
            .map(|i| {
                let lo = (i + 1).saturating_sub(w);
                nll[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
            })
            .collect()
    }
}

/// Random row subset of at most `max_rows`, original row order kept.
pub fn subsample_rows(table: &Table, max_rows: usize, rng: &mut impl Rng) -> Result<Table> {
    if table.n() <= max_rows {
        return Ok(table.clone());
    }
    let mut rows: Vec<usize> = (0..table.n()).collect();
    rows.shuffle(rng);
    rows.truncate(max_rows);
    rows.sort_unstable();
    table.select_rows(&rows)
}

pub struct Trainer<T: Scalar> {
    pub params: ModelParams<T>,
    pub adam: AdamState<T>,
    pub config: TrainConfig,
    pub order: OrderMode,
}

struct DatasetResult<T> {
    nll: f64,
    grads: Vec<Vec<T>>,
}

impl<T: Scalar> Trainer<T> {
    /// Fresh parameters drawn from the `Init` stream of `config.seed`.
    pub fn new(model: &ModelConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::init(model, &mut substream(config.seed, Stream::Init, 0))?;
        Self::from_params(params, config, OrderMode::Learned)
    }

    pub fn from_params(params: ModelParams<T>, config: TrainConfig, order: OrderMode) -> Result<Self> {
        config.validate()?;
        let adam = AdamState::new(params.tensors(), config.lr, config.warmup_ratio, config.weight_decay)?;
        Ok(Self {
            params,
            adam,
            config,
            order,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.adam.step_count
    }

    pub fn is_done(&self) -> bool {
        self.step_count() >= self.config.total_steps
    }

    /// Index of the first dataset the next step draws.
    pub fn next_index(&self) -> u64 {
        self.step_count() * self.config.batch_size as u64
    }

    fn mask_spec(&self, beta: f64, tau: f64) -> MaskSpec {
        match &self.order {
            OrderMode::Learned => MaskSpec {
                mode: MaskMode::StraightThrough,
                tau,
                beta,
                fixed_scores: None,
            },
            OrderMode::Sharpened { beta, tau } => MaskSpec {
                mode: MaskMode::StraightThrough,
                tau: *tau,
                beta: *beta,
                fixed_scores: None,
            },
            OrderMode::Fixed(spec) => spec.clone(),
        }
    }

    fn dataset_loss(&self, source: &dyn DataSource, index: u64, mask: &MaskSpec) -> Result<DatasetResult<T>> {
        let seed = self.config.seed;
        let mut mask_rng = substream(seed, Stream::Mask, index);
        let mut table = source.dataset(index)?;
        if let Some(m) = self.config.max_rows {
            table = subsample_rows(&table, m, &mut mask_rng)?;
        }
        let z = Standardization::fit(&table).apply(&table)?;
        let task = mask_nonempty(&z, self.config.mask_rate, &mut mask_rng)?;
        let input = task.input()?;
        let mut drop_rng = substream(seed, Stream::Dropout, index);
        let mut g = Graph::new();
        let pv = param_vars(&mut g, &self.params);
        let fv = forward(&mut g, &pv, &self.params, &input, mask, Some(&mut drop_rng))?;
        let loss = gaussian_nll_var(&mut g, fv.mu, fv.sigma2_point, &task.truth, &task.targets)?;
        let nll = g.value(loss)[0].as_f64();
        let grads = g.backward(loss)?;
        let grads = pv
            .iter()
            .zip(self.params.tensors())
            .map(|(&v, t)| grads.get_or_zeros(v, t.numel()))
            .collect();
        Ok(DatasetResult { nll, grads })
    }

    /// One optimizer step on `batch_size` datasets.
    pub fn step(&mut self, source: &dyn DataSource) -> Result<TraceRow> {
        if self.is_done() {
            return Err(invalid("training already reached total_steps"));
        }
        let step = self.step_count();
        let (beta, tau) = anneal(step, self.config.total_steps, self.params.config())?;
        let mask = self.mask_spec(beta, tau);
        let (beta, tau) = (mask.beta, mask.tau);
        let first = self.next_index();
        let b = self.config.batch_size;
        let results: Vec<Result<DatasetResult<T>>> = (0..b as u64)
            .into_par_iter()
            .map(|i| self.dataset_loss(source, first + i, &mask))
            .collect();
        let mut total = 0.0;
        let mut sum: Vec<Vec<T>> = self.params.tensors().iter().map(|t| vec![T::zero(); t.numel()]).collect();
        for (i, r) in results.into_iter().enumerate() {
            let r = r.map_err(|e| match e {
                Error::Tensor(t) => Error::NonFinite(format!("step {step}, dataset {}: {t}", first + i as u64)),
                other => other,
            })?;
            if !r.nll.is_finite() {
                return Err(Error::NonFinite(format!("step {step}: loss {} on dataset {}", r.nll, first + i as u64)));
            }
            total += r.nll;
            for (acc, g) in sum.iter_mut().zip(&r.grads) {
                for (a, &v) in acc.iter_mut().zip(g) {
                    *a = *a + v;
                }
            }
        }
        let inv = T::from_f64(1.0 / b as f64);
        let mut norm2 = 0.0;
        let mut grads = Vec::with_capacity(sum.len());
        for (g, t) in sum.into_iter().zip(self.params.tensors()) {
            let g: Vec<T> = g.into_iter().map(|v| v * inv).collect();
            norm2 += g.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>();
            grads.push(Tensor::new(t.shape().to_vec(), g).map_err(|e| Error::NonFinite(format!("step {step}: {e}")))?);
        }
        let grad_norm = norm2.sqrt();
        if !grad_norm.is_finite() {
            return Err(Error::NonFinite(format!("step {step}: gradient norm {grad_norm}")));
        }
        adam_step(self.params.tensors_mut(), &grads, &mut self.adam, self.config.total_steps)?;
        Ok(TraceRow {
            step,
            nll: total / b as f64,
            beta,
            tau,
            grad_norm,
        })
    }

    /// Steps until `total_steps`, reporting each row to `on_step`.
    pub fn run(&mut self, source: &dyn DataSource, mut on_step: impl FnMut(&TraceRow)) -> Result<LossTrace> {
        let mut trace = LossTrace::default();
        while !self.is_done() {
            let row = self.step(source)?;
            on_step(&row);
            trace.rows.push(row);
        }
        Ok(trace)
    }
}

/// Pretraining on the synthetic family in `config.data`.
pub fn train_loop<T: Scalar>(model: &ModelConfig, config: &TrainConfig) -> Result<(ModelParams<T>, LossTrace)> {
    let source = SyntheticSource::new(config.seed, config.data.clone())?;
    let mut trainer = Trainer::<T>::new(model, config.clone())?;
    let trace = trainer.run(&source, |_| {})?;
    Ok((trainer.params, trace))
}

/// Settings for per-table adaptation.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub steps: u64,
    pub lr: f64,
    pub mask_rate: f64,
    pub weight_decay: f64,
    pub max_rows: Option<usize>,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            lr: 5e-4,
            mask_rate: 0.2,
            weight_decay: 0.0,
            max_rows: Some(256),
            seed: 0,
        }
    }
}

/// Continues training on a single (possibly incomplete) table; only its
/// observed cells become targets.
pub fn finetune<T: Scalar>(
    params: &ModelParams<T>,
    table: &Table,
    config: &FinetuneConfig,
    order: OrderMode,
) -> Result<(ModelParams<T>, LossTrace)> {
    let (trainer, trace) = finetune_trainer(params, table, config, order)?;
    Ok((trainer.params, trace))
}

/// [`finetune`], returning the trainer with its optimizer state.
pub fn finetune_trainer<T: Scalar>(
    params: &ModelParams<T>,
    table: &Table,
    config: &FinetuneConfig,
    order: OrderMode,
) -> Result<(Trainer<T>, LossTrace)> {
    let tc = TrainConfig {
        total_steps: config.steps,
        batch_size: 1,
        mask_rate: config.mask_rate,
        lr: config.lr,
        warmup_ratio: 0.0,
        weight_decay: config.weight_decay,
        seed: config.seed,
        eval_every: config.steps.max(1),
        max_rows: config.max_rows,
        data: DataConfig::default(),
    };
    let order = match order {
        OrderMode::Learned => {
            let c = params.config();
            OrderMode::Sharpened {
                beta: c.beta_schedule.end,
                tau: c.tau_schedule.end,
            }
        }
        other => other,
    };
    let mut trainer = Trainer::from_params(params.clone(), tc, order)?;
    let trace = trainer.run(&FixedSource(table.clone()), |_| {})?;
    Ok((trainer, trace))
}
