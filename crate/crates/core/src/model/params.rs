use rand_distr::{Distribution, Normal};
use taborder_tensor::{Scalar, Tensor};

use super::config::ModelConfig;
use crate::error::{invalid, Result};
use crate::rng::TabRng;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    /// `N(0, gain²/fan_in)` with `fan_in` the leading dimension.
    Scaled(f64),
    Zeros,
    Ones,
}

/// Indices of one prenorm encoder layer's tensors.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LayerIdx {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

/// A block is one sample-mixing layer followed by one feature-mixing layer.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct BranchIdx {
    pub blocks: Vec<(LayerIdx, LayerIdx)>,
    pub ln_g: usize,
    pub ln_b: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layout {
    pub emb_w: usize,
    pub emb_b: usize,
    pub ord: BranchIdx,
    pub ord_w1: usize,
    pub ord_b1: usize,
    pub ord_w2: usize,
    pub ord_b2: usize,
    pub pred: BranchIdx,
    pub mu_w: usize,
    pub mu_b: usize,
    pub sigma_w: usize,
    pub sigma_b: usize,
    pub delta_wa: usize,
    pub delta_wb: usize,
    pub delta_b1: usize,
    pub delta_w2: usize,
    pub delta_b2: usize,
}

struct Builder {
    entries: Vec<(String, Vec<usize>, Init)>,
}

impl Builder {
    fn add(&mut self, name: String, shape: &[usize], init: Init) -> usize {
        self.entries.push((name, shape.to_vec(), init));
        self.entries.len() - 1
    }

    fn layer(&mut self, prefix: &str, h: usize, ff: usize, residual_gain: f64) -> LayerIdx {
        let w = |b: &mut Self, n: &str, shape: &[usize], init: Init| b.add(format!("{prefix}.{n}"), shape, init);
        LayerIdx {
            ln1_g: w(self, "ln1.gain", &[h], Init::Ones),
            ln1_b: w(self, "ln1.shift", &[h], Init::Zeros),
            wq: w(self, "attn.wq", &[h, h], Init::Scaled(1.0)),
            bq: w(self, "attn.bq", &[h], Init::Zeros),
            wk: w(self, "attn.wk", &[h, h], Init::Scaled(1.0)),
            bk: w(self, "attn.bk", &[h], Init::Zeros),
            wv: w(self, "attn.wv", &[h, h], Init::Scaled(1.0)),
            bv: w(self, "attn.bv", &[h], Init::Zeros),
            wo: w(self, "attn.wo", &[h, h], Init::Scaled(residual_gain)),
            bo: w(self, "attn.bo", &[h], Init::Zeros),
            ln2_g: w(self, "ln2.gain", &[h], Init::Ones),
            ln2_b: w(self, "ln2.shift", &[h], Init::Zeros),
            w1: w(self, "ff.w1", &[h, ff * h], Init::Scaled(1.0)),
            b1: w(self, "ff.b1", &[ff * h], Init::Zeros),
            w2: w(self, "ff.w2", &[ff * h, h], Init::Scaled(residual_gain)),
            b2: w(self, "ff.b2", &[h], Init::Zeros),
        }
    }

    fn branch(&mut self, name: &str, blocks: usize, h: usize, ff: usize) -> BranchIdx {
        let gain = 1.0 / ((2 * blocks.max(1)) as f64).sqrt();
        let blocks = (0..blocks)
            .map(|b| {
                let rows = self.layer(&format!("{name}.block{b}.samples"), h, ff, gain);
                let cols = self.layer(&format!("{name}.block{b}.features"), h, ff, gain);
                (rows, cols)
            })
            .collect();
        BranchIdx {
            blocks,
            ln_g: self.add(format!("{name}.final_ln.gain"), &[h], Init::Ones),
            ln_b: self.add(format!("{name}.final_ln.shift"), &[h], Init::Zeros),
        }
    }
}

fn build(config: &ModelConfig) -> (Layout, Vec<(String, Vec<usize>, Init)>) {
    let h = config.h;
    let ff = config.ff_multiplier;
    let mut b = Builder { entries: Vec::new() };
    // `[value, missing]` rows map to width h; stored input-major so embeddings are `x·W`.
    let emb_w = b.add("embed.w".into(), &[2, h], Init::Scaled(1.0));
    let emb_b = b.add("embed.b".into(), &[h], Init::Zeros);
    let ord = b.branch("order", config.blocks_ord, h, ff);
    let ord_w1 = b.add("order.head.w1".into(), &[h, h], Init::Scaled(1.0));
    let ord_b1 = b.add("order.head.b1".into(), &[h], Init::Zeros);
    let ord_w2 = b.add("order.head.w2".into(), &[h, 1], Init::Scaled(1.0));
    let ord_b2 = b.add("order.head.b2".into(), &[1], Init::Zeros);
    let pred = b.branch("predict", config.blocks_pred, h, ff);
    let mu_w = b.add("head.mu.w".into(), &[h, 1], Init::Scaled(1.0));
    let mu_b = b.add("head.mu.b".into(), &[1], Init::Zeros);
    let sigma_w = b.add("head.sigma.w".into(), &[h, 1], Init::Scaled(0.1));
    let sigma_b = b.add("head.sigma.b".into(), &[1], Init::Zeros);
    let delta_wa = b.add("head.delta.wa".into(), &[h, h], Init::Scaled(1.0));
    let delta_wb = b.add("head.delta.wb".into(), &[h, h], Init::Scaled(1.0));
    let delta_b1 = b.add("head.delta.b1".into(), &[h], Init::Zeros);
    let delta_w2 = b.add("head.delta.w2".into(), &[h, 1], Init::Scaled(0.1));
    let delta_b2 = b.add("head.delta.b2".into(), &[1], Init::Zeros);
    let layout = Layout {
        emb_w,
        emb_b,
        ord,
        ord_w1,
        ord_b1,
        ord_w2,
        ord_b2,
        pred,
        mu_w,
        mu_b,
        sigma_w,
        sigma_b,
        delta_wa,
        delta_wb,
        delta_b1,
        delta_w2,
        delta_b2,
    };
    (layout, b.entries)
}

/// Every trainable tensor of the network, in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    config: ModelConfig,
    pub(crate) layout: Layout,
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn init(config: &ModelConfig, rng: &mut TabRng) -> Result<Self> {
        config.validate()?;
        let (layout, entries) = build(config);
        let mut names = Vec::with_capacity(entries.len());
        let mut tensors = Vec::with_capacity(entries.len());
        for (name, shape, init) in entries {
            let len: usize = shape.iter().product();
            let data: Vec<T> = match init {
                Init::Zeros => vec![T::zero(); len],
                Init::Ones => vec![T::one(); len],
                Init::Scaled(gain) => {
                    let std = gain / (shape[0] as f64).sqrt();
                    let dist = Normal::new(0.0, std).expect("positive std");
                    (0..len).map(|_| T::from_f64(dist.sample(rng))).collect()
                }
            };
            names.push(name);
            tensors.push(Tensor::new(shape, data)?);
        }
        Ok(Self {
            config: config.clone(),
            layout,
            names,
            tensors,
        })
    }

    /// Rebuilds parameters from named tensors, validating names and shapes
    /// against the layout implied by `config`.
    pub fn from_named(config: &ModelConfig, named: Vec<(String, Tensor<T>)>) -> Result<Self> {
        config.validate()?;
        let (layout, entries) = build(config);
        if named.len() != entries.len() {
            return Err(invalid(format!("expected {} tensors, found {}", entries.len(), named.len())));
        }
        let mut names = Vec::with_capacity(named.len());
        let mut tensors = Vec::with_capacity(named.len());
        for ((name, t), (want, shape, _)) in named.into_iter().zip(entries) {
            if name != want {
                return Err(invalid(format!("tensor {name:?} where {want:?} was expected")));
            }
            if t.shape() != shape.as_slice() {
                return Err(invalid(format!("tensor {name}: shape {:?}, expected {shape:?}", t.shape())));
            }
            if !t.is_finite() {
                return Err(invalid(format!("tensor {name} has non-finite values")));
            }
            names.push(name);
            tensors.push(t);
        }
        Ok(Self {
            config: config.clone(),
            layout,
            names,
            tensors,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &mut self.tensors[i])
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            layout: self.layout.clone(),
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    /// Replaces all tensors, e.g. with values perturbed for a gradient check.
    pub fn with_tensors(&self, tensors: Vec<Tensor<T>>) -> Result<Self> {
        let named = self.names.iter().cloned().zip(tensors).collect();
        Self::from_named(&self.config, named)
    }
}
