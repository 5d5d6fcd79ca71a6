//! Synthetic structural causal models: random DAGs, random-Fourier-feature
//! GP mechanisms, ancestral table sampling, and the three-variable chain
//! used for intervention experiments.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dag::Dag;
use crate::error::{invalid, Result};
use crate::rng::TabRng;
use crate::table::Table;

pub const DEFAULT_FEATURES: usize = 256;
pub const LENGTHSCALE_RANGE: (f64, f64) = (0.3, 1.0);
pub const NOISE_RANGE: (f64, f64) = (0.05, 0.25);
pub const ROOT_GAUSSIAN_SCALE: (f64, f64) = (0.5, 2.0);
pub const ROOT_UNIFORM_WIDTH: (f64, f64) = (1.0, 5.0);
/// Root draws are clipped to `±ROOT_CLIP`.
pub const ROOT_CLIP: f64 = 10.0;
pub const CHAIN_NOISE: f64 = 0.1;
pub const SPLINE_KNOTS: usize = 8;
const STD_FLOOR: f64 = 1e-12;

fn normal(rng: &mut TabRng) -> f64 {
    StandardNormal.sample(rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    #[default]
    Additive,
    /// Noise scale `σ·(1 + 0.5·|z|)` with `z` the standardized first parent.
    Heteroskedastic,
    /// `X = f(parents)·(1 + ε)`.
    Multiplicative,
}

impl std::str::FromStr for NoiseKind {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "additive" => Ok(Self::Additive),
            "heteroskedastic" => Ok(Self::Heteroskedastic),
            "multiplicative" => Ok(Self::Multiplicative),
            other => Err(invalid(format!("unknown noise kind {other:?}"))),
        }
    }
}

/// Samples a DAG: `d ~ UnifInt(d_min, d_max)`, a uniform random topological
/// order, and for each node after the first a uniform parent set of size
/// 1–3 among its predecessors. With `root_prob > 0` later nodes may also be
/// roots.
pub fn sample_dag(d_min: usize, d_max: usize, root_prob: f64, rng: &mut TabRng) -> Result<Dag> {
    if d_min == 0 || d_min > d_max {
        return Err(invalid(format!("need 1 <= d_min <= d_max, got ({d_min}, {d_max})")));
    }
    if !(0.0..=1.0).contains(&root_prob) {
        return Err(invalid("root_prob outside [0, 1]"));
    }
    let d = rng.random_range(d_min..=d_max);
    let mut order: Vec<usize> = (0..d).collect();
    order.shuffle(rng);
    let mut edges = Vec::new();
    for k in 1..d {
        if root_prob > 0.0 && rng.random::<f64>() < root_prob {
            continue;
        }
        let count = rng.random_range(1..=k.min(3));
        let mut earlier = order[..k].to_vec();
        earlier.shuffle(rng);
        for &p in &earlier[..count] {
            edges.push((p, order[k]));
        }
    }
    Dag::new(d, edges, order)
}

/// `f(x) = aᵀφ(x)` with `φ(x) = √(2/H)·cos(Wᵀx + b)` applied to the
/// standardized parent vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RffMechanism {
    pub lengthscale: f64,
    /// `P × H`, row-major.
    pub frequencies: Vec<f64>,
    pub phases: Vec<f64>,
    pub weights: Vec<f64>,
    pub features: usize,
    /// `(mean, std)` per parent, applied before evaluation.
    pub parent_standardization: Vec<(f64, f64)>,
}

impl RffMechanism {
    pub fn sample(parents: usize, features: usize, rng: &mut TabRng) -> Self {
        let (lo, hi) = LENGTHSCALE_RANGE;
        let lengthscale = rng.random_range(lo.ln()..hi.ln()).exp();
        Self::sample_with_lengthscale(parents, features, lengthscale, rng)
    }

    pub fn sample_with_lengthscale(parents: usize, features: usize, lengthscale: f64, rng: &mut TabRng) -> Self {
        let frequencies = (0..parents * features).map(|_| normal(rng) / lengthscale).collect();
        let phases = (0..features).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
        let weights = (0..features).map(|_| normal(rng)).collect();
        Self {
            lengthscale,
            frequencies,
            phases,
            weights,
            features,
            parent_standardization: vec![(0.0, 1.0); parents],
        }
    }

    pub fn parents(&self) -> usize {
        self.parent_standardization.len()
    }

    /// Feature vector at an already standardized input.
    pub fn feature_map(&self, z: &[f64]) -> Vec<f64> {
        let h = self.features;
        let amp = (2.0 / h as f64).sqrt();
        (0..h)
            .map(|k| {
                let arg: f64 = z.iter().enumerate().map(|(j, &zj)| self.frequencies[j * h + k] * zj).sum::<f64>()
                    + self.phases[k];
                amp * arg.cos()
            })
            .collect()
    }

    pub fn eval_standardized(&self, z: &[f64]) -> f64 {
        self.feature_map(z).iter().zip(&self.weights).map(|(p, a)| p * a).sum()
    }

    pub fn standardize(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(&self.parent_standardization)
            .map(|(&x, &(m, s))| (x - m) / s)
            .collect()
    }

    pub fn eval(&self, raw: &[f64]) -> f64 {
        self.eval_standardized(&self.standardize(raw))
    }
}

/// Natural cubic spline through knots at evenly spaced positions on
/// `[-3, 3]`, linear beyond the end knots, applied to a standardized input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubicSpline {
    pub knots_x: Vec<f64>,
    pub knots_y: Vec<f64>,
    /// Second derivatives at the knots.
    pub curvature: Vec<f64>,
    pub input_standardization: (f64, f64),
}

impl CubicSpline {
    pub fn sample(rng: &mut TabRng) -> Self {
        let knots_x: Vec<f64> = (0..SPLINE_KNOTS)
            .map(|i| -3.0 + 6.0 * i as f64 / (SPLINE_KNOTS - 1) as f64)
            .collect();
        let knots_y: Vec<f64> = (0..SPLINE_KNOTS).map(|_| normal(rng)).collect();
        Self::through(knots_x, knots_y)
    }

    /// Natural spline through the given knots (x strictly increasing).
    pub fn through(knots_x: Vec<f64>, knots_y: Vec<f64>) -> Self {
        let n = knots_x.len();
        let mut m = vec![0.0; n];
        if n > 2 {
            // Tridiagonal system for interior second derivatives (Thomas algorithm).
            let h: Vec<f64> = knots_x.windows(2).map(|w| w[1] - w[0]).collect();
            let k = n - 2;
            let mut diag = vec![0.0; k];
            let mut rhs = vec![0.0; k];
            let mut upper = vec![0.0; k];
            for i in 0..k {
                diag[i] = 2.0 * (h[i] + h[i + 1]);
                upper[i] = h[i + 1];
                rhs[i] = 6.0
                    * ((knots_y[i + 2] - knots_y[i + 1]) / h[i + 1] - (knots_y[i + 1] - knots_y[i]) / h[i]);
            }
            for i in 1..k {
                let w = h[i] / diag[i - 1];
                diag[i] -= w * upper[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
            for i in (0..k).rev() {
                let next = if i + 1 < k { m[i + 2] } else { 0.0 };
                m[i + 1] = (rhs[i] - upper[i] * next) / diag[i];
            }
        }
        Self {
            knots_x,
            knots_y,
            curvature: m,
            input_standardization: (0.0, 1.0),
        }
    }

    pub fn eval_standardized(&self, x: f64) -> f64 {
        let (xs, ys, m) = (&self.knots_x, &self.knots_y, &self.curvature);
        let n = xs.len();
        let slope_at = |i: usize| -> f64 {
            // first derivative at an end knot
            if i == 0 {
                let h = xs[1] - xs[0];
                (ys[1] - ys[0]) / h - h * (2.0 * m[0] + m[1]) / 6.0
            } else {
                let h = xs[n - 1] - xs[n - 2];
                (ys[n - 1] - ys[n - 2]) / h + h * (m[n - 2] + 2.0 * m[n - 1]) / 6.0
            }
        };
        if x <= xs[0] {
            return ys[0] + slope_at(0) * (x - xs[0]);
        }
        if x >= xs[n - 1] {
            return ys[n - 1] + slope_at(n - 1) * (x - xs[n - 1]);
        }
        let i = xs.partition_point(|&k| k <= x).saturating_sub(1).min(n - 2);
        let h = xs[i + 1] - xs[i];
        let a = (xs[i + 1] - x) / h;
        let b = (x - xs[i]) / h;
        a * ys[i] + b * ys[i + 1] + ((a * a * a - a) * m[i] + (b * b * b - b) * m[i + 1]) * h * h / 6.0
    }

    pub fn eval(&self, raw: f64) -> f64 {
        let (mu, sd) = self.input_standardization;
        self.eval_standardized((raw - mu) / sd)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    /// One GP draw over all parents jointly.
    Joint(RffMechanism),
    /// Sum of single-parent GP draws.
    Additive(Vec<RffMechanism>),
    /// Single-parent spline.
    Spline(CubicSpline),
}

impl Mechanism {
    pub fn eval(&self, parents: &[f64]) -> f64 {
        match self {
            Mechanism::Joint(m) => m.eval(parents),
            Mechanism::Additive(ms) => ms.iter().zip(parents).map(|(m, &x)| m.eval(&[x])).sum(),
            Mechanism::Spline(s) => s.eval(parents[0]),
        }
    }

    /// Per-parent `(mean, std)` currently applied.
    pub fn standardization(&self) -> Vec<(f64, f64)> {
        match self {
            Mechanism::Joint(m) => m.parent_standardization.clone(),
            Mechanism::Additive(ms) => ms.iter().map(|m| m.parent_standardization[0]).collect(),
            Mechanism::Spline(s) => vec![s.input_standardization],
        }
    }

    pub fn set_standardization(&mut self, stats: &[(f64, f64)]) {
        match self {
            Mechanism::Joint(m) => m.parent_standardization = stats.to_vec(),
            Mechanism::Additive(ms) => {
                for (m, &s) in ms.iter_mut().zip(stats) {
                    m.parent_standardization = vec![s];
                }
            }
            Mechanism::Spline(s) => s.input_standardization = stats[0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RootSpec {
    /// `s·Z`, `Z ~ N(0, 1)`.
    Gaussian { scale: f64 },
    /// `(U - ½)·a`, `U ~ Unif(0, 1)`.
    Uniform { width: f64 },
}

impl RootSpec {
    pub fn sample_spec(rng: &mut TabRng) -> Self {
        if rng.random::<f64>() < 0.5 {
            RootSpec::Gaussian {
                scale: rng.random_range(ROOT_GAUSSIAN_SCALE.0..ROOT_GAUSSIAN_SCALE.1),
            }
        } else {
            RootSpec::Uniform {
                width: rng.random_range(ROOT_UNIFORM_WIDTH.0..ROOT_UNIFORM_WIDTH.1),
            }
        }
    }

    pub fn draw(&self, rng: &mut TabRng) -> f64 {
        let v = match *self {
            RootSpec::Gaussian { scale } => scale * normal(rng),
            RootSpec::Uniform { width } => (rng.random::<f64>() - 0.5) * width,
        };
        v.clamp(-ROOT_CLIP, ROOT_CLIP)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Root(RootSpec),
    Child { parents: Vec<usize>, mechanism: Mechanism },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub noise_scale: f64,
    pub kind: NodeKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainKind {
    Gp,
    Spline,
}

impl std::str::FromStr for ChainKind {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gp" => Ok(Self::Gp),
            "spline" => Ok(Self::Spline),
            other => Err(invalid(format!("unknown chain mechanism {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScmInstance {
    pub dag: Dag,
    pub nodes: Vec<NodeSpec>,
    pub additive: bool,
    pub noise_kind: NoiseKind,
    /// Set for the `X → Y → Z` intervention chain.
    pub chain: Option<ChainKind>,
}

/// Samples mechanisms, noise scales and root distributions for `dag`.
pub fn sample_scm(dag: &Dag, additive: bool, noise_kind: NoiseKind, rng: &mut TabRng) -> ScmInstance {
    sample_scm_with_features(dag, additive, noise_kind, DEFAULT_FEATURES, rng)
}

pub fn sample_scm_with_features(
    dag: &Dag,
    additive: bool,
    noise_kind: NoiseKind,
    features: usize,
    rng: &mut TabRng,
) -> ScmInstance {
    let nodes = (0..dag.d())
        .map(|i| {
            let noise_scale = rng.random_range(NOISE_RANGE.0..NOISE_RANGE.1);
            let parents = dag.parents(i);
            let kind = if parents.is_empty() {
                NodeKind::Root(RootSpec::sample_spec(rng))
            } else {
                let mechanism = if additive {
                    Mechanism::Additive(parents.iter().map(|_| RffMechanism::sample(1, features, rng)).collect())
                } else {
                    Mechanism::Joint(RffMechanism::sample(parents.len(), features, rng))
                };
                NodeKind::Child { parents, mechanism }
            };
            NodeSpec { noise_scale, kind }
        })
        .collect();
    ScmInstance {
        dag: dag.clone(),
        nodes,
        additive,
        noise_kind,
        chain: None,
    }
}

/// How parent standardization is obtained while sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatsPolicy {
    /// Fit `(mean, std)` of each parent on the sample being generated.
    Refit,
    /// Use the statistics stored in the mechanisms.
    Keep,
}

/// A generated table with the structural noise draws and the SCM carrying
/// the standardization actually used.
#[derive(Debug, Clone)]
pub struct Sample {
    pub table: Table,
    /// `n × d` exogenous noise (zero for roots).
    pub noise: Vec<f64>,
    pub fitted: ScmInstance,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, v.sqrt().max(STD_FLOOR))
}

impl ScmInstance {
    pub fn d(&self) -> usize {
        self.dag.d()
    }

    pub fn mechanism(&self, node: usize) -> Option<(&[usize], &Mechanism)> {
        match &self.nodes[node].kind {
            NodeKind::Child { parents, mechanism } => Some((parents, mechanism)),
            NodeKind::Root(_) => None,
        }
    }

    /// Ancestral sampling of `n` i.i.d. rows.
    pub fn sample_detailed(&self, n: usize, policy: StatsPolicy, rng: &mut TabRng) -> Result<Sample> {
        if n == 0 {
            return Err(invalid("sample size must be at least 1"));
        }
        let d = self.d();
        let mut cols: Vec<Vec<f64>> = vec![Vec::new(); d];
        let mut noise = vec![0.0; n * d];
        let mut fitted = self.clone();
        for &node in self.dag.topo_order() {
            let spec = &mut fitted.nodes[node];
            let sigma = spec.noise_scale;
            let col = match &mut spec.kind {
                NodeKind::Root(root) => (0..n).map(|_| root.draw(rng)).collect(),
                NodeKind::Child { parents, mechanism } => {
                    if policy == StatsPolicy::Refit {
                        let stats: Vec<(f64, f64)> = parents.iter().map(|&p| mean_std(&cols[p])).collect();
                        mechanism.set_standardization(&stats);
                    }
                    let first = mechanism.standardization()[0];
                    let mut out = Vec::with_capacity(n);
                    let mut buf = vec![0.0; parents.len()];
                    for r in 0..n {
                        for (b, &p) in buf.iter_mut().zip(parents.iter()) {
                            *b = cols[p][r];
                        }
                        let f = mechanism.eval(&buf);
                        let eps = normal(rng);
                        let (value, e) = match self.noise_kind {
                            NoiseKind::Additive => (f + sigma * eps, sigma * eps),
                            NoiseKind::Heteroskedastic => {
                                let z = (buf[0] - first.0) / first.1;
                                let s = sigma * (1.0 + 0.5 * z.abs());
                                (f + s * eps, s * eps)
                            }
                            NoiseKind::Multiplicative => (f * (1.0 + sigma * eps), sigma * eps),
                        };
                        noise[r * d + node] = e;
                        out.push(value);
                    }
                    out
                }
            };
            cols[node] = col;
        }
        let values: Vec<f64> = (0..n).flat_map(|r| cols.iter().map(move |c| c[r])).collect();
        Ok(Sample {
            table: Table::fully_observed(n, d, values)?,
            noise,
            fitted,
        })
    }

    pub fn sample_table(&self, n: usize, rng: &mut TabRng) -> Result<Table> {
        Ok(self.sample_detailed(n, StatsPolicy::Refit, rng)?.table)
    }

    pub fn is_chain(&self) -> bool {
        self.chain.is_some()
            && self.d() == 3
            && self.dag.edges() == [(0, 1), (1, 2)]
            && self.dag.topo_order() == [0, 1, 2]
    }
}

/// Fully observed table drawn from `scm`, standardizing parents on the
/// generated sample.
pub fn sample_table(scm: &ScmInstance, n: usize, rng: &mut TabRng) -> Result<Table> {
    scm.sample_table(n, rng)
}

fn chain_mechanism(kind: ChainKind, rng: &mut TabRng) -> Mechanism {
    match kind {
        ChainKind::Gp => Mechanism::Joint(RffMechanism::sample(1, DEFAULT_FEATURES, rng)),
        ChainKind::Spline => Mechanism::Spline(CubicSpline::sample(rng)),
    }
}

#[derive(Debug, Clone)]
pub struct ChainData {
    pub train: Table,
    pub test: Table,
    /// Mechanisms with the standardization fitted on the training sample.
    pub scm: ScmInstance,
}

/// `X ~ N(0,1)`, `Y = f(X) + N_Y`, `Z = g(Y) + N_Z` with noise sd 0.1.
/// Standardization is fitted on the training rows and reused for test rows.
pub fn sample_chain(kind: ChainKind, n_train: usize, n_test: usize, rng: &mut TabRng) -> Result<ChainData> {
    if n_train == 0 || n_test == 0 {
        return Err(invalid("chain sample sizes must be at least 1"));
    }
    let dag = Dag::new(3, vec![(0, 1), (1, 2)], vec![0, 1, 2])?;
    let f = chain_mechanism(kind, rng);
    let g = chain_mechanism(kind, rng);
    let scm = ScmInstance {
        dag,
        nodes: vec![
            NodeSpec {
                noise_scale: CHAIN_NOISE,
                kind: NodeKind::Root(RootSpec::Gaussian { scale: 1.0 }),
            },
            NodeSpec {
                noise_scale: CHAIN_NOISE,
                kind: NodeKind::Child { parents: vec![0], mechanism: f },
            },
            NodeSpec {
                noise_scale: CHAIN_NOISE,
                kind: NodeKind::Child { parents: vec![1], mechanism: g },
            },
        ],
        additive: true,
        noise_kind: NoiseKind::Additive,
        chain: Some(kind),
    };
    let train = scm.sample_detailed(n_train, StatsPolicy::Refit, rng)?;
    let test = train.fitted.sample_detailed(n_test, StatsPolicy::Keep, rng)?;
    let names = vec!["X".to_string(), "Y".to_string(), "Z".to_string()];
    Ok(ChainData {
        train: train.table.with_column_names(names.clone())?,
        test: test.table.with_column_names(names)?,
        scm: train.fitted,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterventionKind {
    /// Replace `g` by a fresh independent mechanism of the same family.
    MechShift,
    /// Set `Z` to an independent `N(0, 1)` draw.
    Hard,
}

impl std::str::FromStr for InterventionKind {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mech_shift" => Ok(Self::MechShift),
            "hard" => Ok(Self::Hard),
            other => Err(invalid(format!("unknown intervention {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Intervened {
    pub table: Table,
    /// `true` for rows whose `Z` was regenerated.
    pub intervened: Vec<bool>,
}

/// Regenerates `Z` on a random `fraction` of the rows of a chain test table.
pub fn apply_intervention(
    test: &Table,
    scm: &ScmInstance,
    kind: InterventionKind,
    fraction: f64,
    rng: &mut TabRng,
) -> Result<Intervened> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(invalid(format!("fraction {fraction} outside [0, 1]")));
    }
    if !scm.is_chain() || test.d() != 3 {
        return Err(invalid("interventions are defined for the X → Y → Z chain only"));
    }
    let n = test.n();
    let count = (fraction * n as f64).round() as usize;
    let mut rows: Vec<usize> = (0..n).collect();
    rows.shuffle(rng);
    let mut intervened = vec![false; n];
    for &r in &rows[..count] {
        intervened[r] = true;
    }
    let mut table = test.clone();
    if count == 0 {
        return Ok(Intervened { table, intervened });
    }
    let shifted = match kind {
        InterventionKind::MechShift => {
            let (_, g) = scm.mechanism(2).expect("chain Z has a mechanism");
            let mut fresh = chain_mechanism(scm.chain.expect("chain"), rng);
            fresh.set_standardization(&g.standardization());
            Some(fresh)
        }
        InterventionKind::Hard => None,
    };
    let sigma = scm.nodes[2].noise_scale;
    for r in 0..n {
        if !intervened[r] {
            continue;
        }
        let z = match &shifted {
            Some(m) => {
                let y = table
                    .get(r, 1)
                    .ok_or_else(|| invalid("intervention needs an observed Y"))?;
                m.eval(&[y]) + sigma * normal(rng)
            }
            None => normal(rng),
        };
        table.set(r, 2, z)?;
    }
    Ok(Intervened { table, intervened })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Stream};

    fn rng(seed: u64) -> TabRng {
        substream(seed, Stream::Data, 0)
    }

    fn var(xs: &[f64]) -> f64 {
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
    }

    #[test]
    fn single_node_dag_has_no_edges() {
        let g = sample_dag(1, 1, 0.0, &mut rng(1)).unwrap();
        assert_eq!(g.d(), 1);
        assert!(g.edges().is_empty());
        assert!(sample_dag(0, 3, 0.0, &mut rng(1)).is_err());
        assert!(sample_dag(4, 3, 0.0, &mut rng(1)).is_err());
    }

    #[test]
    fn sampled_dags_respect_invariants() {
        let mut r = rng(2);
        for _ in 0..200 {
            let g = sample_dag(2, 10, 0.0, &mut r).unwrap();
            assert!(g.is_topological(g.topo_order()));
            for (k, &node) in g.topo_order().iter().enumerate() {
                let deg = g.in_degree(node);
                if k == 0 {
                    assert_eq!(deg, 0);
                } else {
                    assert!((1..=3).contains(&deg));
                }
            }
        }
        let mut r = rng(3);
        let roots: usize = (0..200)
            .map(|_| {
                let g = sample_dag(6, 6, 0.2, &mut r).unwrap();
                (0..6).filter(|&v| g.is_root(v)).count()
            })
            .sum();
        assert!(roots > 200, "root probability should create extra roots");
    }

    #[test]
    fn dag_sampling_is_seeded() {
        let a = sample_dag(5, 10, 0.0, &mut substream(7, Stream::Data, 0)).unwrap();
        let b = sample_dag(5, 10, 0.0, &mut substream(7, Stream::Data, 0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rff_features_are_bounded() {
        let m = RffMechanism::sample(2, 64, &mut rng(4));
        let bound = (2.0 / 64.0f64).sqrt();
        for z in [[0.0, 0.0], [3.0, -1.0], [100.0, 7.5]] {
            assert!(m.feature_map(&z).iter().all(|p| p.abs() <= bound));
        }
        assert!((0.3..=1.0).contains(&m.lengthscale));
    }

    #[test]
    fn lengthscales_stay_in_range() {
        let mut r = rng(5);
        for _ in 0..500 {
            let m = RffMechanism::sample(1, 1, &mut r);
            assert!((0.3..=1.0).contains(&m.lengthscale));
        }
    }

    #[test]
    fn scm_structure_follows_flags() {
        let empty = Dag::new(3, vec![], vec![2, 0, 1]).unwrap();
        let s = sample_scm(&empty, true, NoiseKind::Additive, &mut rng(6));
        assert!(s.nodes.iter().all(|n| matches!(n.kind, NodeKind::Root(_))));

        let collider = Dag::new(3, vec![(0, 2), (1, 2)], vec![0, 1, 2]).unwrap();
        let s = sample_scm(&collider, true, NoiseKind::Additive, &mut rng(6));
        match s.mechanism(2).unwrap().1 {
            Mechanism::Additive(ms) => {
                assert_eq!(ms.len(), 2);
                assert!(ms.iter().all(|m| m.parents() == 1));
            }
            other => panic!("expected additive, got {other:?}"),
        }
        let s = sample_scm(&collider, false, NoiseKind::Additive, &mut rng(6));
        assert!(matches!(s.mechanism(2).unwrap().1, Mechanism::Joint(m) if m.parents() == 2));
        for n in &s.nodes {
            assert!((0.05..=0.25).contains(&n.noise_scale));
            if let NodeKind::Root(spec) = n.kind {
                match spec {
                    RootSpec::Gaussian { scale } => assert!((0.5..=2.0).contains(&scale)),
                    RootSpec::Uniform { width } => assert!((1.0..=5.0).contains(&width)),
                }
            }
        }
    }

    #[test]
    fn additive_mechanism_at_zero_sums_parts() {
        let collider = Dag::new(3, vec![(0, 2), (1, 2)], vec![0, 1, 2]).unwrap();
        let s = sample_scm(&collider, true, NoiseKind::Additive, &mut rng(8));
        let (_, mech) = s.mechanism(2).unwrap();
        let Mechanism::Additive(ms) = mech else { unreachable!() };
        let expect: f64 = ms.iter().map(|m| m.eval_standardized(&[0.0])).sum();
        assert_eq!(mech.eval(&[0.0, 0.0]), expect);
    }

    #[test]
    fn gaussian_root_variance() {
        let dag = Dag::new(1, vec![], vec![0]).unwrap();
        let scm = ScmInstance {
            dag,
            nodes: vec![NodeSpec {
                noise_scale: 0.1,
                kind: NodeKind::Root(RootSpec::Gaussian { scale: 1.7 }),
            }],
            additive: true,
            noise_kind: NoiseKind::Additive,
            chain: None,
        };
        let n = 10_000;
        let t = scm.sample_table(n, &mut rng(9)).unwrap();
        let xs = t.observed_column(0);
        let v = var(&xs);
        let s2 = 1.7f64 * 1.7;
        // SE of a Gaussian sample variance: s²·√(2/(n−1))
        let se = s2 * (2.0 / (n - 1) as f64).sqrt();
        assert!((v - s2).abs() < 3.0 * se, "var {v} vs {s2}");
        let mean = xs.iter().sum::<f64>() / n as f64;
        assert!(mean.abs() < 3.0 * 1.7 / (n as f64).sqrt());
    }

    #[test]
    fn uniform_roots_stay_in_support() {
        let dag = Dag::new(1, vec![], vec![0]).unwrap();
        let scm = ScmInstance {
            dag,
            nodes: vec![NodeSpec {
                noise_scale: 0.1,
                kind: NodeKind::Root(RootSpec::Uniform { width: 4.0 }),
            }],
            additive: true,
            noise_kind: NoiseKind::Additive,
            chain: None,
        };
        let t = scm.sample_table(5000, &mut rng(10)).unwrap();
        assert!(t.observed_column(0).iter().all(|v| v.abs() <= 2.0));
    }

    #[test]
    fn additive_residual_matches_noise_scale() {
        let dag = Dag::new(2, vec![(0, 1)], vec![0, 1]).unwrap();
        let scm = sample_scm(&dag, true, NoiseKind::Additive, &mut rng(11));
        let n = 10_000;
        let s = scm.sample_detailed(n, StatsPolicy::Refit, &mut rng(12)).unwrap();
        let (_, mech) = s.fitted.mechanism(1).unwrap();
        let resid: Vec<f64> = (0..n)
            .map(|r| s.table.get(r, 1).unwrap() - mech.eval(&[s.table.get(r, 0).unwrap()]))
            .collect();
        let sigma = scm.nodes[1].noise_scale;
        let s2 = sigma * sigma;
        let se = s2 * (2.0 / (n - 1) as f64).sqrt();
        assert!((var(&resid) - s2).abs() < 3.0 * se);
        // the recorded noise is exactly the residual
        for r in 0..10 {
            assert!((resid[r] - s.noise[r * 2 + 1]).abs() < 1e-12);
        }
    }

    #[test]
    fn table_sampling_is_seeded() {
        let dag = sample_dag(4, 6, 0.0, &mut rng(13)).unwrap();
        let scm = sample_scm(&dag, false, NoiseKind::Heteroskedastic, &mut rng(14));
        let a = scm.sample_table(50, &mut rng(15)).unwrap();
        let b = scm.sample_table(50, &mut rng(15)).unwrap();
        assert_eq!(a, b);
        assert!(scm.sample_table(0, &mut rng(15)).is_err());
        let m = sample_scm(&dag, true, NoiseKind::Multiplicative, &mut rng(14));
        assert!(m.sample_table(50, &mut rng(15)).unwrap().values().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn spline_interpolates_knots() {
        let s = CubicSpline::sample(&mut rng(16));
        for (x, y) in s.knots_x.iter().zip(&s.knots_y) {
            assert!((s.eval_standardized(*x) - y).abs() < 1e-12);
        }
        // continuity at the right end knot, linear tail
        let e = 1e-7;
        let a = s.eval_standardized(3.0 - e);
        let b = s.eval_standardized(3.0 + e);
        assert!((a - b).abs() < 1e-5);
        let t1 = s.eval_standardized(4.0) - s.eval_standardized(3.5);
        let t2 = s.eval_standardized(4.5) - s.eval_standardized(4.0);
        assert!((t1 - t2).abs() < 1e-12);
    }

    #[test]
    fn chain_noise_variance_and_shape() {
        for kind in [ChainKind::Gp, ChainKind::Spline] {
            let c = sample_chain(kind, 5000, 2500, &mut rng(17)).unwrap();
            assert_eq!((c.train.n(), c.test.n(), c.train.d()), (5000, 2500, 3));
            assert_eq!(c.scm.dag.edges(), &[(0, 1), (1, 2)]);
            assert!(c.scm.is_chain());
            let (_, f) = c.scm.mechanism(1).unwrap();
            let resid: Vec<f64> = (0..5000)
                .map(|r| c.train.get(r, 1).unwrap() - f.eval(&[c.train.get(r, 0).unwrap()]))
                .collect();
            let se = 0.01 * (2.0 / 4999.0f64).sqrt();
            assert!((var(&resid) - 0.01).abs() < 3.0 * se, "{kind:?}: {}", var(&resid));
        }
    }

    #[test]
    fn interventions() {
        let c = sample_chain(ChainKind::Gp, 200, 4000, &mut rng(18)).unwrap();
        let none = apply_intervention(&c.test, &c.scm, InterventionKind::MechShift, 0.0, &mut rng(19)).unwrap();
        assert_eq!(none.table, c.test);
        assert!(none.intervened.iter().all(|&f| !f));

        let half = apply_intervention(&c.test, &c.scm, InterventionKind::MechShift, 0.5, &mut rng(19)).unwrap();
        assert_eq!(half.intervened.iter().filter(|&&f| f).count(), 2000);
        for r in 0..4000 {
            let same = half.table.get(r, 2) == c.test.get(r, 2);
            assert_eq!(same, !half.intervened[r]);
            assert_eq!(half.table.get(r, 1), c.test.get(r, 1));
        }

        let hard = apply_intervention(&c.test, &c.scm, InterventionKind::Hard, 1.0, &mut rng(20)).unwrap();
        let y = hard.table.observed_column(1);
        let z = hard.table.observed_column(2);
        let n = y.len() as f64;
        let (my, mz) = (y.iter().sum::<f64>() / n, z.iter().sum::<f64>() / n);
        let cov: f64 = y.iter().zip(&z).map(|(a, b)| (a - my) * (b - mz)).sum::<f64>() / n;
        let corr = cov / (var(&y) * var(&z)).sqrt();
        assert!(corr.abs() < 3.0 / n.sqrt(), "corr {corr}");

        let dag = Dag::new(3, vec![(0, 1), (0, 2)], vec![0, 1, 2]).unwrap();
        let other = sample_scm(&dag, true, NoiseKind::Additive, &mut rng(21));
        assert!(apply_intervention(&c.test, &other, InterventionKind::Hard, 0.5, &mut rng(22)).is_err());
    }
}
