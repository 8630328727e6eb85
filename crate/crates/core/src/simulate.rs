//! Finite-population Monte-Carlo harness.
//!
//! A [`Population`] fixes the network, covariates and errors once. Only the
//! treatment vector is redrawn. [`run_monte_carlo`] then runs two independent
//! phases of draws:
//!
//! 1. `draws_estimand` draws give the estimand (the mean Horvitz–Thompson
//!    contrast, or its exact expectation when the assignment space is small
//!    enough to enumerate) and the oracle standard error of every spec (the
//!    standard deviation of its point estimates).
//! 2. `draws_estimation` further draws give mean estimates, mean standard
//!    errors for each flavor, and coverage of 95% normal intervals against the
//!    phase-1 estimand.
//!
//! Draw `r` of phase 1 uses assignment stream `r`; draw `r` of phase 2 uses
//! stream `draws_estimand + r`. Results are reduced in draw order, so they are
//! bit-identical for any thread count.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Dyn, LU};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::{
    bandwidth_select, build_kernel, contrast_se, ehw_cov, hac_cov, hac_cov_plus, leung_ht_variance,
    leung_ht_variance_plus, leung_se, psd_split_with, BandwidthChoice, KernelMatrix, KernelSplit,
    DEFAULT_EIGEN_TOL, DEFAULT_SIZE_CAP, Z_95,
};
use crate::design::{
    enumerate_propensity, exact_propensity, for_each_assignment, mc_propensity, Design,
    PropensityMethod, PropensityTable, DEFAULT_MC_DRAWS,
};
use crate::error::{Error, Result};
use crate::estimate::{fit_wls, horvitz_thompson, Contrast, Dataset, WlsSpec};
use crate::exposure::{effective_sample, EffectiveSample, ExposureEvaluator, ExposureMapping};
use crate::graph::{average_degree, average_path_length, DegreeView, Graph};
use crate::rng::{stream_rng, subseed, NETWORK_STREAM, POPULATION_STREAM};

pub const DEFAULT_DRAWS: usize = 10_000;
pub const DESK_DRAWS: usize = 2_000;
pub const DEFAULT_ENUMERATION_LIMIT: usize = 1 << 14;

const TAG_ASSIGN: u64 = 1;
const TAG_PROPENSITY: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NetworkKind {
    /// Random geometric graph on the unit square with radius `sqrt(κ/(πn))`.
    Rgg {
        kappa: f64,
    },
    ErdosRenyi {
        expected_degree: f64,
    },
    /// No links at all.
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkModel {
    #[serde(flatten)]
    pub kind: NetworkKind,
    pub n: usize,
}

/// Generates a network and, for geometric graphs, the unit positions.
pub fn gen_network(model: &NetworkModel, seed: u64) -> Result<(Graph, Option<Vec<[f64; 2]>>)> {
    let n = model.n;
    if n < 2 {
        return Err(Error::Config(format!(
            "a simulated network needs at least 2 units, got {n}"
        )));
    }
    let mut rng = stream_rng(seed, NETWORK_STREAM);
    match model.kind {
        NetworkKind::Rgg { kappa } => {
            if !(kappa > 0.0) {
                return Err(Error::Config(format!(
                    "kappa must be positive, got {kappa}"
                )));
            }
            let pos: Vec<[f64; 2]> = (0..n)
                .map(|_| [rng.random::<f64>(), rng.random::<f64>()])
                .collect();
            let r = (kappa / (std::f64::consts::PI * n as f64)).sqrt();
            Ok((rgg_edges(&pos, r), Some(pos)))
        }
        NetworkKind::ErdosRenyi { expected_degree } => {
            if !(expected_degree >= 0.0) {
                return Err(Error::Config(format!(
                    "expected degree must be >= 0, got {expected_degree}"
                )));
            }
            let p = (expected_degree / n as f64).min(1.0);
            let mut edges = Vec::new();
            for i in 0..n {
                for j in i + 1..n {
                    if rng.random::<f64>() < p {
                        edges.push((i, j));
                    }
                }
            }
            Ok((Graph::from_edges(n, &edges, false)?.0, None))
        }
        NetworkKind::Empty => Ok((Graph::empty(n), None)),
    }
}

/// Links every pair within distance `r`, using a cell grid of width `≥ r`.
fn rgg_edges(pos: &[[f64; 2]], r: f64) -> Graph {
    let n = pos.len();
    let m = ((1.0 / r).floor() as usize).clamp(1, 4096);
    let cell = |v: f64| ((v * m as f64) as usize).min(m - 1);
    let mut grid: Vec<Vec<usize>> = vec![Vec::new(); m * m];
    for (i, p) in pos.iter().enumerate() {
        grid[cell(p[0]) * m + cell(p[1])].push(i);
    }
    let r2 = r * r;
    let mut lists: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, p) in pos.iter().enumerate() {
        let (cx, cy) = (cell(p[0]), cell(p[1]));
        for gx in cx.saturating_sub(1)..=(cx + 1).min(m - 1) {
            for gy in cy.saturating_sub(1)..=(cy + 1).min(m - 1) {
                for &j in &grid[gx * m + gy] {
                    if j != i {
                        let dx = p[0] - pos[j][0];
                        let dy = p[1] - pos[j][1];
                        if dx * dx + dy * dy <= r2 {
                            lists[i].push(j);
                        }
                    }
                }
            }
        }
        lists[i].sort_unstable();
    }
    Graph::from_sorted_lists(lists, false)
}

/// Sparse row-stochastic `Ã_ij = A_ij / Σ_j A_ij` over out-links; rows of
/// isolated units are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct RowNormalized {
    pub rows: Vec<Vec<(usize, f64)>>,
}

pub fn row_normalize(g: &Graph) -> RowNormalized {
    let rows = (0..g.n())
        .map(|i| {
            let nb = g.out_neighbors(i);
            let w = 1.0 / nb.len().max(1) as f64;
            nb.iter().map(|&j| (j, w)).collect()
        })
        .collect();
    RowNormalized { rows }
}

impl RowNormalized {
    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn mul(&self, v: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.iter().map(|&(j, w)| w * v[j]).sum())
            .collect()
    }

    pub fn mul_arm(&self, d: &[u8]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.iter().map(|&(j, w)| w * (d[j] == 1) as u8 as f64).sum())
            .collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n(), self.n());
        for (i, r) in self.rows.iter().enumerate() {
            for &(j, w) in r {
                m[(i, j)] = w;
            }
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeerParams {
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub xi: f64,
    pub gamma: f64,
}

/// `exp(x)` or `exp(x²)` in the `D·f(x)` term of the custom linear model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Exp,
    ExpSquare,
}

impl Transform {
    fn apply(self, x: f64) -> f64 {
        match self {
            Transform::Exp => x.exp(),
            Transform::ExpSquare => (x * x).exp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutcomeModel {
    /// `Y = (I − βÃ)⁻¹[α ι + (δÃ + ξI)D + γx + ε]`.
    LinearInMeans {
        #[serde(flatten)]
        params: PeerParams,
    },
    /// Threshold dynamics iterated to the first fixed point.
    ComplexContagion {
        #[serde(flatten)]
        params: PeerParams,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_iter: Option<usize>,
    },
    /// `Y = β0 + β1·ÃD + β2·D + β3·x + β4·D·f(x) + β5·Ãx + ε`.
    LinearCustom {
        coefficients: [f64; 6],
        transform: Transform,
    },
}

impl OutcomeModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            OutcomeModel::LinearInMeans { params } if !(params.beta.abs() < 1.0) => {
                Err(Error::Config(format!(
                    "linear-in-means needs |beta| < 1, got {}",
                    params.beta
                )))
            }
            _ => Ok(()),
        }
    }
}

/// Solves `(I − βÃ) Y = rhs` with an LU factorization computed once.
pub struct LinearInMeansSolver {
    lu: LU<f64, Dyn, Dyn>,
}

impl LinearInMeansSolver {
    pub fn new(a_tilde: &RowNormalized, beta: f64) -> Result<Self> {
        if !(beta.abs() < 1.0) {
            return Err(Error::Config(format!(
                "linear-in-means needs |beta| < 1, got {beta}"
            )));
        }
        let m = DMatrix::identity(a_tilde.n(), a_tilde.n()) - a_tilde.to_dense() * beta;
        Ok(LinearInMeansSolver { lu: m.lu() })
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let b = DVector::from_column_slice(rhs);
        self.lu
            .solve(&b)
            .map(|v| v.as_slice().to_vec())
            .ok_or_else(|| Error::Singular("I - beta*A_tilde".into()))
    }

    pub fn outcome(
        &self,
        a_tilde: &RowNormalized,
        d: &[u8],
        x: &[f64],
        eps: &[f64],
        p: &PeerParams,
    ) -> Result<Vec<f64>> {
        let ad = a_tilde.mul_arm(d);
        let rhs: Vec<f64> = (0..d.len())
            .map(|i| {
                p.alpha
                    + p.delta * ad[i]
                    + p.xi * (d[i] == 1) as u8 as f64
                    + p.gamma * x[i]
                    + eps[i]
            })
            .collect();
        self.solve(&rhs)
    }
}

/// Linear-in-means outcomes via a fresh factorization.
pub fn linear_in_means(
    a_tilde: &RowNormalized,
    d: &[u8],
    x: &[f64],
    eps: &[f64],
    p: &PeerParams,
) -> Result<Vec<f64>> {
    LinearInMeansSolver::new(a_tilde, p.beta)?.outcome(a_tilde, d, x, eps, p)
}

/// Complex-contagion outcomes. `max_iter` defaults to `n + 2`.
pub fn complex_contagion(
    a_tilde: &RowNormalized,
    d: &[u8],
    x: &[f64],
    eps: &[f64],
    p: &PeerParams,
    max_iter: Option<usize>,
) -> Result<Vec<f64>> {
    let n = d.len();
    let ad = a_tilde.mul_arm(d);
    let base: Vec<f64> = (0..n)
        .map(|i| {
            p.alpha + p.delta * ad[i] + p.xi * (d[i] == 1) as u8 as f64 + p.gamma * x[i] + eps[i]
        })
        .collect();
    let mut y: Vec<f64> = base.iter().map(|&v| (v > 0.0) as u8 as f64).collect();
    let cap = max_iter.unwrap_or(n + 2);
    for _ in 0..cap {
        let ay = a_tilde.mul(&y);
        let next: Vec<f64> = (0..n)
            .map(|i| ((base[i] + p.beta * ay[i]) > 0.0) as u8 as f64)
            .collect();
        if next == y {
            return Ok(y);
        }
        y = next;
    }
    Err(Error::NoFixedPoint(cap))
}

fn std_normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// `ε_i = ν_i + (ρ_{i1} − 0.5)` with `ν_i` standard normal.
pub fn homophily_errors(positions: &[[f64; 2]], rng: &mut ChaCha8Rng) -> Vec<f64> {
    positions
        .iter()
        .map(|p| std_normal(rng) + (p[0] - 0.5))
        .collect::<Vec<f64>>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ErrorModel {
    Homophily,
    Normal { variance: f64 },
}

/// A probability given as a constant or as the range of a uniform draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProbSpec {
    Constant(f64),
    Uniform([f64; 2]),
}

impl ProbSpec {
    fn draw(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match *self {
            ProbSpec::Constant(p) => vec![p; n],
            ProbSpec::Uniform([lo, hi]) => (0..n)
                .map(|_| lo + (hi - lo) * rng.random::<f64>())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DesignConfig {
    IidBernoulli {
        p: ProbSpec,
    },
    /// One block over the eligible units, treating `round(treat_frac · m)`.
    BlockComplete {
        treat_frac: f64,
    },
    SequentialNeighbor {
        p: ProbSpec,
        multiplier: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropensityMode {
    /// Enumeration when small, closed form when available, else Monte Carlo.
    #[default]
    Auto,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub network: NetworkModel,
    pub outcome: OutcomeModel,
    pub errors: ErrorModel,
    pub design: DesignConfig,
    pub mapping: ExposureMapping,
    pub specs: Vec<WlsSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contrast: Option<Contrast>,
    pub draws_estimand: usize,
    pub draws_estimation: usize,
    /// Fixed bandwidth; `None` applies the automatic rule.
    #[serde(default)]
    pub bandwidth: Option<u32>,
    pub seed: u64,
    #[serde(default)]
    pub propensity: PropensityMode,
    #[serde(default = "default_mc_draws")]
    pub mc_draws: usize,
    #[serde(default = "default_enumeration_limit")]
    pub enumeration_limit: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eligible: Option<Vec<bool>>,
}

fn default_mc_draws() -> usize {
    DEFAULT_MC_DRAWS
}

fn default_enumeration_limit() -> usize {
    DEFAULT_ENUMERATION_LIMIT
}

enum Engine {
    LinearInMeans(LinearInMeansSolver, PeerParams),
    Contagion(PeerParams, Option<usize>),
    Custom {
        coef: [f64; 6],
        transform: Transform,
        ax: Vec<f64>,
    },
}

/// Everything held fixed across draws.
pub struct Population {
    pub graph: Arc<Graph>,
    pub positions: Option<Vec<[f64; 2]>>,
    pub x: Vec<f64>,
    pub eps: Vec<f64>,
    pub design: Design,
    pub mapping: ExposureMapping,
    pub propensity: PropensityTable,
    pub sample: EffectiveSample,
    pub bandwidth: u32,
    pub bandwidth_rule: Option<BandwidthChoice>,
    pub kernel: KernelMatrix,
    pub split: KernelSplit,
    pub labels: Vec<String>,
    evaluator: ExposureEvaluator,
    a_tilde: RowNormalized,
    engine: Engine,
    x_sample: DMatrix<f64>,
    pi_sample: PropensityTable,
    enumerable: bool,
}

impl Population {
    pub fn build(cfg: &SimConfig) -> Result<Self> {
        cfg.outcome.validate()?;
        let (graph, positions) = gen_network(&cfg.network, cfg.seed)?;
        let n = graph.n();
        let graph = Arc::new(graph);
        let mut rng = stream_rng(cfg.seed, POPULATION_STREAM);
        let x: Vec<f64> = (0..n).map(|_| std_normal(&mut rng)).collect();
        let eps = match cfg.errors {
            ErrorModel::Homophily => match &positions {
                Some(p) => homophily_errors(p, &mut rng),
                None => {
                    return Err(Error::Config(
                        "homophily errors need a geometric network with positions".into(),
                    ))
                }
            },
            ErrorModel::Normal { variance } => {
                if !(variance >= 0.0) {
                    return Err(Error::Config(format!(
                        "error variance must be >= 0, got {variance}"
                    )));
                }
                let sd = variance.sqrt();
                (0..n).map(|_| sd * std_normal(&mut rng)).collect()
            }
        };
        let design = match &cfg.design {
            DesignConfig::IidBernoulli { p } => {
                Design::iid(p.draw(n, &mut rng), cfg.eligible.clone())?
            }
            DesignConfig::BlockComplete { treat_frac } => {
                Design::block_complete_frac(&vec![0; n], cfg.eligible.clone(), *treat_frac)?
            }
            DesignConfig::SequentialNeighbor { p, multiplier } => Design::sequential(
                p.draw(n, &mut rng),
                cfg.eligible.clone(),
                *multiplier,
                graph.clone(),
            )?,
        };
        let mapping = cfg.mapping.clone();
        let labels = mapping.labels();
        let prop_seed = subseed(cfg.seed, TAG_PROPENSITY);
        let enumerated = enumerate_propensity(&mapping, &design, &graph, cfg.enumeration_limit)?;
        let enumerable = enumerated.is_some();
        let propensity = match (enumerated, cfg.propensity) {
            (Some(t), _) => t,
            (None, PropensityMode::MonteCarlo) => {
                mc_propensity(&mapping, &design, &graph, cfg.mc_draws, prop_seed)?
            }
            (None, PropensityMode::Auto) => match exact_propensity(&mapping, &design, &graph) {
                Err(Error::UnsupportedPropensity { .. }) => {
                    mc_propensity(&mapping, &design, &graph, cfg.mc_draws, prop_seed)?
                }
                other => other?,
            },
        };
        let sample = effective_sample(&mapping, &propensity)?;
        let (bandwidth, bandwidth_rule) = match cfg.bandwidth {
            Some(b) => (b, None),
            None => {
                let apl = average_path_length(&graph);
                let deg = average_degree(&graph, DegreeView::Out);
                let choice = bandwidth_select(apl, n, deg, mapping.locality());
                (choice.b, Some(choice))
            }
        };
        let kernel = build_kernel(&graph, &sample.units, bandwidth)?;
        let split = psd_split_with(&kernel, DEFAULT_EIGEN_TOL, DEFAULT_SIZE_CAP)?;
        let a_tilde = row_normalize(&graph);
        let engine = match &cfg.outcome {
            OutcomeModel::LinearInMeans { params } => {
                Engine::LinearInMeans(LinearInMeansSolver::new(&a_tilde, params.beta)?, *params)
            }
            OutcomeModel::ComplexContagion { params, max_iter } => {
                Engine::Contagion(*params, *max_iter)
            }
            OutcomeModel::LinearCustom {
                coefficients,
                transform,
            } => Engine::Custom {
                coef: *coefficients,
                transform: *transform,
                ax: a_tilde.mul(&x),
            },
        };
        let x_sample = DMatrix::from_fn(sample.len(), 1, |r, _| x[sample.units[r]]);
        let pi_sample = propensity.restrict(&sample.units);
        let evaluator = ExposureEvaluator::new(&mapping, &graph);
        Ok(Population {
            graph,
            positions,
            x,
            eps,
            design,
            mapping,
            propensity,
            sample,
            bandwidth,
            bandwidth_rule,
            kernel,
            split,
            labels,
            evaluator,
            a_tilde,
            engine,
            x_sample,
            pi_sample,
            enumerable,
        })
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    /// Potential outcomes `Y(d)` for the whole population.
    pub fn outcome(&self, d: &[u8]) -> Result<Vec<f64>> {
        match &self.engine {
            Engine::LinearInMeans(solver, p) => {
                solver.outcome(&self.a_tilde, d, &self.x, &self.eps, p)
            }
            Engine::Contagion(p, cap) => {
                complex_contagion(&self.a_tilde, d, &self.x, &self.eps, p, *cap)
            }
            Engine::Custom {
                coef,
                transform,
                ax,
            } => {
                let ad = self.a_tilde.mul_arm(d);
                Ok((0..d.len())
                    .map(|i| {
                        let di = (d[i] == 1) as u8 as f64;
                        coef[0]
                            + coef[1] * ad[i]
                            + coef[2] * di
                            + coef[3] * self.x[i]
                            + coef[4] * di * transform.apply(self.x[i])
                            + coef[5] * ax[i]
                            + self.eps[i]
                    })
                    .collect())
            }
        }
    }

    /// Analysis dataset on the effective sample for assignment `d`.
    pub fn dataset(&self, d: &[u8]) -> Result<Dataset> {
        let t = self.evaluator.evaluate(d)?;
        let y = self.outcome(d)?;
        let units = &self.sample.units;
        Dataset::new(
            units.clone(),
            units.iter().map(|&i| y[i]).collect(),
            self.x_sample.clone(),
            units.iter().map(|&i| t[i]).collect(),
            &self.pi_sample,
            self.labels.clone(),
        )
    }
}

fn resolve_contrast(cfg: &SimConfig, labels: &[String]) -> Result<Contrast> {
    let g = match &cfg.contrast {
        Some(c) => c.clone(),
        None if labels.len() == 2 => Contrast::difference(2, 1, 0, labels),
        None => Contrast::identity(labels),
    };
    g.check_width(labels.len())?;
    Ok(g)
}

/// `Δ_i(g) = Σ_t g_t 1_i(t) Y_i / π_i(t)`; its mean is the HT contrast.
pub fn ht_delta(ds: &Dataset, g: &[f64]) -> Vec<f64> {
    (0..ds.n())
        .map(|k| g[ds.t()[k]] * ds.y()[k] / ds.pi_realized(k))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SeFlavor {
    Wls,
    WlsPlus,
    Ehw,
    Leung,
    LeungPlus,
}

impl SeFlavor {
    pub fn label(self) -> &'static str {
        match self {
            SeFlavor::Wls => "WLS SE",
            SeFlavor::WlsPlus => "WLS+ SE",
            SeFlavor::Ehw => "EHW SE",
            SeFlavor::Leung => "Leung SE",
            SeFlavor::LeungPlus => "Leung+ SE",
        }
    }

    fn for_spec(spec: WlsSpec) -> &'static [SeFlavor] {
        match spec {
            WlsSpec::HtTransformed => &[
                SeFlavor::Wls,
                SeFlavor::WlsPlus,
                SeFlavor::Ehw,
                SeFlavor::Leung,
                SeFlavor::LeungPlus,
            ],
            _ => &[SeFlavor::Wls, SeFlavor::WlsPlus, SeFlavor::Ehw],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlavorResult {
    pub flavor: SeFlavor,
    /// Mean over draws with a nonnegative variance, per contrast row.
    pub mean_se: Vec<f64>,
    pub coverage: Vec<f64>,
    /// Share of draws whose variance estimate was negative.
    pub negative_rate: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpecResult {
    pub spec: WlsSpec,
    pub name: String,
    pub oracle_se: Vec<f64>,
    pub mean_estimate: Vec<f64>,
    pub oracle_coverage: Vec<f64>,
    pub flavors: Vec<FlavorResult>,
}

impl SpecResult {
    pub fn flavor(&self, f: SeFlavor) -> Option<&FlavorResult> {
        self.flavors.iter().find(|r| r.flavor == f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimandMethod {
    MonteCarlo,
    Enumeration,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimResult {
    pub seed: u64,
    pub n: usize,
    pub n_effective: usize,
    pub bandwidth: u32,
    pub draws_estimand: usize,
    pub draws_estimation: usize,
    pub propensity_method: PropensityMethod,
    pub estimand_method: EstimandMethod,
    pub contrast_labels: Vec<String>,
    pub estimand: Vec<f64>,
    pub specs: Vec<SpecResult>,
}

impl SimResult {
    pub fn spec(&self, s: WlsSpec) -> Option<&SpecResult> {
        self.specs.iter().find(|r| r.spec == s)
    }

    /// Wide table with one column per spec: estimand, mean estimate, oracle
    /// SE, mean SE of each flavor, then the matching coverages. Flavors a spec
    /// does not report are left empty.
    pub fn to_table_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Data(format!("writing simulation table: {e}"));
        let mut header = vec!["contrast".to_string(), "row".to_string()];
        header.extend(self.specs.iter().map(|s| s.name.clone()));
        w.write_record(&header).map_err(io)?;
        let mut flavors: Vec<SeFlavor> = Vec::new();
        for s in &self.specs {
            for f in &s.flavors {
                if !flavors.contains(&f.flavor) {
                    flavors.push(f.flavor);
                }
            }
        }
        for (r, label) in self.contrast_labels.iter().enumerate() {
            let mut emit =
                |name: String, cell: &dyn Fn(&SpecResult) -> Option<f64>| -> Result<()> {
                    let mut rec = vec![label.clone(), name];
                    rec.extend(
                        self.specs
                            .iter()
                            .map(|s| cell(s).map(|v| v.to_string()).unwrap_or_default()),
                    );
                    w.write_record(&rec).map_err(io)
                };
            emit("Estimand".into(), &|_| Some(self.estimand[r]))?;
            emit("Estimate".into(), &|s| Some(s.mean_estimate[r]))?;
            emit("Oracle SE".into(), &|s| Some(s.oracle_se[r]))?;
            for &f in &flavors {
                emit(f.label().into(), &|s| s.flavor(f).map(|x| x.mean_se[r]))?;
            }
            emit("Oracle Coverage".into(), &|s| Some(s.oracle_coverage[r]))?;
            for &f in &flavors {
                let name = format!("{} Coverage", f.label().trim_end_matches(" SE"));
                emit(name, &|s| s.flavor(f).map(|x| x.coverage[r]))?;
            }
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Data(format!("writing simulation table: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// One row per contrast × spec × SE flavor.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Data(format!("writing simulation table: {e}"));
        w.write_record([
            "contrast",
            "spec",
            "se_flavor",
            "estimand",
            "estimate",
            "oracle_se",
            "mean_se",
            "coverage",
            "oracle_coverage",
            "negative_rate",
        ])
        .map_err(io)?;
        for (r, label) in self.contrast_labels.iter().enumerate() {
            for s in &self.specs {
                for f in &s.flavors {
                    w.write_record([
                        label.clone(),
                        s.name.clone(),
                        f.flavor.label().to_string(),
                        self.estimand[r].to_string(),
                        s.mean_estimate[r].to_string(),
                        s.oracle_se[r].to_string(),
                        f.mean_se[r].to_string(),
                        f.coverage[r].to_string(),
                        s.oracle_coverage[r].to_string(),
                        f.negative_rate[r].to_string(),
                    ])
                    .map_err(io)?;
                }
            }
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Data(format!("writing simulation table: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

struct Draw1 {
    est: Vec<Vec<f64>>,
    ht: Vec<f64>,
}

struct Draw2 {
    est: Vec<Vec<f64>>,
    /// `[spec][flavor][row]` standard errors, NaN for negative variances.
    se: Vec<Vec<Vec<f64>>>,
}

fn ht_contrast(ds: &Dataset, g: &Contrast) -> Vec<f64> {
    let ht: Vec<f64> = (0..ds.support()).map(|t| horvitz_thompson(ds, t)).collect();
    g.apply(&ht).expect("contrast width checked")
}

fn phase_one(pop: &Population, d: &[u8], specs: &[WlsSpec], g: &Contrast) -> Result<Draw1> {
    let ds = pop.dataset(d)?;
    let est = specs
        .iter()
        .map(|&s| fit_wls(&ds, s).and_then(|f| g.apply(f.beta())))
        .collect::<Result<Vec<_>>>()?;
    Ok(Draw1 {
        est,
        ht: ht_contrast(&ds, g),
    })
}

fn phase_two(pop: &Population, d: &[u8], specs: &[WlsSpec], g: &Contrast) -> Result<Draw2> {
    let ds = pop.dataset(d)?;
    let mut est = Vec::with_capacity(specs.len());
    let mut se = Vec::with_capacity(specs.len());
    for &s in specs {
        let fit = fit_wls(&ds, s)?;
        est.push(g.apply(fit.beta())?);
        let sub = fit.nparams() > fit.support;
        let ses = |v: &DMatrix<f64>| -> Result<Vec<f64>> {
            Ok(contrast_se(v, g)?.iter().map(|c| c.se).collect())
        };
        let mut per = Vec::new();
        for &f in SeFlavor::for_spec(s) {
            per.push(match f {
                SeFlavor::Wls => ses(&hac_cov(&fit, &pop.kernel, sub)?)?,
                SeFlavor::WlsPlus => ses(&hac_cov_plus(&fit, &pop.split, sub)?)?,
                SeFlavor::Ehw => ses(&ehw_cov(&fit, sub))?,
                SeFlavor::Leung | SeFlavor::LeungPlus => g
                    .rows
                    .iter()
                    .map(|row| {
                        let delta = ht_delta(&ds, row);
                        let tau = delta.iter().sum::<f64>() / delta.len() as f64;
                        let s2 = if f == SeFlavor::Leung {
                            leung_ht_variance(&delta, tau, &pop.kernel)?
                        } else {
                            leung_ht_variance_plus(&delta, tau, &pop.split)?
                        };
                        Ok(leung_se(s2, ds.n()))
                    })
                    .collect::<Result<Vec<_>>>()?,
            });
        }
        se.push(per);
    }
    Ok(Draw2 { est, se })
}

fn run_phase<T: Send>(
    seed: u64,
    streams: std::ops::Range<usize>,
    pop: &Population,
    f: impl Fn(&[u8]) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    let out: Vec<Result<T>> = streams
        .into_par_iter()
        .map(|r| {
            let d = pop.design.draw_indexed(seed, r as u64);
            f(&d).map_err(|e| Error::Draw {
                draw: r,
                seed,
                source: Box::new(e),
            })
        })
        .collect();
    out.into_iter().collect()
}

fn sd(v: &[f64]) -> f64 {
    let m = v.len() as f64;
    if m < 2.0 {
        return f64::NAN;
    }
    let mean = v.iter().sum::<f64>() / m;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt()
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn covers(est: f64, se: f64, target: f64) -> bool {
    se.is_finite() && (est - target).abs() <= Z_95 * se
}

/// Exact `E[G · HT]` by enumerating every assignment.
fn enumerated_estimand(pop: &Population, g: &Contrast, limit: usize) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; g.rows.len()];
    let mut failure = None;
    for_each_assignment(&pop.design, limit, |d, prob| {
        if failure.is_some() {
            return;
        }
        match pop.dataset(d) {
            Ok(ds) => {
                for (a, v) in acc.iter_mut().zip(ht_contrast(&ds, g)) {
                    *a += prob * v;
                }
            }
            Err(e) => failure = Some(e),
        }
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(acc),
    }
}

pub fn run_monte_carlo(cfg: &SimConfig) -> Result<SimResult> {
    let pop = Population::build(cfg)?;
    run_on_population(cfg, &pop)
}

/// Both phases on an already built population.
pub fn run_on_population(cfg: &SimConfig, pop: &Population) -> Result<SimResult> {
    if cfg.specs.is_empty() {
        return Err(Error::Config("no estimator specs to compare".into()));
    }
    if cfg.draws_estimand < 2 {
        return Err(Error::Config(
            "the estimand phase needs at least 2 draws".into(),
        ));
    }
    let g = resolve_contrast(cfg, &pop.labels)?;
    let rows = g.rows.len();
    let seed = subseed(cfg.seed, TAG_ASSIGN);
    let r1 = cfg.draws_estimand;
    let r2 = cfg.draws_estimation;
    let specs = &cfg.specs;

    let p1 = run_phase(seed, 0..r1, pop, |d| phase_one(pop, d, specs, &g))?;
    let p2 = run_phase(seed, r1..r1 + r2, pop, |d| phase_two(pop, d, specs, &g))?;

    let (estimand, estimand_method) = if pop.enumerable {
        (
            enumerated_estimand(pop, &g, cfg.enumeration_limit)?,
            EstimandMethod::Enumeration,
        )
    } else {
        let e = (0..rows)
            .map(|r| mean(&p1.iter().map(|d| d.ht[r]).collect::<Vec<_>>()))
            .collect();
        (e, EstimandMethod::MonteCarlo)
    };

    let mut out = Vec::with_capacity(specs.len());
    for (si, &spec) in specs.iter().enumerate() {
        let oracle_se: Vec<f64> = (0..rows)
            .map(|r| sd(&p1.iter().map(|d| d.est[si][r]).collect::<Vec<_>>()))
            .collect();
        let est2 = |r: usize| p2.iter().map(|d| d.est[si][r]).collect::<Vec<f64>>();
        let mean_estimate = (0..rows).map(|r| mean(&est2(r))).collect();
        let rate = |hits: usize| {
            if r2 == 0 {
                f64::NAN
            } else {
                hits as f64 / r2 as f64
            }
        };
        let oracle_coverage = (0..rows)
            .map(|r| {
                rate(
                    p2.iter()
                        .filter(|d| covers(d.est[si][r], oracle_se[r], estimand[r]))
                        .count(),
                )
            })
            .collect();
        let flavors = SeFlavor::for_spec(spec)
            .iter()
            .enumerate()
            .map(|(fi, &flavor)| {
                let mut mean_se = Vec::with_capacity(rows);
                let mut coverage = Vec::with_capacity(rows);
                let mut negative_rate = Vec::with_capacity(rows);
                for r in 0..rows {
                    let ses: Vec<f64> = p2.iter().map(|d| d.se[si][fi][r]).collect();
                    let finite: Vec<f64> = ses.iter().copied().filter(|s| s.is_finite()).collect();
                    mean_se.push(mean(&finite));
                    negative_rate.push(rate(ses.len() - finite.len()));
                    coverage.push(rate(
                        p2.iter()
                            .filter(|d| covers(d.est[si][r], d.se[si][fi][r], estimand[r]))
                            .count(),
                    ));
                }
                FlavorResult {
                    flavor,
                    mean_se,
                    coverage,
                    negative_rate,
                }
            })
            .collect();
        out.push(SpecResult {
            spec,
            name: spec.short_name().to_string(),
            oracle_se,
            mean_estimate,
            oracle_coverage,
            flavors,
        });
    }

    Ok(SimResult {
        seed: cfg.seed,
        n: pop.n(),
        n_effective: pop.sample.len(),
        bandwidth: pop.bandwidth,
        draws_estimand: r1,
        draws_estimation: r2,
        propensity_method: pop.propensity.method.clone(),
        estimand_method,
        contrast_labels: g.labels.clone(),
        estimand,
        specs: out,
    })
}

pub const PRESETS: &[&str] = &[
    "table1-desk",
    "contagion-desk",
    "design1",
    "design2",
    "design3",
    "ht",
];

/// Named configurations for the standard experiments.
pub fn preset(name: &str, seed: u64) -> Result<SimConfig> {
    let rgg = |n: usize, kappa: f64| NetworkModel {
        kind: NetworkKind::Rgg { kappa },
        n,
    };
    let all_specs = vec![
        WlsSpec::Unadjusted,
        WlsSpec::Additive,
        WlsSpec::FullyInteracted,
    ];
    let custom = OutcomeModel::LinearCustom {
        coefficients: [1.0, -0.9, 6.0, -1.0, 0.2, -3.0],
        transform: Transform::Exp,
    };
    let base = |network, outcome, errors, design, mapping, specs, bandwidth| SimConfig {
        network,
        outcome,
        errors,
        design,
        mapping,
        specs,
        contrast: None,
        draws_estimand: DESK_DRAWS,
        draws_estimation: DESK_DRAWS,
        bandwidth,
        seed,
        propensity: PropensityMode::Auto,
        mc_draws: DEFAULT_MC_DRAWS,
        enumeration_limit: DEFAULT_ENUMERATION_LIMIT,
        eligible: None,
    };
    let peer = |beta: f64| PeerParams {
        alpha: -1.0,
        beta,
        delta: 1.0,
        xi: 1.0,
        gamma: 3.0,
    };
    Ok(match name {
        "table1-desk" => base(
            rgg(800, 5.0),
            OutcomeModel::LinearInMeans { params: peer(0.8) },
            ErrorModel::Homophily,
            DesignConfig::IidBernoulli {
                p: ProbSpec::Constant(0.5),
            },
            ExposureMapping::any_treated_neighbor(),
            all_specs,
            None,
        ),
        "contagion-desk" => base(
            rgg(800, 5.0),
            OutcomeModel::ComplexContagion {
                params: peer(1.5),
                max_iter: None,
            },
            ErrorModel::Homophily,
            DesignConfig::IidBernoulli {
                p: ProbSpec::Constant(0.5),
            },
            ExposureMapping::any_treated_neighbor(),
            all_specs,
            None,
        ),
        "design1" => base(
            NetworkModel {
                kind: NetworkKind::Empty,
                n: 500,
            },
            OutcomeModel::LinearCustom {
                coefficients: [1.0, 0.0, 4.0, 2.0, 0.1, 0.0],
                transform: Transform::ExpSquare,
            },
            ErrorModel::Normal { variance: 1.0 },
            DesignConfig::IidBernoulli {
                p: ProbSpec::Uniform([0.1, 0.9]),
            },
            ExposureMapping::direct(),
            all_specs,
            Some(0),
        ),
        "design2" => base(
            rgg(500, 8.0),
            custom,
            ErrorModel::Normal { variance: 16.0 },
            DesignConfig::BlockComplete { treat_frac: 0.1 },
            ExposureMapping::direct(),
            all_specs,
            Some(2),
        ),
        "design3" => base(
            rgg(500, 5.0),
            custom,
            ErrorModel::Normal { variance: 16.0 },
            DesignConfig::SequentialNeighbor {
                p: ProbSpec::Uniform([0.4, 0.8]),
                multiplier: 0.25,
            },
            ExposureMapping::direct(),
            all_specs,
            Some(2),
        ),
        "ht" => {
            let mut c = base(
                rgg(500, 5.0),
                OutcomeModel::LinearCustom {
                    coefficients: [1.0, -1.0, -1.0, 0.0, 0.0, 0.0],
                    transform: Transform::Exp,
                },
                ErrorModel::Normal { variance: 16.0 },
                DesignConfig::SequentialNeighbor {
                    p: ProbSpec::Uniform([0.2, 0.4]),
                    multiplier: 2.0,
                },
                ExposureMapping::direct(),
                vec![WlsSpec::Unadjusted, WlsSpec::HtTransformed],
                Some(2),
            );
            c.propensity = PropensityMode::MonteCarlo;
            c
        }
        other => {
            return Err(Error::Config(format!(
                "unknown preset {other:?}; choose one of {}",
                PRESETS.join(", ")
            )))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k3() -> Graph {
        Graph::from_edges(3, &[(0, 1), (1, 2), (0, 2)], false)
            .unwrap()
            .0
    }

    #[test]
    fn row_normalization() {
        let a = row_normalize(&k3());
        assert_eq!(a.rows[0], vec![(1, 0.5), (2, 0.5)]);
        let iso = row_normalize(&Graph::empty(2));
        assert!(iso.rows.iter().all(Vec::is_empty));
    }

    #[test]
    fn lim_without_feedback_is_direct() {
        let a = row_normalize(&k3());
        let p = PeerParams {
            alpha: 1.0,
            beta: 0.0,
            delta: 2.0,
            xi: 3.0,
            gamma: 0.5,
        };
        let y = linear_in_means(&a, &[1, 0, 0], &[1.0, 0.0, -1.0], &[0.0; 3], &p).unwrap();
        assert!((y[0] - (1.0 + 3.0 + 0.5)).abs() < 1e-14);
        assert!((y[1] - (1.0 + 1.0)).abs() < 1e-14);
    }

    #[test]
    fn lim_geometric_fixed_point() {
        let a = row_normalize(&k3());
        let p = PeerParams {
            alpha: 1.0,
            beta: 0.6,
            delta: 0.0,
            xi: 0.0,
            gamma: 0.0,
        };
        let y = linear_in_means(&a, &[0; 3], &[0.0; 3], &[0.0; 3], &p).unwrap();
        assert!(y.iter().all(|v| (v - 2.5).abs() < 1e-12));
        let bad = PeerParams { beta: 1.2, ..p };
        assert!(linear_in_means(&a, &[0; 3], &[0.0; 3], &[0.0; 3], &bad).is_err());
    }

    #[test]
    fn contagion_trivial_cases() {
        let a = row_normalize(&k3());
        let off = PeerParams {
            alpha: -1.0,
            beta: 0.0,
            delta: 0.0,
            xi: 0.0,
            gamma: 0.0,
        };
        assert_eq!(
            complex_contagion(&a, &[1; 3], &[0.0; 3], &[0.0; 3], &off, None).unwrap(),
            vec![0.0; 3]
        );
        let on = PeerParams {
            alpha: 0.0,
            beta: 0.0,
            delta: 0.0,
            xi: 100.0,
            gamma: 0.0,
        };
        assert_eq!(
            complex_contagion(&a, &[1; 3], &[0.0; 3], &[0.0; 3], &on, None).unwrap(),
            vec![1.0; 3]
        );
    }

    #[test]
    fn rgg_matches_brute_force() {
        let model = NetworkModel {
            kind: NetworkKind::Rgg { kappa: 6.0 },
            n: 300,
        };
        let (g, pos) = gen_network(&model, 5).unwrap();
        let pos = pos.unwrap();
        let r2 = 6.0 / (std::f64::consts::PI * 300.0);
        for i in 0..300 {
            let brute: Vec<usize> = (0..300)
                .filter(|&j| {
                    j != i
                        && (pos[i][0] - pos[j][0]).powi(2) + (pos[i][1] - pos[j][1]).powi(2) <= r2
                })
                .collect();
            assert_eq!(g.out_neighbors(i), brute.as_slice());
        }
    }

    #[test]
    fn presets_resolve() {
        for p in PRESETS {
            let c = preset(p, 1).unwrap();
            let js = serde_json::to_string(&c).unwrap();
            let back: SimConfig = serde_json::from_str(&js).unwrap();
            assert_eq!(back, c);
        }
        assert!(preset("nope", 1).is_err());
    }
}
