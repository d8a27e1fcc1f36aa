//! Simulation of piecewise-elevated, Matérn-correlated risk surfaces with
//! known boundaries, and the replicate study comparing boundary models.

use std::fmt::Write as _;

use nalgebra::{Cholesky, DMatrix, Dyn};
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{self, THRESHOLDS};
use crate::elicit::{self, Adjustment, EdgePriorSet, PriorFamily};
use crate::error::{Error, Result};
use crate::glm::PoissonGlm;
use crate::graph::ArealGraph;
use crate::rng::{derive_seed, stream_rng, ChainRng, Stream};
use crate::sampler::{run_chain, Dataset, Iterations, Mode, ModelConfig, SampleStore, Smoothing};

/// Diagonal jitter added before factorising the Matérn covariance.
pub const COVARIANCE_JITTER: f64 = 1e-10;

/// Matérn correlation with smoothness 5/2.
pub fn matern_52(d: f64, ell: f64) -> Result<f64> {
    if !(ell > 0.0) || !ell.is_finite() {
        return Err(Error::InvalidArgument(format!("range must be positive, got {ell}")));
    }
    if !(d >= 0.0) {
        return Err(Error::InvalidArgument(format!("distance must be non-negative, got {d}")));
    }
    let s = 5f64.sqrt() * d / ell;
    Ok((1.0 + s + s * s / 3.0) * (-s).exp())
}

fn median_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Range `ℓ` at which the median Matérn correlation over the given pairwise
/// distances equals `target`.
pub fn calibrate_range(dists: &[f64], target: f64) -> Result<f64> {
    if dists.is_empty() {
        return Err(Error::InvalidArgument("no pairwise distances".into()));
    }
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::InvalidArgument(format!("target correlation must lie in (0, 1), got {target}")));
    }
    let mut d = dists.to_vec();
    if d.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidArgument("distances must be finite and non-negative".into()));
    }
    d.sort_by(f64::total_cmp);
    // The correlation is decreasing in d, so the median correlation comes from
    // the middle distances.
    let n = d.len();
    let middle: Vec<f64> = if n % 2 == 1 { vec![d[n / 2]] } else { vec![d[n / 2 - 1], d[n / 2]] };
    if middle.iter().all(|&v| v == 0.0) {
        return Err(Error::Degenerate("median pairwise distance is zero".into()));
    }
    let excess = |ell: f64| -> f64 {
        let c: Vec<f64> = middle.iter().map(|&v| matern_52(v, ell).unwrap()).collect();
        c.iter().sum::<f64>() / c.len() as f64 - target
    };
    let scale = median_sorted(&d).max(f64::MIN_POSITIVE);
    let (mut lo, mut hi) = (scale, scale);
    let mut guard = 0;
    while excess(lo) > 0.0 {
        lo *= 0.5;
        guard += 1;
        if guard > 200 {
            return Err(Error::Numerical("range bracket did not close".into()));
        }
    }
    while excess(hi) < 0.0 {
        hi *= 2.0;
        guard += 1;
        if guard > 400 {
            return Err(Error::Numerical("range bracket did not close".into()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if excess(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Areas lying in the elevated region, and the elevation `M`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTemplate {
    pub elevated: Vec<bool>,
    pub m: f64,
}

/// Rectangular block `(row, col, height, width)` of a lattice.
pub type Block = [usize; 4];

/// Five separated interior blocks on a 16×16 lattice whose perimeters make up
/// 48 of the 480 borders.
pub const DESK_BLOCKS: [Block; 5] = [[2, 2, 2, 3], [2, 9, 3, 2], [7, 5, 2, 2], [10, 10, 3, 3], [12, 2, 2, 2]];

impl SimTemplate {
    /// Lattice template with the given blocks raised by `m`.
    pub fn blocks(rows: usize, cols: usize, blocks: &[Block], m: f64) -> Result<Self> {
        if !(m >= 0.0) || !m.is_finite() {
            return Err(Error::InvalidArgument(format!("elevation must be non-negative, got {m}")));
        }
        let mut elevated = vec![false; rows * cols];
        for &[r0, c0, h, w] in blocks {
            if h == 0 || w == 0 || r0 + h > rows || c0 + w > cols {
                return Err(Error::InvalidArgument(format!(
                    "block at ({r0}, {c0}) of size {h}x{w} does not fit a {rows}x{cols} lattice"
                )));
            }
            for r in r0..r0 + h {
                for c in c0..c0 + w {
                    elevated[r * cols + c] = true;
                }
            }
        }
        Ok(SimTemplate { elevated, m })
    }

    pub fn desk(m: f64) -> Self {
        Self::blocks(16, 16, &DESK_BLOCKS, m).expect("desk blocks fit the lattice")
    }

    pub fn mean(&self) -> Vec<f64> {
        self.elevated.iter().map(|&e| if e { self.m } else { 0.0 }).collect()
    }

    /// Borders whose ends carry different means. Empty when `M = 0`.
    pub fn boundaries(&self, g: &ArealGraph) -> Vec<bool> {
        g.border_pairs()
            .iter()
            .map(|b| self.m > 0.0 && self.elevated[b.k] != self.elevated[b.j])
            .collect()
    }
}

/// Piecewise-constant mean and Matérn covariance `σ² ρ(d)` with jitter on the
/// diagonal.
pub fn build_covariance(
    g: &ArealGraph,
    template: &SimTemplate,
    ell: f64,
    variance: f64,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    if !(variance > 0.0) {
        return Err(Error::InvalidArgument(format!("variance must be positive, got {variance}")));
    }
    if template.elevated.len() != g.n() {
        return Err(Error::LengthMismatch {
            what: "template",
            got: template.elevated.len(),
            expected: g.n(),
        });
    }
    let dist = g.pairwise_distances()?;
    let n = g.n();
    let mut cov = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in 0..n {
            cov[(a, b)] = variance * matern_52(dist[a][b], ell)?;
        }
        cov[(a, a)] += COVARIANCE_JITTER;
    }
    Ok((template.mean(), cov))
}

/// Mean and Cholesky factor of the effect-surface distribution.
#[derive(Debug, Clone)]
pub struct EffectLaw {
    mean: Vec<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl EffectLaw {
    pub fn new(mean: Vec<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::LengthMismatch {
                what: "covariance",
                got: cov.nrows(),
                expected: mean.len(),
            });
        }
        let chol = cov
            .cholesky()
            .ok_or_else(|| Error::Numerical("covariance is not positive definite".into()))?;
        Ok(EffectLaw { mean, chol })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    fn centred_draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let n = self.mean.len();
        let z = nalgebra::DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = self.chol.l() * z;
        x.iter().copied().collect()
    }
}

/// `φ ~ N(μ, Σ)` and `φ* = μ + r(φ − μ) + sqrt(1 − r²) η` with an independent
/// `η ~ N(0, Σ)`: both margins are `N(μ, Σ)` and each area's pair has
/// correlation `r`.
pub fn draw_effects_pair<R: Rng + ?Sized>(law: &EffectLaw, r: f64, rng: &mut R) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(Error::InvalidArgument(format!("pair correlation must lie in (0, 1], got {r}")));
    }
    let a = law.centred_draw(rng);
    let phi: Vec<f64> = a.iter().zip(&law.mean).map(|(x, m)| m + x).collect();
    if r == 1.0 {
        return Ok((phi.clone(), phi));
    }
    let eta = law.centred_draw(rng);
    let s = (1.0 - r * r).sqrt();
    let star = (0..phi.len()).map(|k| law.mean[k] + r * a[k] + s * eta[k]).collect();
    Ok((phi, star))
}

fn default_r() -> f64 {
    0.95
}
fn default_median() -> f64 {
    0.5
}
fn default_beta() -> f64 {
    0.1
}
fn default_expected() -> f64 {
    100.0
}
fn default_side() -> usize {
    16
}
fn default_m() -> f64 {
    1.0
}
fn default_replicates() -> usize {
    20
}
fn default_variance() -> f64 {
    1.0
}

/// Study geography and data-generating parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "default_side")]
    pub rows: usize,
    #[serde(default = "default_side")]
    pub cols: usize,
    /// Elevated blocks; the five desk blocks when absent on a 16×16 lattice.
    #[serde(default)]
    pub blocks: Option<Vec<Block>>,
    #[serde(default = "default_m")]
    pub m: f64,
    #[serde(default = "default_r")]
    pub r: f64,
    #[serde(default = "default_median")]
    pub median_correlation: f64,
    /// Marginal variance of the Matérn effect surface.
    #[serde(default = "default_variance")]
    pub variance: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_expected")]
    pub expected: f64,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            rows: 16,
            cols: 16,
            blocks: None,
            m: 1.0,
            r: 0.95,
            median_correlation: 0.5,
            variance: 1.0,
            beta: 0.1,
            expected: 100.0,
            replicates: 20,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 || self.rows * self.cols < 3 {
            return Err(Error::InvalidArgument("lattice needs at least 3 areas".into()));
        }
        if !(self.r > 0.0 && self.r <= 1.0) {
            return Err(Error::InvalidArgument(format!("r must lie in (0, 1], got {}", self.r)));
        }
        if !(self.variance > 0.0 && self.variance.is_finite()) {
            return Err(Error::InvalidArgument(format!("variance must be positive, got {}", self.variance)));
        }
        if !(self.expected > 0.0) {
            return Err(Error::InvalidArgument("expected counts must be positive".into()));
        }
        if self.replicates == 0 {
            return Err(Error::InvalidArgument("need at least one replicate".into()));
        }
        if !self.beta.is_finite() || self.beta == 0.0 {
            return Err(Error::InvalidArgument("covariate effect must be finite and nonzero".into()));
        }
        Ok(())
    }

    pub fn template(&self) -> Result<SimTemplate> {
        match &self.blocks {
            Some(b) => SimTemplate::blocks(self.rows, self.cols, b, self.m),
            None if self.rows == 16 && self.cols == 16 => SimTemplate::blocks(16, 16, &DESK_BLOCKS, self.m),
            None => Err(Error::InvalidArgument("blocks are required off the 16x16 lattice".into())),
        }
    }
}

/// Everything shared by the replicates of one study: geography, template and
/// the factorised effect law.
#[derive(Debug, Clone)]
pub struct SimSetup {
    pub config: SimConfig,
    pub graph: ArealGraph,
    pub template: SimTemplate,
    pub range: f64,
    pub boundaries: Vec<bool>,
    law: EffectLaw,
}

impl SimSetup {
    pub fn new(config: SimConfig) -> Result<Self> {
        config.validate()?;
        let graph = ArealGraph::lattice(config.rows, config.cols)?;
        let template = config.template()?;
        let dist = graph.pairwise_distances()?;
        let flat: Vec<f64> = (0..graph.n())
            .flat_map(|a| dist[a][a + 1..].to_vec())
            .collect();
        let range = calibrate_range(&flat, config.median_correlation)?;
        let (mean, cov) = build_covariance(&graph, &template, range, config.variance)?;
        let law = EffectLaw::new(mean, cov)?;
        let boundaries = template.boundaries(&graph);
        Ok(SimSetup {
            config,
            graph,
            template,
            range,
            boundaries,
            law,
        })
    }

    pub fn law(&self) -> &EffectLaw {
        &self.law
    }

    /// Replicate `index`, drawn from its own stream.
    pub fn replicate(&self, index: usize) -> Result<ReplicateData> {
        let mut rng = stream_rng(self.config.seed, Stream::Replicate, index as u64);
        generate_replicate(self, &mut rng)
    }
}

/// One simulated data set with its generating truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateData {
    pub y: Vec<u64>,
    pub y_star: Vec<u64>,
    pub e: Vec<f64>,
    pub x: Vec<f64>,
    pub phi_true: Vec<f64>,
    pub phi_star_true: Vec<f64>,
    pub boundaries: Vec<bool>,
}

impl ReplicateData {
    /// `exp(β x_k + φ_k)`.
    pub fn true_risk(&self, beta: f64) -> Vec<f64> {
        self.x.iter().zip(&self.phi_true).map(|(x, p)| (beta * x + p).exp()).collect()
    }

    pub fn covariate_rows(&self) -> Vec<Vec<f64>> {
        self.x.iter().map(|&v| vec![v]).collect()
    }

    pub fn dataset(&self) -> Result<Dataset> {
        Dataset::new(self.y.clone(), self.e.clone(), Some(self.covariate_rows()))
    }

    pub fn dataset_star(&self) -> Result<Dataset> {
        Dataset::new(self.y_star.clone(), self.e.clone(), Some(self.covariate_rows()))
    }
}

fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> Result<u64> {
    let dist = Poisson::new(mean).map_err(|e| Error::Numerical(format!("poisson mean {mean}: {e}")))?;
    Ok(dist.sample(rng) as u64)
}

/// Draws `x ~ N(0, 1)` per area (shared by both periods), the effect pair and
/// both sets of Poisson counts.
pub fn generate_replicate<R: Rng + ?Sized>(setup: &SimSetup, rng: &mut R) -> Result<ReplicateData> {
    let cfg = &setup.config;
    let n = setup.graph.n();
    let x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let (phi, phi_star) = draw_effects_pair(&setup.law, cfg.r, rng)?;
    let mut y = Vec::with_capacity(n);
    let mut y_star = Vec::with_capacity(n);
    for k in 0..n {
        y.push(poisson(cfg.expected * (cfg.beta * x[k] + phi[k]).exp(), rng)?);
    }
    for k in 0..n {
        y_star.push(poisson(cfg.expected * (cfg.beta * x[k] + phi_star[k]).exp(), rng)?);
    }
    Ok(ReplicateData {
        y,
        y_star,
        e: vec![cfg.expected; n],
        x,
        phi_true: phi,
        phi_star_true: phi_star,
        boundaries: setup.boundaries.clone(),
    })
}

/// Sampler settings used for every model fit in a study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyMcmc {
    pub burn_in: usize,
    pub keep: usize,
    pub thin: usize,
}

impl StudyMcmc {
    fn iterations(&self) -> Iterations {
        Iterations::new(self.burn_in, self.keep, self.thin)
    }
}

/// The four models compared in the study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudyModel {
    Leroux,
    Geary,
    Moran,
    PriorA,
}

impl StudyModel {
    pub const ALL: [StudyModel; 4] = [StudyModel::Leroux, StudyModel::Geary, StudyModel::Moran, StudyModel::PriorA];

    pub fn label(self) -> &'static str {
        match self {
            StudyModel::Leroux => "Leroux",
            StudyModel::Geary => "Geary",
            StudyModel::Moran => "Moran",
            StudyModel::PriorA => "Prior A",
        }
    }
}

/// Sensitivity and specificity at each threshold; `None` where undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateTriple {
    pub sensitivity: [Option<f64>; 3],
    pub specificity: [Option<f64>; 3],
}

impl RateTriple {
    fn score(p_w0: &[f64], truth: &[bool]) -> Result<Self> {
        let mut sensitivity = [None; 3];
        let mut specificity = [None; 3];
        for (i, &c) in THRESHOLDS.iter().enumerate() {
            sensitivity[i] = undefined_as_none(diagnostics::sensitivity(p_w0, truth, c))?;
            specificity[i] = undefined_as_none(diagnostics::specificity(p_w0, truth, c))?;
        }
        Ok(RateTriple { sensitivity, specificity })
    }
}

fn undefined_as_none(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedRate(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelOutcome {
    pub model: StudyModel,
    pub rates: RateTriple,
    /// Posterior mean of the covariate effect.
    pub beta: f64,
    /// Posterior mean fitted risk per area.
    pub risk: Vec<f64>,
    pub dic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub index: usize,
    pub elicit_geary: RateTriple,
    pub elicit_moran: RateTriple,
    pub models: Vec<ModelOutcome>,
    pub true_risk: Vec<f64>,
}

impl ReplicateOutcome {
    pub fn model(&self, m: StudyModel) -> &ModelOutcome {
        self.models.iter().find(|o| o.model == m).expect("every model is fitted")
    }
}

/// Elicits both informative priors from the second-period counts after
/// removing a Poisson GLM fit of the covariate.
pub fn elicit_priors(data: &ReplicateData, g: &ArealGraph) -> Result<(EdgePriorSet, EdgePriorSet)> {
    let rows = data.covariate_rows();
    let fit = PoissonGlm::fit(&data.y_star, &data.e, &rows)?;
    let design = PoissonGlm::design_rows(data.y_star.len(), &rows);
    let zero_correct = data.y_star.contains(&0);
    let surface = elicit::log_residual_surface(
        &data.y_star,
        &data.e,
        Some(Adjustment {
            rows: &design,
            beta_hat: &fit.beta,
        }),
        zero_correct,
    )?;
    Ok((elicit::geary_prior(&surface, g)?, elicit::moran_prior(&surface, g)?))
}

fn fit_model(
    setup: &SimSetup,
    mcmc: StudyMcmc,
    d: &Dataset,
    smoothing: Smoothing,
    seed: u64,
) -> Result<SampleStore> {
    let cfg = ModelConfig::new(Mode::Covariate, smoothing, mcmc.iterations(), seed);
    run_chain(&cfg, d, &setup.graph, <ChainRng as rand::SeedableRng>::seed_from_u64(seed), 0, seed)
}

/// Simulates replicate `index`, elicits priors, fits all four models and
/// scores them.
pub fn run_replicate(setup: &SimSetup, mcmc: StudyMcmc, index: usize) -> Result<ReplicateOutcome> {
    let g = &setup.graph;
    let data = setup.replicate(index)?;
    let truth = &data.boundaries;
    let (geary, moran) = elicit_priors(&data, g)?;
    let prior_w0 = |s: &EdgePriorSet| -> Vec<f64> { s.probabilities().iter().map(|p| 1.0 - p).collect() };
    let elicit_geary = RateTriple::score(&prior_w0(&geary), truth)?;
    let elicit_moran = RateTriple::score(&prior_w0(&moran), truth)?;

    let d = data.dataset()?;
    let mut models = Vec::with_capacity(4);
    for (slot, model) in StudyModel::ALL.into_iter().enumerate() {
        let smoothing = match model {
            StudyModel::Leroux => Smoothing::Global,
            StudyModel::Geary => Smoothing::Local(PriorFamily::InformativeGeary(geary.clone())),
            StudyModel::Moran => Smoothing::Local(PriorFamily::InformativeMoran(moran.clone())),
            StudyModel::PriorA => Smoothing::Local(PriorFamily::default()),
        };
        let seed = derive_seed(setup.config.seed, Stream::StudyFit, (index * StudyModel::ALL.len() + slot) as u64);
        let store = fit_model(setup, mcmc, &d, smoothing, seed)?;
        let stores = std::slice::from_ref(&store);
        let report = diagnostics::boundary_probabilities(stores, g)?;
        let dic = diagnostics::dic(stores, &d)?;
        log::debug!(
            "replicate {index} {}: beta {:.4}, DIC {:.1}",
            model.label(),
            store.mean_beta()[1],
            dic.dic
        );
        models.push(ModelOutcome {
            model,
            rates: RateTriple::score(&report.p_w0, truth)?,
            beta: store.mean_beta()[1],
            risk: store.mean_risk(),
            dic: dic.dic,
        });
    }
    Ok(ReplicateOutcome {
        index,
        elicit_geary,
        elicit_moran,
        models,
        true_risk: data.true_risk(setup.config.beta),
    })
}

/// Averages of one rate over the replicates where it is defined.
fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub source: String,
    pub sensitivity: [Option<f64>; 3],
    pub specificity: [Option<f64>; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub model: StudyModel,
    pub beta_bias: f64,
    pub beta_rmse: f64,
    pub risk_bias: f64,
    pub risk_rmse: f64,
    pub mean_dic: f64,
}

/// Aggregated study output: boundary identification (elicited priors and
/// posteriors) and estimation accuracy per model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub config: SimConfig,
    pub mcmc: StudyMcmc,
    pub range: f64,
    pub boundary_count: usize,
    pub border_count: usize,
    pub elicitation: Vec<RateRow>,
    pub posterior: Vec<RateRow>,
    pub accuracy: Vec<AccuracyRow>,
    pub replicates: Vec<ReplicateOutcome>,
}

impl StudyReport {
    /// Aggregates outcomes in replicate-index order, whatever order they
    /// arrive in.
    pub fn from_outcomes(setup: &SimSetup, mcmc: StudyMcmc, mut outcomes: Vec<ReplicateOutcome>) -> Result<Self> {
        if outcomes.is_empty() {
            return Err(Error::InvalidArgument("no replicate outcomes".into()));
        }
        outcomes.sort_by_key(|o| o.index);
        let rate_row = |source: &str, pick: &dyn Fn(&ReplicateOutcome) -> &RateTriple| RateRow {
            source: source.to_string(),
            sensitivity: std::array::from_fn(|i| mean_defined(outcomes.iter().map(|o| pick(o).sensitivity[i]))),
            specificity: std::array::from_fn(|i| mean_defined(outcomes.iter().map(|o| pick(o).specificity[i]))),
        };
        let elicitation = vec![
            rate_row("Geary", &|o| &o.elicit_geary),
            rate_row("Moran", &|o| &o.elicit_moran),
        ];
        let posterior = StudyModel::ALL
            .iter()
            .map(|&m| rate_row(m.label(), &|o| &o.model(m).rates))
            .collect();
        let beta_true = setup.config.beta;
        let mut accuracy = Vec::new();
        for m in StudyModel::ALL {
            let est: Vec<f64> = outcomes.iter().map(|o| o.model(m).beta).collect();
            let (beta_bias, beta_rmse) = diagnostics::bias_rmse_percent(&est, &vec![beta_true; est.len()])?;
            let risk: Vec<Vec<f64>> = outcomes.iter().map(|o| o.model(m).risk.clone()).collect();
            let truth: Vec<Vec<f64>> = outcomes.iter().map(|o| o.true_risk.clone()).collect();
            let (risk_bias, risk_rmse) = diagnostics::bias_rmse_percent_areas(&risk, &truth)?;
            let mean_dic = outcomes.iter().map(|o| o.model(m).dic).sum::<f64>() / outcomes.len() as f64;
            accuracy.push(AccuracyRow {
                model: m,
                beta_bias,
                beta_rmse,
                risk_bias,
                risk_rmse,
                mean_dic,
            });
        }
        Ok(StudyReport {
            config: setup.config.clone(),
            mcmc,
            range: setup.range,
            boundary_count: setup.boundaries.iter().filter(|&&b| b).count(),
            border_count: setup.graph.border_count(),
            elicitation,
            posterior,
            accuracy,
            replicates: outcomes,
        })
    }

    pub fn rates(&self, posterior: bool, source: &str) -> Option<&RateRow> {
        let rows = if posterior { &self.posterior } else { &self.elicitation };
        rows.iter().find(|r| r.source == source)
    }

    pub fn accuracy(&self, m: StudyModel) -> &AccuracyRow {
        self.accuracy.iter().find(|a| a.model == m).expect("every model is scored")
    }

    /// Aligned text tables.
    pub fn to_text(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.3}"));
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{}x{} lattice, M = {}, {} replicates, {} of {} borders are boundaries, range {:.4}",
            self.config.rows,
            self.config.cols,
            self.config.m,
            self.replicates.len(),
            self.boundary_count,
            self.border_count,
            self.range
        );
        let _ = writeln!(
            out,
            "MCMC: burn-in {}, keep {}, thin {}\n",
            self.mcmc.burn_in, self.mcmc.keep, self.mcmc.thin
        );
        let _ = writeln!(out, "Boundary identification (sensitivity / specificity)");
        let _ = write!(out, "{:<6}", "c");
        for r in &self.elicitation {
            let _ = write!(out, " {:>17}", format!("prior {}", r.source));
        }
        for r in &self.posterior {
            let _ = write!(out, " {:>17}", r.source);
        }
        out.push('\n');
        for (i, c) in THRESHOLDS.iter().enumerate() {
            let _ = write!(out, "{c:<6}");
            for r in self.elicitation.iter().chain(&self.posterior) {
                let cell = format!("{} / {}", fmt(r.sensitivity[i]), fmt(r.specificity[i]));
                let _ = write!(out, " {cell:>17}");
            }
            out.push('\n');
        }
        let _ = writeln!(out, "\nEstimation accuracy (% of true values)");
        let _ = writeln!(
            out,
            "{:<8} {:>10} {:>10} {:>10} {:>10} {:>10}",
            "model", "bias b", "RMSE b", "bias R", "RMSE R", "mean DIC"
        );
        for a in &self.accuracy {
            let _ = writeln!(
                out,
                "{:<8} {:>10.3} {:>10.3} {:>10.3} {:>10.3} {:>10.1}",
                a.model.label(),
                a.beta_bias,
                a.beta_rmse,
                a.risk_bias,
                a.risk_rmse,
                a.mean_dic
            );
        }
        out
    }

    /// Long-format CSV: `table,source,quantity,c,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("table,source,quantity,c,value\n");
        let cell = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
        for (table, rows) in [("elicitation", &self.elicitation), ("posterior", &self.posterior)] {
            for r in rows {
                for (i, c) in THRESHOLDS.iter().enumerate() {
                    let _ = writeln!(out, "{table},{},sensitivity,{c},{}", r.source, cell(r.sensitivity[i]));
                    let _ = writeln!(out, "{table},{},specificity,{c},{}", r.source, cell(r.specificity[i]));
                }
            }
        }
        for a in &self.accuracy {
            let src = a.model.label();
            for (q, v) in [
                ("bias_beta", a.beta_bias),
                ("rmse_beta", a.beta_rmse),
                ("bias_risk", a.risk_bias),
                ("rmse_risk", a.risk_rmse),
                ("mean_dic", a.mean_dic),
            ] {
                let _ = writeln!(out, "accuracy,{src},{q},,{v}");
            }
        }
        out
    }
}

/// Runs every replicate (concurrently) and aggregates.
pub fn run_study(config: SimConfig, mcmc: StudyMcmc) -> Result<StudyReport> {
    let setup = SimSetup::new(config)?;
    if mcmc.keep < mcmc.thin || mcmc.thin == 0 {
        return Err(Error::InvalidArgument("keep must be at least thin, and thin at least 1".into()));
    }
    let outcomes = (0..setup.config.replicates)
        .into_par_iter()
        .map(|i| {
            let out = run_replicate(&setup, mcmc, i);
            log::info!("replicate {i} done");
            out
        })
        .collect::<Result<Vec<_>>>()?;
    StudyReport::from_outcomes(&setup, mcmc, outcomes)
}
