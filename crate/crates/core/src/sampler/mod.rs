//! Metropolis-within-Gibbs sampler for the Poisson log-linear model with a
//! localised Leroux CAR random effect.
//!
//! One iteration runs, in order: a random-walk Metropolis step per regression
//! coefficient, a single-site Metropolis sweep over `φ`, a Gibbs draw of `τ²`,
//! a logit-scale Metropolis step for `ρ` (covariate mode only), a systematic
//! Gibbs sweep over the border weights `w`, and the conjugate draw of the
//! hyper-probabilities under Priors B and C.

mod chain;
mod store;
mod tgamma;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::elicit::PriorFamily;
use crate::error::{Error, Result};
use crate::graph::ArealGraph;
use crate::rng::{derive_seed, ChainRng, Stream};

pub use chain::{Alpha, Chain, ChainState};
pub use store::{AcceptanceSummary, SampleStore};

/// Default number of chains run by [`run_chains`] callers.
pub const DEFAULT_CHAINS: usize = 3;

/// Acceptance rate the burn-in adaptation steers scalar updates towards.
pub const TARGET_ACCEPTANCE: f64 = 0.44;

/// Observed counts, expected counts and optional covariates (no intercept
/// column; the intercept is always part of the model).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    y: Vec<u64>,
    e: Vec<f64>,
    x: Vec<Vec<f64>>,
    covariates: usize,
}

impl Dataset {
    pub fn new(y: Vec<u64>, e: Vec<f64>, x: Option<Vec<Vec<f64>>>) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::InvalidArgument("dataset has no areas".into()));
        }
        if e.len() != n {
            return Err(Error::LengthMismatch {
                what: "expected counts",
                got: e.len(),
                expected: n,
            });
        }
        if let Some(k) = e.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "expected count at area {k} must be positive, got {}",
                e[k]
            )));
        }
        let x = x.unwrap_or_default();
        let covariates = x.first().map_or(0, Vec::len);
        if !x.is_empty() {
            if x.len() != n {
                return Err(Error::LengthMismatch {
                    what: "covariate rows",
                    got: x.len(),
                    expected: n,
                });
            }
            if let Some(row) = x.iter().find(|r| r.len() != covariates) {
                return Err(Error::LengthMismatch {
                    what: "covariate row",
                    got: row.len(),
                    expected: covariates,
                });
            }
            if x.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument("non-finite covariate value".into()));
            }
        }
        let x = if covariates == 0 { Vec::new() } else { x };
        Ok(Dataset { y, e, x, covariates })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn y(&self) -> &[u64] {
        &self.y
    }

    pub fn e(&self) -> &[f64] {
        &self.e
    }

    /// Covariate rows without the intercept (empty when there are none).
    pub fn x(&self) -> &[Vec<f64>] {
        &self.x
    }

    /// Number of covariates `p` (regression coefficients are `p + 1`).
    pub fn covariates(&self) -> usize {
        self.covariates
    }

    /// `x_kᵀβ` including the intercept `β₀`.
    pub fn fixed_effect(&self, k: usize, beta: &[f64]) -> f64 {
        let mut v = beta[0];
        if let Some(row) = self.x.get(k) {
            for (xv, b) in row.iter().zip(&beta[1..]) {
                v += xv * b;
            }
        }
        v
    }

    /// Value of design column `c` (0 = intercept) for area `k`.
    #[inline]
    pub fn design(&self, k: usize, c: usize) -> f64 {
        if c == 0 {
            1.0
        } else {
            self.x[k][c - 1]
        }
    }
}

/// `Σ_k [y_k ln(e_k R_k) − e_k R_k − ln y_k!]` with `ln R_k = x_kᵀβ + φ_k`.
pub fn poisson_log_lik(d: &Dataset, beta: &[f64], phi: &[f64]) -> Result<f64> {
    if beta.len() != d.covariates() + 1 {
        return Err(Error::LengthMismatch {
            what: "beta",
            got: beta.len(),
            expected: d.covariates() + 1,
        });
    }
    if phi.len() != d.n() {
        return Err(Error::LengthMismatch {
            what: "phi",
            got: phi.len(),
            expected: d.n(),
        });
    }
    let mut total = 0.0;
    for k in 0..d.n() {
        let eta = d.fixed_effect(k, beta) + phi[k];
        if !eta.is_finite() {
            return Err(Error::Numerical(format!("non-finite linear predictor at area {k}")));
        }
        total += poisson_term(d.y[k], d.e[k], eta) - ln_factorial(d.y[k]);
    }
    Ok(total)
}

/// `y (ln e + η) − e exp(η)`: the Poisson log-pmf without `ln y!`.
#[inline]
pub(crate) fn poisson_term(y: u64, e: f64, eta: f64) -> f64 {
    let yf = y as f64;
    let log_mean = e.ln() + eta;
    let lin = if y == 0 { 0.0 } else { yf * log_mean };
    lin - log_mean.exp()
}

pub(crate) fn ln_factorial(y: u64) -> f64 {
    statrs::function::factorial::ln_factorial(y)
}

/// Poisson deviance `−2 Σ ln p(y_k | e_k R_k)` for given risks (the `ln y!`
/// term included).
pub fn deviance_from_risk(d: &Dataset, risk: &[f64]) -> f64 {
    -2.0 * (0..d.n())
        .map(|k| poisson_term(d.y[k], d.e[k], risk[k].ln()) - ln_factorial(d.y[k]))
        .sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Covariates in the linear predictor, ρ sampled.
    Covariate,
    /// Intercept only, ρ fixed at 0.99.
    Boundary,
}

/// How the neighbourhood weights are treated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Smoothing {
    /// Global Leroux model: every border weight frozen at 1.
    Global,
    /// Localised model: border weights sampled under the given prior.
    Local(PriorFamily),
}

impl Smoothing {
    pub fn label(&self) -> &'static str {
        match self {
            Smoothing::Global => "leroux",
            Smoothing::Local(p) => p.label(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Iterations {
    pub burn_in: usize,
    pub keep: usize,
    pub thin: usize,
}

impl Iterations {
    pub fn new(burn_in: usize, keep: usize, thin: usize) -> Self {
        Iterations { burn_in, keep, thin }
    }

    /// Number of stored draws per chain.
    pub fn stored(&self) -> usize {
        self.keep / self.thin
    }
}

/// Switches for the individual update blocks and the likelihood, used to
/// check that the sampler reproduces its prior when the data are removed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Controls {
    pub likelihood: bool,
    pub beta: bool,
    pub phi: bool,
    pub tau2: bool,
    pub rho: bool,
    pub w: bool,
    pub alpha: bool,
}

impl Default for Controls {
    fn default() -> Self {
        Controls {
            likelihood: true,
            beta: true,
            phi: true,
            tau2: true,
            rho: true,
            w: true,
            alpha: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub mode: Mode,
    pub smoothing: Smoothing,
    pub beta_prior_variance: f64,
    pub tau2_upper: f64,
    pub iterations: Iterations,
    pub seed: u64,
    #[serde(default)]
    pub controls: Controls,
}

impl ModelConfig {
    pub fn new(mode: Mode, smoothing: Smoothing, iterations: Iterations, seed: u64) -> Self {
        ModelConfig {
            mode,
            smoothing,
            beta_prior_variance: 1000.0,
            tau2_upper: 1000.0,
            iterations,
            seed,
            controls: Controls::default(),
        }
    }

    pub fn validate(&self, d: &Dataset, g: &ArealGraph) -> Result<()> {
        if d.n() != g.n() {
            return Err(Error::LengthMismatch {
                what: "dataset",
                got: d.n(),
                expected: g.n(),
            });
        }
        if g.n() < 3 {
            return Err(Error::InvalidArgument(format!(
                "the tau2 full conditional needs at least 3 areas, got {}",
                g.n()
            )));
        }
        if self.mode == Mode::Boundary && d.covariates() > 0 {
            return Err(Error::InvalidArgument(
                "boundary mode takes no covariates beyond the intercept".into(),
            ));
        }
        if !(self.beta_prior_variance > 0.0) || !(self.tau2_upper > 0.0) {
            return Err(Error::InvalidArgument("prior variance and tau2 bound must be positive".into()));
        }
        if self.iterations.thin == 0 {
            return Err(Error::InvalidArgument("thin must be at least 1".into()));
        }
        if let Smoothing::Local(prior) = &self.smoothing {
            if let Some(set) = prior.edge_priors() {
                if !set.matches(g) {
                    return Err(Error::InvalidArgument(
                        "edge prior set does not cover the graph's borders".into(),
                    ));
                }
            }
            if let PriorFamily::FlatA { p0 } = prior {
                if !(*p0 > 0.0 && *p0 < 1.0) {
                    return Err(Error::InvalidArgument(format!("flat prior p0 must lie in (0, 1), got {p0}")));
                }
            }
        }
        Ok(())
    }
}

/// Runs one chain to completion.
pub fn run_chain(
    cfg: &ModelConfig,
    d: &Dataset,
    g: &ArealGraph,
    rng: ChainRng,
    chain_id: usize,
    seed: u64,
) -> Result<SampleStore> {
    let mut chain = Chain::new(cfg, d, g, rng)?;
    chain.run(chain_id, seed)
}

fn chain_seed(cfg: &ModelConfig, index: usize) -> u64 {
    derive_seed(cfg.seed, Stream::Chain, index as u64)
}

fn run_indexed(cfg: &ModelConfig, d: &Dataset, g: &ArealGraph, index: usize) -> Result<SampleStore> {
    use rand::SeedableRng;
    let seed = chain_seed(cfg, index);
    run_chain(cfg, d, g, ChainRng::seed_from_u64(seed), index, seed)
}

/// Runs `n_chains` independent chains concurrently. Chain `i` draws from a
/// stream seeded by `(cfg.seed, i)`; output is ordered by chain index.
pub fn run_chains(cfg: &ModelConfig, d: &Dataset, g: &ArealGraph, n_chains: usize) -> Result<Vec<SampleStore>> {
    if n_chains == 0 {
        return Err(Error::InvalidArgument("need at least one chain".into()));
    }
    cfg.validate(d, g)?;
    (0..n_chains)
        .into_par_iter()
        .map(|i| run_indexed(cfg, d, g, i))
        .collect()
}

/// Same as [`run_chains`] on the calling thread.
pub fn run_chains_serial(
    cfg: &ModelConfig,
    d: &Dataset,
    g: &ArealGraph,
    n_chains: usize,
) -> Result<Vec<SampleStore>> {
    if n_chains == 0 {
        return Err(Error::InvalidArgument("need at least one chain".into()));
    }
    cfg.validate(d, g)?;
    (0..n_chains).map(|i| run_indexed(cfg, d, g, i)).collect()
}
