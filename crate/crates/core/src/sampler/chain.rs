use std::sync::Arc;

use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::store::{AcceptanceSummary, SampleStore};
use super::tgamma::truncated_unit_gamma;
use super::{deviance_from_risk, ln_factorial, poisson_term, Controls, Dataset, Mode, ModelConfig, Smoothing, TARGET_ACCEPTANCE};
use crate::elicit::PriorFamily;
use crate::error::{Error, Result};
use crate::glm::PoissonGlm;
use crate::gmrf::{self, EdgeState, LerouxGmrf, BOUNDARY_RHO, RHO_MAX};
use crate::graph::ArealGraph;
use crate::rng::ChainRng;

/// Iterations between scale adjustments during burn-in.
const BATCH: usize = 50;

/// Hyper-probabilities of Priors B and C.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Alpha {
    None,
    Global(f64),
    PerBorder(Vec<f64>),
}

/// Current values of every sampled quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub beta: Vec<f64>,
    pub phi: Vec<f64>,
    pub tau2: f64,
    pub rho: f64,
    pub w: EdgeState,
    pub alpha: Alpha,
}

impl ChainState {
    /// Warm start: GLM coefficients, half the log-SIR residual for `φ`,
    /// its variance for `τ²`, and every border switched on.
    pub fn initial(cfg: &ModelConfig, d: &Dataset, g: &ArealGraph) -> Result<Self> {
        let beta = match PoissonGlm::fit(d.y(), d.e(), d.x()) {
            Ok(fit) => fit.beta,
            Err(err) => {
                log::warn!("GLM initialisation failed ({err}); starting from the crude rate");
                let ty: f64 = d.y().iter().map(|&v| v as f64).sum();
                let te: f64 = d.e().iter().sum();
                let mut b = vec![0.0; d.covariates() + 1];
                b[0] = ((ty + 0.5) / te).ln();
                b
            }
        };
        let phi: Vec<f64> = (0..d.n())
            .map(|k| 0.5 * (((d.y()[k] as f64 + 0.5) / d.e()[k]).ln() - d.fixed_effect(k, &beta)))
            .collect();
        let n = phi.len() as f64;
        let mean = phi.iter().sum::<f64>() / n;
        let var = phi.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0);
        let tau2 = if var.is_finite() && var > 1e-4 { var } else { 1e-4 }.min(0.5 * cfg.tau2_upper);
        let rho = match cfg.mode {
            Mode::Covariate => 0.5,
            Mode::Boundary => BOUNDARY_RHO,
        };
        let alpha = match &cfg.smoothing {
            Smoothing::Local(PriorFamily::GlobalAlphaB) => Alpha::Global(0.5),
            Smoothing::Local(PriorFamily::EdgeAlphaC) => Alpha::PerBorder(vec![0.5; g.border_count()]),
            _ => Alpha::None,
        };
        Ok(ChainState {
            beta,
            phi,
            tau2,
            rho,
            w: EdgeState::all(g, true),
            alpha,
        })
    }
}

/// Proposal scales with acceptance counters for the current batch and for the
/// whole kept run.
#[derive(Debug, Clone)]
struct Tuning {
    beta: Vec<Scale>,
    phi: Vec<Scale>,
    rho: Scale,
    batches: usize,
}

#[derive(Debug, Clone, Copy)]
struct Scale {
    log_scale: f64,
    batch_acc: u32,
    batch_prop: u32,
    acc: u64,
    prop: u64,
}

impl Scale {
    fn new(scale: f64) -> Self {
        Scale {
            log_scale: scale.ln(),
            batch_acc: 0,
            batch_prop: 0,
            acc: 0,
            prop: 0,
        }
    }

    fn scale(&self) -> f64 {
        self.log_scale.exp()
    }

    fn record(&mut self, accepted: bool) {
        self.batch_prop += 1;
        self.prop += 1;
        if accepted {
            self.batch_acc += 1;
            self.acc += 1;
        }
    }

    fn adapt(&mut self, batch: usize) {
        if self.batch_prop > 0 {
            let rate = f64::from(self.batch_acc) / f64::from(self.batch_prop);
            let step = (1.0 / (batch as f64).sqrt()).min(0.5);
            self.log_scale += if rate > TARGET_ACCEPTANCE { step } else { -step };
            self.log_scale = self.log_scale.clamp(-12.0, 8.0);
        }
        self.batch_acc = 0;
        self.batch_prop = 0;
    }

    fn reset_totals(&mut self) {
        self.acc = 0;
        self.prop = 0;
    }

    fn rate(&self) -> f64 {
        if self.prop == 0 {
            f64::NAN
        } else {
            self.acc as f64 / self.prop as f64
        }
    }
}

/// One Markov chain: exclusive mutable state plus its own random stream.
pub struct Chain<'a> {
    cfg: &'a ModelConfig,
    data: &'a Dataset,
    gmrf: LerouxGmrf<'a>,
    beta: Vec<f64>,
    phi: Vec<f64>,
    alpha: Alpha,
    /// `x_kᵀβ` for every area.
    fixed: Vec<f64>,
    /// Prior log-odds for the fixed-probability families.
    prior_logit: Option<Vec<f64>>,
    tuning: Tuning,
    rng: ChainRng,
    ln_y_fact: f64,
}

impl<'a> Chain<'a> {
    pub fn new(cfg: &'a ModelConfig, d: &'a Dataset, g: &'a ArealGraph, rng: ChainRng) -> Result<Self> {
        cfg.validate(d, g)?;
        let init = ChainState::initial(cfg, d, g)?;
        Self::with_state(cfg, d, g, rng, init)
    }

    /// Starts from a caller-supplied state instead of the warm start.
    pub fn with_state(
        cfg: &'a ModelConfig,
        d: &'a Dataset,
        g: &'a ArealGraph,
        rng: ChainRng,
        init: ChainState,
    ) -> Result<Self> {
        cfg.validate(d, g)?;
        if init.beta.len() != d.covariates() + 1 {
            return Err(Error::LengthMismatch {
                what: "beta",
                got: init.beta.len(),
                expected: d.covariates() + 1,
            });
        }
        if init.phi.len() != g.n() {
            return Err(Error::LengthMismatch {
                what: "phi",
                got: init.phi.len(),
                expected: g.n(),
            });
        }
        if !(init.tau2 > 0.0 && init.tau2 <= cfg.tau2_upper) {
            return Err(Error::InvalidArgument(format!(
                "initial tau2 {} outside (0, {}]",
                init.tau2, cfg.tau2_upper
            )));
        }
        if cfg.mode == Mode::Boundary && init.rho != BOUNDARY_RHO {
            return Err(Error::InvalidArgument(format!("boundary mode fixes rho at {BOUNDARY_RHO}")));
        }
        let expects_alpha = match &cfg.smoothing {
            Smoothing::Local(PriorFamily::GlobalAlphaB) => matches!(init.alpha, Alpha::Global(_)),
            Smoothing::Local(PriorFamily::EdgeAlphaC) => {
                matches!(&init.alpha, Alpha::PerBorder(v) if v.len() == g.border_count())
            }
            _ => init.alpha == Alpha::None,
        };
        if !expects_alpha {
            return Err(Error::InvalidArgument("alpha does not match the prior family".into()));
        }
        let mut w = init.w;
        if cfg.smoothing == Smoothing::Global {
            w = EdgeState::all(g, true);
        }
        let pattern = Arc::new(gmrf::structure(g));
        let model = LerouxGmrf::new(g, pattern, w, init.rho, init.tau2)?;
        let prior_logit = match &cfg.smoothing {
            Smoothing::Local(PriorFamily::InformativeGeary(s) | PriorFamily::InformativeMoran(s)) => {
                Some(s.probabilities().iter().map(|&p| logit(p)).collect())
            }
            Smoothing::Local(PriorFamily::FlatA { p0 }) => Some(vec![logit(*p0); g.border_count()]),
            _ => None,
        };
        let fixed = (0..d.n()).map(|k| d.fixed_effect(k, &init.beta)).collect();
        let tuning = Tuning {
            beta: vec![Scale::new(0.05); init.beta.len()],
            phi: vec![Scale::new(0.2); g.n()],
            rho: Scale::new(0.5),
            batches: 0,
        };
        let chain = Chain {
            cfg,
            data: d,
            gmrf: model,
            beta: init.beta,
            phi: init.phi,
            alpha: init.alpha,
            fixed,
            prior_logit,
            tuning,
            rng,
            ln_y_fact: d.y().iter().map(|&y| ln_factorial(y)).sum(),
        };
        let lp = chain.log_likelihood() + chain.gmrf.log_density(&chain.phi)?;
        if !lp.is_finite() {
            return Err(Error::Numerical("non-finite posterior at the initial state".into()));
        }
        Ok(chain)
    }

    pub fn state(&self) -> ChainState {
        ChainState {
            beta: self.beta.clone(),
            phi: self.phi.clone(),
            tau2: self.gmrf.tau2(),
            rho: self.gmrf.rho(),
            w: self.gmrf.w().clone(),
            alpha: self.alpha.clone(),
        }
    }

    fn controls(&self) -> Controls {
        self.cfg.controls
    }

    fn graph(&self) -> &'a ArealGraph {
        self.gmrf.graph()
    }

    /// Poisson log-likelihood at the current state, zero when disabled.
    fn log_likelihood(&self) -> f64 {
        if !self.controls().likelihood {
            return 0.0;
        }
        let d = self.data;
        (0..d.n())
            .map(|k| poisson_term(d.y()[k], d.e()[k], self.fixed[k] + self.phi[k]))
            .sum::<f64>()
            - self.ln_y_fact
    }

    /// Poisson deviance at the current state (always with the likelihood),
    /// evaluated from the fitted risks so it agrees with [`deviance_from_risk`].
    pub fn deviance(&self) -> f64 {
        deviance_from_risk(self.data, &self.risk())
    }

    /// Fitted risks `exp(x_kᵀβ + φ_k)`.
    pub fn risk(&self) -> Vec<f64> {
        self.fixed.iter().zip(&self.phi).map(|(f, p)| (f + p).exp()).collect()
    }

    fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    fn accept(&mut self, log_ratio: f64) -> bool {
        if log_ratio.is_nan() {
            return false;
        }
        log_ratio >= 0.0 || self.rng.random::<f64>().ln() < log_ratio
    }

    /// Random-walk Metropolis step for each regression coefficient in turn.
    pub fn update_beta(&mut self) {
        let d = self.data;
        let lik = self.controls().likelihood;
        let var0 = self.cfg.beta_prior_variance;
        for c in 0..self.beta.len() {
            let s = self.tuning.beta[c].scale();
            let step = s * self.normal();
            if step == 0.0 {
                self.tuning.beta[c].record(false);
                continue;
            }
            let old = self.beta[c];
            let new = old + step;
            let mut delta = -(new * new - old * old) / (2.0 * var0);
            if lik {
                for k in 0..d.n() {
                    let xc = d.design(k, c);
                    if xc == 0.0 {
                        continue;
                    }
                    let eta = self.fixed[k] + self.phi[k];
                    delta += poisson_term(d.y()[k], d.e()[k], eta + xc * step)
                        - poisson_term(d.y()[k], d.e()[k], eta);
                }
            }
            let ok = delta.is_finite() && self.accept(delta);
            if ok {
                self.beta[c] = new;
                for k in 0..d.n() {
                    self.fixed[k] += d.design(k, c) * step;
                }
            }
            self.tuning.beta[c].record(ok);
        }
    }

    /// Single-site Metropolis sweep over `φ`; in boundary mode the sweep ends
    /// by moving the mean of `φ` into the intercept.
    pub fn update_phi(&mut self) {
        let d = self.data;
        let g = self.graph();
        let lik = self.controls().likelihood;
        let rho = self.gmrf.rho();
        let tau2 = self.gmrf.tau2();
        for k in 0..d.n() {
            let (mean, var) = gmrf::full_conditional(g, k, &self.phi, self.gmrf.w(), rho, tau2);
            let s = self.tuning.phi[k].scale();
            let old = self.phi[k];
            let new = old + s * self.normal();
            let mut delta = ((old - mean).powi(2) - (new - mean).powi(2)) / (2.0 * var);
            if lik {
                let f = self.fixed[k];
                delta += poisson_term(d.y()[k], d.e()[k], f + new) - poisson_term(d.y()[k], d.e()[k], f + old);
            }
            let ok = delta.is_finite() && self.accept(delta);
            if ok {
                self.phi[k] = new;
            }
            self.tuning.phi[k].record(ok);
        }
        if self.cfg.mode == Mode::Boundary {
            self.recentre();
        }
    }

    /// Shifts `φ` to mean zero and adds the shift to the intercept; `x_kᵀβ + φ_k`
    /// is unchanged.
    pub fn recentre(&mut self) {
        let shift = self.phi.iter().sum::<f64>() / self.phi.len() as f64;
        for v in &mut self.phi {
            *v -= shift;
        }
        self.beta[0] += shift;
        for f in &mut self.fixed {
            *f += shift;
        }
    }

    /// Exact Gibbs move along `(β₀ + c, φ − c·1)`, which leaves the linear
    /// predictor alone. Rows of `Q` sum to `1 − ρ`, so the conditional of `c`
    /// is Gaussian. Without it the intercept crawls when `ρ` is near one.
    pub fn update_level(&mut self) {
        let n = self.phi.len() as f64;
        let rho = self.gmrf.rho();
        let tau2 = self.gmrf.tau2();
        let var0 = self.cfg.beta_prior_variance;
        let sum: f64 = self.phi.iter().sum();
        let precision = (1.0 - rho) * n / tau2 + 1.0 / var0;
        let linear = (1.0 - rho) * sum / tau2 - self.beta[0] / var0;
        let shift = linear / precision + self.normal() / precision.sqrt();
        for v in &mut self.phi {
            *v -= shift;
        }
        self.beta[0] += shift;
        for f in &mut self.fixed {
            *f += shift;
        }
    }

    /// Gibbs draw of `τ²` from its inverse-gamma full conditional truncated
    /// to `(0, tau2_upper]`.
    pub fn update_tau2(&mut self) -> Result<()> {
        let n = self.phi.len() as f64;
        let scale = 0.5 * self.gmrf.quad_form(&self.phi);
        if !(scale > 0.0) {
            log::debug!("phi is identically zero; tau2 left unchanged");
            return Ok(());
        }
        let shape = 0.5 * n - 1.0;
        let u = loop {
            let u: f64 = self.rng.random();
            if u > 0.0 {
                break u;
            }
        };
        // 1/τ² = G / scale with G ~ Gamma(shape, 1) and 1/τ² ≥ 1/upper.
        let g = truncated_unit_gamma(shape, scale / self.cfg.tau2_upper, u)?;
        let tau2 = (scale / g).min(self.cfg.tau2_upper);
        self.gmrf.set_tau2(tau2)
    }

    /// Metropolis step on `logit ρ`; a no-op in boundary mode.
    pub fn update_rho(&mut self) -> Result<()> {
        if self.cfg.mode == Mode::Boundary {
            return Ok(());
        }
        let rho = self.gmrf.rho();
        let proposal = logistic(logit(rho) + self.tuning.rho.scale() * self.normal());
        if !(proposal > 0.0 && proposal <= RHO_MAX) {
            self.tuning.rho.record(false);
            return Ok(());
        }
        let tau2 = self.gmrf.tau2();
        let (diff_sq, sq) = self.quad_parts();
        let quad = |r: f64| r * diff_sq + (1.0 - r) * sq;
        let log_det_new = self.gmrf.log_det_at(proposal)?;
        let log_det_old = self.gmrf.log_det()?;
        let delta = 0.5 * (log_det_new - log_det_old) - (quad(proposal) - quad(rho)) / (2.0 * tau2)
            + (proposal * (1.0 - proposal)).ln()
            - (rho * (1.0 - rho)).ln();
        let ok = self.accept(delta);
        if ok {
            self.gmrf.set_rho(proposal)?;
        }
        self.tuning.rho.record(ok);
        Ok(())
    }

    /// `(Σ_active (φ_k − φ_j)², Σ φ_k²)`.
    fn quad_parts(&self) -> (f64, f64) {
        let w = self.gmrf.w();
        let diff = self
            .graph()
            .border_pairs()
            .iter()
            .enumerate()
            .filter(|(b, _)| w.get(*b))
            .map(|(_, id)| (self.phi[id.k] - self.phi[id.j]).powi(2))
            .sum();
        (diff, self.phi.iter().map(|v| v * v).sum())
    }

    fn prior_log_odds(&self, b: usize) -> f64 {
        if let Some(l) = &self.prior_logit {
            return l[b];
        }
        match &self.alpha {
            Alpha::Global(a) => logit(*a),
            Alpha::PerBorder(a) => logit(a[b]),
            Alpha::None => 0.0,
        }
    }

    /// `P(w_b = 1 | everything else)` at the current state.
    pub fn w_conditional(&mut self, b: usize) -> Result<f64> {
        let ratio = self.gmrf.toggle_log_ratio(b, &self.phi)?;
        Ok(logistic(ratio + self.prior_log_odds(b)))
    }

    /// Systematic Gibbs sweep over the border weights in border order.
    pub fn update_w(&mut self) -> Result<()> {
        if self.cfg.smoothing == Smoothing::Global {
            return Ok(());
        }
        // Fresh factor so rounding from earlier rank-1 changes cannot build up.
        self.gmrf.refactor()?;
        for b in 0..self.graph().border_count() {
            let p = self.w_conditional(b)?;
            let value = self.rng.random::<f64>() < p;
            self.gmrf.set_edge(b, value)?;
        }
        Ok(())
    }

    /// Conjugate Beta draws for the hyper-probabilities of Priors B and C.
    pub fn update_alpha(&mut self) -> Result<()> {
        let w = self.gmrf.w();
        match &mut self.alpha {
            Alpha::Global(a) => {
                let on = w.count_active() as f64;
                let off = w.len() as f64 - on;
                *a = beta_draw(&mut self.rng, 1.0 + on, 1.0 + off)?;
            }
            Alpha::PerBorder(a) => {
                for (b, ab) in a.iter_mut().enumerate() {
                    let on = f64::from(u8::from(w.get(b)));
                    *ab = beta_draw(&mut self.rng, 1.0 + on, 2.0 - on)?;
                }
            }
            Alpha::None => {
                return Err(Error::InvalidArgument("alpha update needs prior B or C".into()));
            }
        }
        Ok(())
    }

    /// One full scan in the fixed order β, φ, level shift, τ², ρ, w, α.
    pub fn step(&mut self) -> Result<()> {
        let c = self.controls();
        if c.beta {
            self.update_beta();
        }
        if c.phi {
            self.update_phi();
        }
        if c.beta && c.phi && self.cfg.mode == Mode::Covariate {
            self.update_level();
        }
        if c.tau2 {
            self.update_tau2()?;
        }
        if c.rho {
            self.update_rho()?;
        }
        if c.w {
            self.update_w()?;
        }
        if c.alpha && self.alpha != Alpha::None {
            self.update_alpha()?;
        }
        Ok(())
    }

    fn adapt(&mut self) {
        self.tuning.batches += 1;
        let batch = self.tuning.batches;
        for s in self.tuning.beta.iter_mut().chain(self.tuning.phi.iter_mut()) {
            s.adapt(batch);
        }
        self.tuning.rho.adapt(batch);
    }

    fn freeze(&mut self) {
        for s in self.tuning.beta.iter_mut().chain(self.tuning.phi.iter_mut()) {
            s.reset_totals();
        }
        self.tuning.rho.reset_totals();
    }

    fn acceptance(&self) -> AcceptanceSummary {
        let phi: Vec<f64> = self.tuning.phi.iter().map(Scale::rate).collect();
        let finite: Vec<f64> = phi.iter().copied().filter(|v| v.is_finite()).collect();
        AcceptanceSummary {
            beta: self.tuning.beta.iter().map(Scale::rate).collect(),
            phi_mean: if finite.is_empty() {
                f64::NAN
            } else {
                finite.iter().sum::<f64>() / finite.len() as f64
            },
            phi_min: finite.iter().copied().fold(f64::NAN, f64::min),
            rho: self.tuning.rho.rate(),
        }
    }

    /// Burn-in with batch adaptation, then the kept run with frozen scales.
    pub fn run(&mut self, chain_id: usize, seed: u64) -> Result<SampleStore> {
        let it = self.cfg.iterations;
        for i in 0..it.burn_in {
            self.step()?;
            if (i + 1) % BATCH == 0 {
                self.adapt();
            }
        }
        self.freeze();
        let mut store = SampleStore::with_capacity(chain_id, seed, self.graph().border_count(), it.stored());
        for i in 0..it.keep {
            self.step()?;
            if (i + 1) % it.thin == 0 {
                let risk = self.risk();
                let deviance = deviance_from_risk(self.data, &risk);
                store.push(&self.beta, self.gmrf.tau2(), self.gmrf.rho(), &self.phi, risk, self.gmrf.w(), deviance);
            }
        }
        store.acceptance = self.acceptance();
        Ok(store)
    }
}

fn beta_draw(rng: &mut ChainRng, a: f64, b: f64) -> Result<f64> {
    let dist = Beta::new(a, b).map_err(|e| Error::Numerical(format!("beta distribution: {e}")))?;
    Ok(dist.sample(rng))
}

#[inline]
fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[inline]
fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
#[path = "chain_tests.rs"]
mod tests;
