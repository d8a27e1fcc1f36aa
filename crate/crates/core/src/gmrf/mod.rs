//! Leroux conditional autoregressive prior with a random binary neighbourhood.
//!
//! Precision: `Q(W, ρ) = ρ (diag(w_k+) − W) + (1 − ρ) I`, with
//! `φ ~ N(0, τ² Q⁻¹)`. Toggling one border `b = (k, j)` changes `Q` by
//! `± ρ v vᵀ`, `v = e_k − e_j`, so the log-density ratio between the two
//! states needs only `vᵀ Q⁻¹ v` (determinant lemma) plus the quadratic term.

mod envelope;

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::graph::{ArealGraph, BorderId};

pub use envelope::{EnvelopeCholesky, EnvelopePattern};

/// Largest ρ accepted anywhere.
pub const RHO_MAX: f64 = 0.999_999;

/// ρ used by the boundary-detection mode.
pub const BOUNDARY_RHO: f64 = 0.99;

pub(crate) fn check_rho(rho: f64) -> Result<()> {
    if (0.0..=RHO_MAX).contains(&rho) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("rho must lie in [0, {RHO_MAX}], got {rho}")))
    }
}

fn check_tau2(tau2: f64) -> Result<()> {
    if tau2 > 0.0 && tau2.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("tau2 must be positive, got {tau2}")))
    }
}

/// Binary weight `w_b` for every border, in border order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EdgeState {
    w: Vec<bool>,
}

impl EdgeState {
    pub fn all(g: &ArealGraph, value: bool) -> Self {
        EdgeState {
            w: vec![value; g.border_count()],
        }
    }

    pub fn from_bits(g: &ArealGraph, w: Vec<bool>) -> Result<Self> {
        if w.len() != g.border_count() {
            return Err(Error::LengthMismatch {
                what: "edge state",
                got: w.len(),
                expected: g.border_count(),
            });
        }
        Ok(EdgeState { w })
    }

    pub fn get(&self, b: usize) -> bool {
        self.w[b]
    }

    pub fn set(&mut self, b: usize, value: bool) {
        self.w[b] = value;
    }

    pub fn bits(&self) -> &[bool] {
        &self.w
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn count_active(&self) -> usize {
        self.w.iter().filter(|&&x| x).count()
    }

    /// Active row sum `w_k+`.
    pub fn row_sum(&self, g: &ArealGraph, k: usize) -> usize {
        g.incident(k).iter().filter(|(_, b)| self.w[*b]).count()
    }
}

/// Sparse symmetric matrix: full diagonal plus each nonzero off-diagonal pair
/// once.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsePrecision {
    pub diag: Vec<f64>,
    pub offdiag: Vec<(usize, usize, f64)>,
}

impl SparsePrecision {
    pub fn n(&self) -> usize {
        self.diag.len()
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        if a == b {
            return self.diag[a];
        }
        let key = BorderId::new(a, b);
        self.offdiag
            .iter()
            .filter(|(x, y, _)| BorderId::new(*x, *y) == key)
            .map(|t| t.2)
            .sum()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.n();
        let mut m = vec![vec![0.0; n]; n];
        for (k, &d) in self.diag.iter().enumerate() {
            m[k][k] = d;
        }
        for &(a, b, v) in &self.offdiag {
            m[a][b] += v;
            m[b][a] += v;
        }
        m
    }

    /// `xᵀ Q x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let d: f64 = self.diag.iter().zip(x).map(|(q, v)| q * v * v).sum();
        let o: f64 = self.offdiag.iter().map(|&(a, b, v)| v * x[a] * x[b]).sum();
        d + 2.0 * o
    }

    pub fn pattern(&self) -> EnvelopePattern {
        let pairs: Vec<_> = self.offdiag.iter().map(|&(a, b, _)| (a, b)).collect();
        EnvelopePattern::new(self.n(), &pairs)
    }
}

fn leroux_diag(g: &ArealGraph, w: &EdgeState, rho: f64) -> Vec<f64> {
    (0..g.n())
        .map(|k| rho * w.row_sum(g, k) as f64 + 1.0 - rho)
        .collect()
}

/// Assembles `Q(W, ρ)`. Only active borders appear off the diagonal.
pub fn precision(g: &ArealGraph, w: &EdgeState, rho: f64) -> Result<SparsePrecision> {
    check_rho(rho)?;
    Ok(SparsePrecision {
        diag: leroux_diag(g, w, rho),
        offdiag: g
            .border_pairs()
            .iter()
            .enumerate()
            .filter(|(b, _)| w.get(*b))
            .map(|(_, id)| (id.k, id.j, -rho))
            .collect(),
    })
}

/// Mean and variance of `φ_k | φ_−k`.
pub fn full_conditional(
    g: &ArealGraph,
    k: usize,
    phi: &[f64],
    w: &EdgeState,
    rho: f64,
    tau2: f64,
) -> (f64, f64) {
    let mut count = 0usize;
    let mut sum = 0.0;
    for &(nb, b) in g.incident(k) {
        if w.get(b) {
            count += 1;
            sum += phi[nb];
        }
    }
    let denom = rho * count as f64 + 1.0 - rho;
    (rho * sum / denom, tau2 / denom)
}

/// Partial correlation of `(φ_k, φ_j)` given the rest; zero unless `(k, j)`
/// is an active border.
pub fn partial_corr(g: &ArealGraph, k: usize, j: usize, w: &EdgeState, rho: f64) -> f64 {
    let active = k != j && g.border_index(k, j).is_some_and(|b| w.get(b));
    if !active {
        return 0.0;
    }
    let dk = rho * w.row_sum(g, k) as f64 + 1.0 - rho;
    let dj = rho * w.row_sum(g, j) as f64 + 1.0 - rho;
    rho / (dj * dk).sqrt()
}

/// `ln N(φ; 0, τ² Q⁻¹)`, factoring `Q` from scratch.
pub fn log_density(g: &ArealGraph, phi: &[f64], w: &EdgeState, rho: f64, tau2: f64) -> Result<f64> {
    check_tau2(tau2)?;
    let model = LerouxGmrf::new(g, Arc::new(structure(g)), w.clone(), rho, tau2)?;
    model.log_density(phi)
}

/// Symbolic factorization pattern shared by every edge state of `g`.
pub fn structure(g: &ArealGraph) -> EnvelopePattern {
    let pairs: Vec<_> = g.border_pairs().iter().map(|b| (b.k, b.j)).collect();
    EnvelopePattern::new(g.n(), &pairs)
}

/// Draws `x ~ N(0, τ² Q⁻¹)` by back-substitution through the factor of `Q`.
pub fn sample_zero_mean<R: Rng + ?Sized>(q: &SparsePrecision, tau2: f64, rng: &mut R) -> Result<Vec<f64>> {
    check_tau2(tau2)?;
    let pattern = q.pattern();
    let chol = EnvelopeCholesky::factor(&pattern, &q.diag, q.offdiag.iter().copied())?;
    Ok(draw_with_factor(&pattern, &chol, tau2, rng))
}

fn draw_with_factor<R: Rng + ?Sized>(
    pattern: &EnvelopePattern,
    chol: &EnvelopeCholesky,
    tau2: f64,
    rng: &mut R,
) -> Vec<f64> {
    let n = pattern.n();
    let mut z: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    chol.backward(pattern, &mut z);
    let tau = tau2.sqrt();
    let mut x = vec![0.0; n];
    for (old, xi) in x.iter_mut().enumerate() {
        *xi = tau * z[pattern.position(old)];
    }
    x
}

/// `(W, ρ, τ²)` with a factorization of `Q(W, ρ)` kept in step with every
/// change made through this type.
#[derive(Debug, Clone)]
pub struct LerouxGmrf<'g> {
    graph: &'g ArealGraph,
    pattern: Arc<EnvelopePattern>,
    w: EdgeState,
    rho: f64,
    tau2: f64,
    factor: Option<EnvelopeCholesky>,
    scratch: Vec<f64>,
}

impl<'g> LerouxGmrf<'g> {
    pub fn new(
        graph: &'g ArealGraph,
        pattern: Arc<EnvelopePattern>,
        w: EdgeState,
        rho: f64,
        tau2: f64,
    ) -> Result<Self> {
        check_rho(rho)?;
        check_tau2(tau2)?;
        if w.len() != graph.border_count() {
            return Err(Error::LengthMismatch {
                what: "edge state",
                got: w.len(),
                expected: graph.border_count(),
            });
        }
        let mut model = LerouxGmrf {
            graph,
            pattern,
            w,
            rho,
            tau2,
            factor: None,
            scratch: vec![0.0; graph.n()],
        };
        model.refactor()?;
        Ok(model)
    }

    pub fn graph(&self) -> &'g ArealGraph {
        self.graph
    }

    pub fn w(&self) -> &EdgeState {
        &self.w
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn tau2(&self) -> f64 {
        self.tau2
    }

    pub fn set_tau2(&mut self, tau2: f64) -> Result<()> {
        check_tau2(tau2)?;
        self.tau2 = tau2;
        Ok(())
    }

    pub fn precision(&self) -> SparsePrecision {
        precision(self.graph, &self.w, self.rho).expect("rho validated on entry")
    }

    /// Recomputes the factorization of the current `Q(W, ρ)` from scratch.
    pub fn refactor(&mut self) -> Result<()> {
        self.factor = None;
        let q = self.precision();
        self.factor = Some(EnvelopeCholesky::factor(
            &self.pattern,
            &q.diag,
            q.offdiag.iter().copied(),
        )?);
        Ok(())
    }

    /// Log-determinant `ln |Q(W, ρ)|` at a trial ρ without changing the model.
    pub fn log_det_at(&self, rho: f64) -> Result<f64> {
        check_rho(rho)?;
        let q = precision(self.graph, &self.w, rho)?;
        let chol = EnvelopeCholesky::factor(&self.pattern, &q.diag, q.offdiag.iter().copied())?;
        Ok(chol.log_det(&self.pattern))
    }

    /// Moves to a new ρ whose factor is already known.
    pub fn set_rho(&mut self, rho: f64) -> Result<()> {
        check_rho(rho)?;
        self.rho = rho;
        self.refactor()
    }

    fn cached(&self) -> Result<&EnvelopeCholesky> {
        self.factor.as_ref().ok_or(Error::StaleFactorization)
    }

    pub fn log_det(&self) -> Result<f64> {
        Ok(self.cached()?.log_det(&self.pattern))
    }

    /// `φᵀ Q φ` from the sparse structure directly.
    pub fn quad_form(&self, phi: &[f64]) -> f64 {
        quad_form(self.graph, &self.w, self.rho, phi)
    }

    pub fn log_density(&self, phi: &[f64]) -> Result<f64> {
        if phi.len() != self.graph.n() {
            return Err(Error::LengthMismatch {
                what: "phi",
                got: phi.len(),
                expected: self.graph.n(),
            });
        }
        let n = phi.len() as f64;
        Ok(0.5 * self.log_det()?
            - 0.5 * n * (2.0 * std::f64::consts::PI * self.tau2).ln()
            - self.quad_form(phi) / (2.0 * self.tau2))
    }

    /// `vᵀ Q⁻¹ v` for the border's difference vector under the current state.
    fn border_quad(&mut self, b: usize) -> Result<f64> {
        let id = self.graph.border(b);
        let factor = self.factor.as_ref().ok_or(Error::StaleFactorization)?;
        Ok(factor.difference_quad_form(&self.pattern, id.k, id.j, &mut self.scratch))
    }

    /// `ln f(φ | w_b = 1, rest) − ln f(φ | w_b = 0, rest)`.
    pub fn toggle_log_ratio(&mut self, b: usize, phi: &[f64]) -> Result<f64> {
        let a = self.border_quad(b)?;
        let rho = self.rho;
        // vᵀ Q₀⁻¹ v with Q₀ the precision at w_b = 0.
        let q0 = if self.w.get(b) {
            a / (1.0 - rho * a)
        } else {
            a
        };
        let id = self.graph.border(b);
        let diff = phi[id.k] - phi[id.j];
        Ok(0.5 * (rho * q0).ln_1p() - rho * diff * diff / (2.0 * self.tau2))
    }

    /// Sets `w_b`, updating the cached factor by a rank-1 update/downdate.
    pub fn set_edge(&mut self, b: usize, value: bool) -> Result<()> {
        if self.w.get(b) == value {
            return Ok(());
        }
        self.w.set(b, value);
        let id = self.graph.border(b);
        let Some(factor) = self.factor.as_mut() else {
            return self.refactor();
        };
        let res = factor.rank_one_difference(&self.pattern, id.k, id.j, self.rho, !value, &mut self.scratch);
        if res.is_err() {
            // Rounding in a long sequence of downdates; start from scratch.
            self.refactor()?;
        }
        Ok(())
    }

    /// Sets `w_b` and drops the cached factor; the next ratio or density
    /// query fails until [`LerouxGmrf::refactor`] is called.
    pub fn set_edge_unfactored(&mut self, b: usize, value: bool) {
        self.w.set(b, value);
        self.factor = None;
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        Ok(draw_with_factor(&self.pattern, self.cached()?, self.tau2, rng))
    }
}

/// `φᵀ Q(W, ρ) φ` without assembling `Q`.
pub fn quad_form(g: &ArealGraph, w: &EdgeState, rho: f64, phi: &[f64]) -> f64 {
    let mut total = (1.0 - rho) * phi.iter().map(|x| x * x).sum::<f64>();
    for (b, id) in g.border_pairs().iter().enumerate() {
        if w.get(b) {
            let d = phi[id.k] - phi[id.j];
            total += rho * d * d;
        }
    }
    total
}
