//! Poisson log-linear regression with offset `ln E`, fitted by iteratively
//! reweighted least squares.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const MAX_ITER: usize = 100;
const TOL: f64 = 1e-10;

/// Maximum-likelihood fit of `Y_k ~ Poisson(E_k exp(β₀ + x_kᵀβ))`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoissonGlm {
    /// Intercept first, then one coefficient per covariate column.
    pub beta: Vec<f64>,
    pub iterations: usize,
}

impl PoissonGlm {
    /// Fits the model. `x` holds covariate rows without the intercept column;
    /// pass an empty slice per area (or `&[]` rows) for intercept only.
    pub fn fit(y: &[u64], e: &[f64], x: &[Vec<f64>]) -> Result<Self> {
        let n = y.len();
        if e.len() != n {
            return Err(Error::LengthMismatch {
                what: "expected counts",
                got: e.len(),
                expected: n,
            });
        }
        if !x.is_empty() && x.len() != n {
            return Err(Error::LengthMismatch {
                what: "covariate rows",
                got: x.len(),
                expected: n,
            });
        }
        let p = x.first().map_or(0, Vec::len);
        let design = DMatrix::from_fn(n, p + 1, |r, c| if c == 0 { 1.0 } else { x[r][c - 1] });
        let offset: Vec<f64> = e.iter().map(|v| v.ln()).collect();
        let total_y: f64 = y.iter().map(|&v| v as f64).sum();
        let total_e: f64 = e.iter().sum();
        if total_y <= 0.0 {
            return Err(Error::Degenerate("all counts are zero".into()));
        }
        let mut beta = DVector::zeros(p + 1);
        beta[0] = (total_y / total_e).ln();

        for iter in 1..=MAX_ITER {
            let eta = &design * &beta;
            let mut xtwx = DMatrix::zeros(p + 1, p + 1);
            let mut xtwz = DVector::zeros(p + 1);
            for r in 0..n {
                let mu = (eta[r] + offset[r]).exp();
                // Working response on the linear-predictor scale (offset removed).
                let z = eta[r] + (y[r] as f64 - mu) / mu;
                let row = design.row(r);
                for a in 0..=p {
                    xtwz[a] += mu * row[a] * z;
                    for b in 0..=p {
                        xtwx[(a, b)] += mu * row[a] * row[b];
                    }
                }
            }
            let next: DVector<f64> = xtwx
                .cholesky()
                .ok_or_else(|| Error::Numerical("singular GLM information matrix".into()))?
                .solve(&xtwz);
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical("GLM iteration diverged".into()));
            }
            let change = (&next - &beta).amax();
            beta = next;
            if change < TOL {
                return Ok(PoissonGlm {
                    beta: beta.iter().copied().collect(),
                    iterations: iter,
                });
            }
        }
        Err(Error::Numerical(format!("GLM did not converge in {MAX_ITER} iterations")))
    }

    /// Full design rows `(1, x_k)` matching [`PoissonGlm::beta`].
    pub fn design_rows(n: usize, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
        (0..n)
            .map(|k| {
                let mut row = vec![1.0];
                if let Some(xk) = x.get(k) {
                    row.extend_from_slice(xk);
                }
                row
            })
            .collect()
    }
}
