//! Post-processing of sampler output: global spatial autocorrelation, DIC,
//! overdispersion, convergence, boundary probabilities and accuracy scores.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ArealGraph, BorderId};
use crate::sampler::{deviance_from_risk, Dataset, SampleStore};

/// Posterior-probability thresholds used for boundary classification.
pub const THRESHOLDS: [f64; 3] = [0.5, 0.75, 0.9];

fn centred_spread(v: &[f64], g: &ArealGraph) -> Result<(f64, f64)> {
    if v.len() != g.n() {
        return Err(Error::LengthMismatch {
            what: "values",
            got: v.len(),
            expected: g.n(),
        });
    }
    if g.n() < 2 || g.border_count() == 0 {
        return Err(Error::InvalidArgument("need at least two areas and one border".into()));
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let ss = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
    if !(ss > 0.0) {
        return Err(Error::Degenerate("values are constant".into()));
    }
    Ok((mean, ss))
}

/// Moran's I with binary geographic weights, each border counted in both
/// directions.
pub fn moran_i(v: &[f64], g: &ArealGraph) -> Result<f64> {
    let (mean, ss) = centred_spread(v, g)?;
    let cross: f64 = g
        .border_pairs()
        .iter()
        .map(|b| 2.0 * (v[b.k] - mean) * (v[b.j] - mean))
        .sum();
    let weight_sum = 2.0 * g.border_count() as f64;
    Ok(g.n() as f64 * cross / (weight_sum * ss))
}

/// Geary's C with binary geographic weights.
pub fn geary_c(v: &[f64], g: &ArealGraph) -> Result<f64> {
    let (_, ss) = centred_spread(v, g)?;
    let diff: f64 = g
        .border_pairs()
        .iter()
        .map(|b| 2.0 * (v[b.k] - v[b.j]).powi(2))
        .sum();
    let weight_sum = 2.0 * g.border_count() as f64;
    Ok((g.n() as f64 - 1.0) * diff / (2.0 * weight_sum * ss))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dic {
    pub dic: f64,
    pub p_d: f64,
    pub d_bar: f64,
    /// Deviance at the posterior-mean fitted risks.
    pub d_hat: f64,
}

/// Sum in ascending order, so pooled statistics do not depend on the order
/// in which chains are supplied.
fn ordered_mean(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    values.into_iter().sum::<f64>() / n
}

/// Deviance information criterion over the pooled draws of `stores`.
pub fn dic(stores: &[SampleStore], d: &Dataset) -> Result<Dic> {
    let total: usize = stores.iter().map(SampleStore::len).sum();
    if total == 0 {
        return Err(Error::InvalidArgument("no stored draws".into()));
    }
    let d_bar = ordered_mean(stores.iter().flat_map(|s| s.deviance.iter().copied()).collect());
    let mut mean_risk = Vec::with_capacity(d.n());
    for k in 0..d.n() {
        let column: Vec<f64> = stores
            .iter()
            .flat_map(|s| s.risk.iter().map(move |r| r[k]))
            .collect();
        mean_risk.push(ordered_mean(column));
    }
    let d_hat = deviance_from_risk(d, &mean_risk);
    let p_d = d_bar - d_hat;
    Ok(Dic {
        dic: d_bar + p_d,
        p_d,
        d_bar,
        d_hat,
    })
}

/// Pearson statistic `Σ (y − μ)² / μ` over `n − p − 1` degrees of freedom,
/// where `p` counts covariates (not the intercept).
pub fn dispersion(d: &Dataset, fitted: &[f64], p: usize) -> Result<f64> {
    if fitted.len() != d.n() {
        return Err(Error::LengthMismatch {
            what: "fitted means",
            got: fitted.len(),
            expected: d.n(),
        });
    }
    let df = d.n() as isize - p as isize - 1;
    if df <= 0 {
        return Err(Error::InvalidArgument(format!("{df} residual degrees of freedom")));
    }
    let mut total = 0.0;
    for (&y, &mu) in d.y().iter().zip(fitted) {
        if !(mu > 0.0) {
            return Err(Error::InvalidArgument(format!("fitted mean {mu} is not positive")));
        }
        total += (y as f64 - mu).powi(2) / mu;
    }
    Ok(total / df as f64)
}

/// Potential scale reduction factor `sqrt((W + (1 + 1/m) B/n) / W)`.
pub fn gelman_rubin(chains: &[Vec<f64>]) -> Result<f64> {
    let m = chains.len();
    if m < 2 {
        return Err(Error::InvalidArgument("need at least two chains".into()));
    }
    let n = chains[0].len();
    if n < 10 || chains.iter().any(|c| c.len() != n) {
        return Err(Error::InvalidArgument("chains must share a length of at least 10".into()));
    }
    let nf = n as f64;
    let means: Vec<f64> = chains.iter().map(|c| c.iter().sum::<f64>() / nf).collect();
    let grand = means.iter().sum::<f64>() / m as f64;
    let b_over_n = means.iter().map(|x| (x - grand).powi(2)).sum::<f64>() / (m as f64 - 1.0);
    let w = chains
        .iter()
        .zip(&means)
        .map(|(c, mu)| c.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (nf - 1.0))
        .sum::<f64>()
        / m as f64;
    if !(w > 0.0) {
        return Err(Error::Degenerate("zero within-chain variance".into()));
    }
    Ok(((w + (1.0 + 1.0 / m as f64) * b_over_n) / w).sqrt())
}

/// Posterior `P(w_b = 0 | Y)` for every border.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryReport {
    pub borders: Vec<BorderId>,
    pub p_w0: Vec<f64>,
}

impl BoundaryReport {
    /// Strictly greater than `c`.
    pub fn is_boundary(&self, b: usize, c: f64) -> bool {
        self.p_w0[b] > c
    }

    pub fn boundaries(&self, c: f64) -> Vec<bool> {
        self.p_w0.iter().map(|&p| p > c).collect()
    }

    /// CSV with header `k,j,p_w0,boundary_050,boundary_075,boundary_090`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,j,p_w0,boundary_050,boundary_075,boundary_090\n");
        for (id, &p) in self.borders.iter().zip(&self.p_w0) {
            let flags: Vec<&str> = THRESHOLDS.iter().map(|&c| if p > c { "1" } else { "0" }).collect();
            let _ = writeln!(out, "{},{},{},{}", id.k, id.j, p, flags.join(","));
        }
        out
    }
}

/// Fraction of pooled draws with `w_b = 0`, per border.
pub fn boundary_probabilities(stores: &[SampleStore], g: &ArealGraph) -> Result<BoundaryReport> {
    let total: usize = stores.iter().map(SampleStore::len).sum();
    if total == 0 {
        return Err(Error::InvalidArgument("no stored draws".into()));
    }
    let m = g.border_count();
    let mut zeros = vec![0usize; m];
    for s in stores {
        for row in &s.w {
            if row.len() != m {
                return Err(Error::LengthMismatch {
                    what: "edge draws",
                    got: row.len(),
                    expected: m,
                });
            }
            for (z, &on) in zeros.iter_mut().zip(row) {
                *z += usize::from(!on);
            }
        }
    }
    Ok(BoundaryReport {
        borders: g.border_pairs().to_vec(),
        p_w0: zeros.into_iter().map(|z| z as f64 / total as f64).collect(),
    })
}

/// Share of true boundaries with `P(w = 0) > c`.
pub fn sensitivity(p_w0: &[f64], truth: &[bool], c: f64) -> Result<f64> {
    check_truth(p_w0, truth)?;
    let (hit, total) = p_w0
        .iter()
        .zip(truth)
        .filter(|(_, &t)| t)
        .fold((0usize, 0usize), |(h, n), (&p, _)| (h + usize::from(p > c), n + 1));
    if total == 0 {
        return Err(Error::UndefinedRate("sensitivity"));
    }
    Ok(hit as f64 / total as f64)
}

/// Share of true non-boundaries with `P(w = 1) > c`.
pub fn specificity(p_w0: &[f64], truth: &[bool], c: f64) -> Result<f64> {
    check_truth(p_w0, truth)?;
    let (hit, total) = p_w0
        .iter()
        .zip(truth)
        .filter(|(_, &t)| !t)
        .fold((0usize, 0usize), |(h, n), (&p, _)| (h + usize::from(1.0 - p > c), n + 1));
    if total == 0 {
        return Err(Error::UndefinedRate("specificity"));
    }
    Ok(hit as f64 / total as f64)
}

pub fn sensitivity_specificity(p_w0: &[f64], truth: &[bool], c: f64) -> Result<(f64, f64)> {
    Ok((sensitivity(p_w0, truth, c)?, specificity(p_w0, truth, c)?))
}

fn check_truth(p_w0: &[f64], truth: &[bool]) -> Result<()> {
    if p_w0.len() != truth.len() {
        return Err(Error::LengthMismatch {
            what: "truth mask",
            got: truth.len(),
            expected: p_w0.len(),
        });
    }
    Ok(())
}

/// Bias and RMSE as percentages of the truth, one `(estimate, truth)` pair
/// per replicate: `100·mean(e/t − 1)` and `100·sqrt(mean((e/t − 1)²))`.
pub fn bias_rmse_percent(estimates: &[f64], truth: &[f64]) -> Result<(f64, f64)> {
    if estimates.is_empty() {
        return Err(Error::InvalidArgument("no estimates".into()));
    }
    if estimates.len() != truth.len() {
        return Err(Error::LengthMismatch {
            what: "truth",
            got: truth.len(),
            expected: estimates.len(),
        });
    }
    let n = estimates.len() as f64;
    let mut bias = 0.0;
    let mut sq = 0.0;
    for (&e, &t) in estimates.iter().zip(truth) {
        if t == 0.0 {
            return Err(Error::InvalidArgument("true value is zero".into()));
        }
        let rel = (e - t) / t;
        bias += rel;
        sq += rel * rel;
    }
    Ok((100.0 * bias / n, 100.0 * (sq / n).sqrt()))
}

/// Per-area [`bias_rmse_percent`] over replicates (`[replicate][area]`),
/// averaged over areas.
pub fn bias_rmse_percent_areas(estimates: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<(f64, f64)> {
    let Some(first) = estimates.first() else {
        return Err(Error::InvalidArgument("no estimates".into()));
    };
    let n = first.len();
    if truth.len() != estimates.len() || estimates.iter().chain(truth).any(|r| r.len() != n) {
        return Err(Error::InvalidArgument("estimate and truth shapes differ".into()));
    }
    let (mut bias, mut rmse) = (0.0, 0.0);
    for k in 0..n {
        let e: Vec<f64> = estimates.iter().map(|r| r[k]).collect();
        let t: Vec<f64> = truth.iter().map(|r| r[k]).collect();
        let (b, r) = bias_rmse_percent(&e, &t)?;
        bias += b;
        rmse += r;
    }
    Ok((bias / n as f64, rmse / n as f64))
}
