//! Shared helpers for the integration tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::erf::erfc;
use statrs::function::factorial::ln_binomial;

use localcar::gmrf::{self, EdgeState};
use localcar::graph::ArealGraph;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Erdős–Rényi graph on `n` areas with edge probability `p`, redrawn until it
/// has at least one border.
pub fn random_graph<R: Rng>(r: &mut R, n: usize, p: f64) -> ArealGraph {
    loop {
        let mut edges = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                if r.random_bool(p) {
                    edges.push((a, b));
                }
            }
        }
        if !edges.is_empty() {
            return ArealGraph::from_edge_list(n, &edges).unwrap();
        }
    }
}

pub fn dense_q(g: &ArealGraph, w: &EdgeState, rho: f64) -> DMatrix<f64> {
    let rows = gmrf::precision(g, w, rho).unwrap().to_dense();
    DMatrix::from_fn(g.n(), g.n(), |r, c| rows[r][c])
}

/// `ln N(φ; 0, τ² Q⁻¹)` through a dense determinant and quadratic form.
pub fn dense_log_density(q: &DMatrix<f64>, phi: &[f64], tau2: f64) -> f64 {
    let n = phi.len() as f64;
    let x = nalgebra::DVector::from_column_slice(phi);
    let quad = (x.transpose() * q * &x)[0];
    0.5 * q.determinant().ln() - 0.5 * n * (2.0 * std::f64::consts::PI * tau2).ln() - quad / (2.0 * tau2)
}

/// One-sample Kolmogorov–Smirnov p-value of `draws` against `cdf`.
pub fn ks_test(draws: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut x = draws.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &v) in x.iter().enumerate() {
        let f = cdf(v);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..200 {
        let term = (-2.0 * (j * j) as f64 * lambda * lambda).exp();
        sum += if j % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

pub fn normal_cdf(x: f64, mean: f64, sd: f64) -> f64 {
    0.5 * erfc(-(x - mean) / (sd * std::f64::consts::SQRT_2))
}

/// Exact two-sided binomial p-value.
pub fn binomial_two_sided(k: u64, n: u64, p: f64) -> f64 {
    let ln_pmf = |i: u64| ln_binomial(n, i) + i as f64 * p.ln() + (n - i) as f64 * (1.0 - p).ln();
    let observed = ln_pmf(k);
    (0..=n)
        .map(ln_pmf)
        .filter(|&l| l <= observed + 1e-7)
        .map(f64::exp)
        .sum::<f64>()
        .min(1.0)
}
