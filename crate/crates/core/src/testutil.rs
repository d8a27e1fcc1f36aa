//! Goodness-of-fit helpers for the statistical unit tests.

use statrs::function::erf::erfc;
use statrs::function::factorial::ln_binomial;

/// One-sample Kolmogorov–Smirnov p-value of `draws` against `cdf`.
pub fn ks_test(draws: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut x = draws.to_vec();
    x.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = x.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &v) in x.iter().enumerate() {
        let f = cdf(v);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    kolmogorov_q((n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d)
}

/// `Q(λ) = 2 Σ (−1)^{j−1} exp(−2 j² λ²)`.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..200 {
        let jf = j as f64;
        let term = (-2.0 * jf * jf * lambda * lambda).exp();
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

/// Exact two-sided binomial p-value: total mass of outcomes no more likely
/// than the observed `k`.
pub fn binomial_two_sided(k: u64, n: u64, p: f64) -> f64 {
    let ln_pmf = |i: u64| ln_binomial(n, i) + i as f64 * p.ln() + (n - i) as f64 * (1.0 - p).ln();
    let observed = ln_pmf(k);
    let total: f64 = (0..=n)
        .map(ln_pmf)
        .filter(|&l| l <= observed + 1e-7)
        .map(f64::exp)
        .sum();
    total.min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kolmogorov_reference_points() {
        // Tabulated: Q(1.36) ≈ 0.049, Q(1.63) ≈ 0.0098.
        assert!((kolmogorov_q(1.358) - 0.05).abs() < 1e-3);
        assert!((kolmogorov_q(1.628) - 0.01).abs() < 1e-3);
    }

    #[test]
    fn binomial_symmetric_case() {
        // n = 10, p = 1/2, k = 5 is the mode: p-value 1.
        assert!((binomial_two_sided(5, 10, 0.5) - 1.0).abs() < 1e-12);
        // k = 0: two tails of 2^-10.
        assert!((binomial_two_sided(0, 10, 0.5) - 2.0 / 1024.0).abs() < 1e-12);
    }
}
