//! Inverse-CDF sampling of a gamma variate restricted to `[lower, ∞)`.

use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

use crate::error::{Error, Result};

/// Returns `G ~ Gamma(shape, 1)` conditioned on `G ≥ lower`, given a uniform
/// `u ∈ (0, 1)`. The solve runs on whichever tail carries less mass so that
/// neither `P` nor `Q` is formed by cancellation.
pub(crate) fn truncated_unit_gamma(shape: f64, lower: f64, u: f64) -> Result<f64> {
    debug_assert!(shape > 0.0 && lower >= 0.0 && u > 0.0 && u < 1.0);
    let p0 = if lower > 0.0 { gamma_lr(shape, lower) } else { 0.0 };
    let q0 = if lower > 0.0 { gamma_ur(shape, lower) } else { 1.0 };
    if q0 <= 0.0 {
        // No representable mass above the bound; the bound itself is the draw.
        return Ok(lower);
    }
    // Target: Q(G) = u q0, equivalently P(G) = (1 − u) + u p0.
    let q_target = u * q0;
    let p_target = (1.0 - u) + u * p0;
    let use_upper = q_target < 0.5;

    let residual = |g: f64| -> f64 {
        if use_upper {
            gamma_ur(shape, g) - q_target
        } else {
            gamma_lr(shape, g) - p_target
        }
    };
    // residual is increasing in g for the lower tail and decreasing for the upper.
    let sign = if use_upper { -1.0 } else { 1.0 };

    let mut lo = lower.max(0.0);
    let mut hi = (shape + 1.0).max(lo * 2.0 + 1.0);
    let mut expansions = 0;
    while sign * residual(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
        expansions += 1;
        if expansions > 2000 {
            return Err(Error::Numerical("gamma quantile bracket did not close".into()));
        }
    }
    let lg = ln_gamma(shape);
    let mut g = 0.5 * (lo + hi);
    for _ in 0..200 {
        let r = residual(g);
        if r == 0.0 {
            return Ok(g);
        }
        if sign * r < 0.0 {
            lo = g;
        } else {
            hi = g;
        }
        // Newton step in the bracket, bisection otherwise.
        let density = ((shape - 1.0) * g.ln() - g - lg).exp();
        let step = if density > 0.0 { sign * r / density } else { f64::NAN };
        let newton = g - step;
        let next = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - g).abs() <= 1e-15 * g.max(1e-300) || hi - lo <= 1e-15 * hi {
            return Ok(next);
        }
        g = next;
    }
    Ok(g)
}
