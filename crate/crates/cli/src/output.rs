//! Posterior summaries written by `fit`.

use std::fmt::Write as _;

use localcar::diagnostics::gelman_rubin;
use localcar::sampler::SampleStore;

/// Linear-interpolation quantile of sorted data (R type 7).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Median and central 95% interval.
pub fn summarise(mut values: Vec<f64>) -> (f64, f64, f64) {
    values.sort_by(f64::total_cmp);
    (
        quantile_sorted(&values, 0.5),
        quantile_sorted(&values, 0.025),
        quantile_sorted(&values, 0.975),
    )
}

/// `area,median,lower,upper` over the pooled risk draws.
pub fn risk_csv(stores: &[SampleStore], n: usize) -> String {
    let mut out = String::from("area,median,lower,upper\n");
    for k in 0..n {
        let draws = stores.iter().flat_map(|s| s.risk.iter().map(move |r| r[k])).collect();
        let (m, lo, hi) = summarise(draws);
        let _ = writeln!(out, "{k},{m},{lo},{hi}");
    }
    out
}

/// `parameter,median,lower,upper` for the regression coefficients, τ² and ρ.
pub fn parameters_csv(stores: &[SampleStore]) -> String {
    let mut out = String::from("parameter,median,lower,upper\n");
    for (name, draws) in scalar_traces(stores) {
        let (m, lo, hi) = summarise(draws.into_iter().flatten().collect());
        let _ = writeln!(out, "{name},{m},{lo},{hi}");
    }
    out
}

/// Per-chain traces of every scalar parameter plus the deviance.
fn scalar_traces(stores: &[SampleStore]) -> Vec<(String, Vec<Vec<f64>>)> {
    let p = stores.first().and_then(|s| s.beta.first()).map_or(0, Vec::len);
    let mut traces: Vec<(String, Vec<Vec<f64>>)> = (0..p)
        .map(|c| (format!("beta{c}"), stores.iter().map(|s| s.beta.iter().map(|b| b[c]).collect()).collect()))
        .collect();
    traces.push(("tau2".into(), stores.iter().map(|s| s.tau2.clone()).collect()));
    traces.push(("rho".into(), stores.iter().map(|s| s.rho.clone()).collect()));
    traces.push(("deviance".into(), stores.iter().map(|s| s.deviance.clone()).collect()));
    traces
}

/// `parameter,psrf`; the value is `NA` where it is undefined (fewer than two
/// chains, too few draws, or a parameter that never moved).
pub fn gelman_rubin_csv(stores: &[SampleStore]) -> String {
    let mut out = String::from("parameter,psrf\n");
    for (name, chains) in scalar_traces(stores) {
        match gelman_rubin(&chains) {
            Ok(r) => {
                let _ = writeln!(out, "{name},{r}");
            }
            Err(_) => {
                let _ = writeln!(out, "{name},NA");
            }
        }
    }
    out
}
