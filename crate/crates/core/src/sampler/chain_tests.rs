use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_distr::Poisson;

use super::*;
use crate::elicit::EdgePriorSet;
use crate::sampler::{run_chain, run_chains, run_chains_serial, Iterations};
use crate::testutil::{binomial_two_sided, ks_test, normal_cdf};

fn rng(seed: u64) -> ChainRng {
    ChainRng::seed_from_u64(seed)
}

fn flat_data(n: usize) -> Dataset {
    Dataset::new(vec![1; n], vec![1.0; n], None).unwrap()
}

/// Configuration with the likelihood removed and only the listed blocks on.
fn prior_only(smoothing: Smoothing, iters: Iterations, on: &[&str]) -> ModelConfig {
    let mut cfg = ModelConfig::new(Mode::Covariate, smoothing, iters, 7);
    cfg.controls = Controls {
        likelihood: false,
        beta: on.contains(&"beta"),
        phi: on.contains(&"phi"),
        tau2: on.contains(&"tau2"),
        rho: on.contains(&"rho"),
        w: on.contains(&"w"),
        alpha: on.contains(&"alpha"),
    };
    cfg
}

fn state(g: &ArealGraph, phi: Vec<f64>, tau2: f64, rho: f64) -> ChainState {
    ChainState {
        beta: vec![0.0],
        phi,
        tau2,
        rho,
        w: EdgeState::all(g, true),
        alpha: Alpha::None,
    }
}

fn dense_q(g: &ArealGraph, w: &EdgeState, rho: f64) -> DMatrix<f64> {
    let rows = gmrf::precision(g, w, rho).unwrap().to_dense();
    DMatrix::from_fn(g.n(), g.n(), |r, c| rows[r][c])
}

fn dense_log_kernel(g: &ArealGraph, w: &EdgeState, rho: f64, tau2: f64, phi: &[f64]) -> f64 {
    let q = dense_q(g, w, rho);
    let x = nalgebra::DVector::from_column_slice(phi);
    0.5 * q.determinant().ln() - (x.transpose() * &q * &x)[0] / (2.0 * tau2)
}

#[test]
fn beta_reproduces_its_prior() {
    let g = ArealGraph::lattice(2, 2).unwrap();
    let d = flat_data(4);
    let cfg = prior_only(Smoothing::Global, Iterations::new(5_000, 500_000, 25), &["beta"]);
    let store = run_chain(&cfg, &d, &g, rng(11), 0, 11).unwrap();
    let draws: Vec<f64> = store.beta.iter().map(|b| b[0]).collect();
    let sd = 1000f64.sqrt();
    let p = ks_test(&draws, |x| normal_cdf(x, 0.0, sd));
    assert!(p > 0.01, "KS p = {p}");
}

#[test]
fn zero_width_proposal_keeps_beta() {
    let g = ArealGraph::lattice(2, 2).unwrap();
    let d = flat_data(4);
    let cfg = ModelConfig::new(Mode::Covariate, Smoothing::Global, Iterations::new(0, 1, 1), 1);
    let mut chain = Chain::with_state(&cfg, &d, &g, rng(1), state(&g, vec![0.1; 4], 1.0, 0.5)).unwrap();
    chain.tuning.beta[0].log_scale = f64::NEG_INFINITY;
    for _ in 0..100 {
        chain.update_beta();
    }
    assert_eq!(chain.beta, vec![0.0]);
}

#[test]
fn phi_reproduces_independent_prior_at_rho_zero() {
    let g = ArealGraph::lattice(2, 2).unwrap();
    let d = flat_data(4);
    let cfg = prior_only(Smoothing::Global, Iterations::new(5_000, 200_000, 10), &["phi"]);
    let mut chain = Chain::with_state(&cfg, &d, &g, rng(3), state(&g, vec![0.0; 4], 0.5, 0.0)).unwrap();
    let store = chain.run(0, 3).unwrap();
    for k in [0, 3] {
        let draws: Vec<f64> = store.phi.iter().map(|p| p[k]).collect();
        let p = ks_test(&draws, |x| normal_cdf(x, 0.0, 0.5f64.sqrt()));
        assert!(p > 0.01, "area {k}: KS p = {p}");
    }
}

#[test]
fn tau2_matches_truncated_inverse_gamma() {
    let g = ArealGraph::lattice(2, 2).unwrap();
    let d = flat_data(4);
    let cfg = prior_only(Smoothing::Global, Iterations::new(0, 50_000, 1), &["tau2"]);
    // ρ = 0: φᵀQφ = Σφ² = 2, so shape 1 and scale 1.
    let mut chain =
        Chain::with_state(&cfg, &d, &g, rng(5), state(&g, vec![1.0, 1.0, 0.0, 0.0], 1.0, 0.0)).unwrap();
    let store = chain.run(0, 5).unwrap();
    let norm = (-1.0f64 / 1000.0).exp();
    let p = ks_test(&store.tau2, |t| if t <= 0.0 { 0.0 } else { ((-1.0 / t).exp() / norm).min(1.0) });
    assert!(p > 0.01, "KS p = {p}");
}

#[test]
fn tau2_never_exceeds_upper_bound() {
    let g = ArealGraph::lattice(2, 2).unwrap();
    let d = flat_data(4);
    let cfg = prior_only(Smoothing::Global, Iterations::new(0, 1, 1), &["tau2"]);
    // Scale 5000 puts most of the untruncated mass above the bound.
    let mut chain =
        Chain::with_state(&cfg, &d, &g, rng(6), state(&g, vec![100.0, 0.0, 0.0, 0.0], 1.0, 0.0)).unwrap();
    let mut max: f64 = 0.0;
    for _ in 0..1_000_000 {
        chain.update_tau2().unwrap();
        let t = chain.gmrf.tau2();
        assert!(t > 0.0);
        max = max.max(t);
    }
    assert!(max <= 1000.0, "max draw {max}");
    assert!(max > 990.0);
}

#[test]
fn tau2_zero_phi_is_left_alone() {
    let g = ArealGraph::lattice(2, 2).unwrap();
    let d = flat_data(4);
    let cfg = prior_only(Smoothing::Global, Iterations::new(0, 1, 1), &["tau2"]);
    let mut chain = Chain::with_state(&cfg, &d, &g, rng(6), state(&g, vec![0.0; 4], 0.7, 0.0)).unwrap();
    chain.update_tau2().unwrap();
    assert_eq!(chain.gmrf.tau2(), 0.7);
}

fn five_area_graph() -> ArealGraph {
    ArealGraph::from_edge_list(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (1, 3)]).unwrap()
}

#[test]
fn rho_with_zero_phi_follows_log_det_weighting() {
    let g = five_area_graph();
    let d = flat_data(5);
    let cfg = prior_only(Smoothing::Global, Iterations::new(5_000, 400_000, 20), &["rho"]);
    let mut chain = Chain::with_state(&cfg, &d, &g, rng(8), state(&g, vec![0.0; 5], 1.0, 0.5)).unwrap();
    let store = chain.run(0, 8).unwrap();

    // Oracle: density ∝ |Q(ρ)|^{1/2} on (0, 1), CDF by Simpson's rule on a grid.
    let w = EdgeState::all(&g, true);
    let m = 4000;
    let h = RHO_MAX / m as f64;
    let dens: Vec<f64> = (0..=m).map(|i| dense_q(&g, &w, i as f64 * h).determinant().sqrt()).collect();
    let mut cum = vec![0.0; m / 2 + 1];
    for i in 0..m / 2 {
        cum[i + 1] = cum[i] + h / 3.0 * (dens[2 * i] + 4.0 * dens[2 * i + 1] + dens[2 * i + 2]);
    }
    let total = cum[m / 2];
    let cdf = |r: f64| {
        let pos = (r / (2.0 * h)).clamp(0.0, (m / 2) as f64);
        let i = (pos.floor() as usize).min(m / 2 - 1);
        let frac = pos - i as f64;
        (cum[i] + frac * (cum[i + 1] - cum[i])) / total
    };
    let p = ks_test(&store.rho, cdf);
    assert!(p > 0.01, "KS p = {p}");
}

#[test]
fn rho_marginal_is_uniform_when_phi_is_sampled_from_its_prior() {
    let g = five_area_graph();
    let d = flat_data(5);
    let cfg = prior_only(Smoothing::Global, Iterations::new(10_000, 600_000, 60), &["phi", "rho"]);
    let mut chain = Chain::with_state(&cfg, &d, &g, rng(9), state(&g, vec![0.0; 5], 1.0, 0.5)).unwrap();
    let store = chain.run(0, 9).unwrap();
    let p = ks_test(&store.rho, |r| r.clamp(0.0, 1.0));
    assert!(p > 0.01, "KS p = {p}");
}

#[test]
fn boundary_mode_keeps_rho_fixed() {
    let g = ArealGraph::lattice(3, 3).unwrap();
    let d = Dataset::new((1..=9).collect(), vec![4.0; 9], None).unwrap();
    let cfg = ModelConfig::new(
        Mode::Boundary,
        Smoothing::Local(PriorFamily::default()),
        Iterations::new(50, 50, 1),
        2,
    );
    let store = run_chain(&cfg, &d, &g, rng(2), 0, 2).unwrap();
    assert!(store.rho.iter().all(|&r| r == BOUNDARY_RHO));
}

fn random_graph(r: &mut ChainRng, n: usize) -> ArealGraph {
    loop {
        let mut edges = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                if r.random::<f64>() < 0.5 {
                    edges.push((a, b));
                }
            }
        }
        if !edges.is_empty() {
            return ArealGraph::from_edge_list(n, &edges).unwrap();
        }
    }
}

#[test]
fn w_conditional_matches_dense_joint_densities() {
    let mut r = rng(99);
    for case in 0..150 {
        let n = 3 + case % 6;
        let g = random_graph(&mut r, n);
        let m = g.border_count();
        let p: Vec<f64> = (0..m).map(|_| r.random_range(0.01..0.99)).collect();
        let prior = EdgePriorSet::new(&g, p.clone()).unwrap();
        let d = flat_data(n);
        let cfg = ModelConfig::new(
            Mode::Covariate,
            Smoothing::Local(PriorFamily::InformativeGeary(prior)),
            Iterations::new(0, 1, 1),
            1,
        );
        let rho = r.random_range(0.0..0.999);
        let tau2 = r.random_range(0.05..3.0);
        let phi: Vec<f64> = (0..n).map(|_| r.random_range(-1.5..1.5)).collect();
        let bits: Vec<bool> = (0..m).map(|_| r.random::<bool>()).collect();
        let w = EdgeState::from_bits(&g, bits).unwrap();
        let init = ChainState {
            beta: vec![0.0],
            phi: phi.clone(),
            tau2,
            rho,
            w: w.clone(),
            alpha: Alpha::None,
        };
        let mut chain = Chain::with_state(&cfg, &d, &g, rng(case as u64), init).unwrap();
        for b in 0..m {
            let mut on = w.clone();
            on.set(b, true);
            let mut off = w.clone();
            off.set(b, false);
            let l1 = dense_log_kernel(&g, &on, rho, tau2, &phi) + p[b].ln();
            let l0 = dense_log_kernel(&g, &off, rho, tau2, &phi) + (1.0 - p[b]).ln();
            let expect = 1.0 / (1.0 + (l0 - l1).exp());
            let got = chain.w_conditional(b).unwrap();
            assert!((got - expect).abs() < 1e-8, "case {case} border {b}: {got} vs {expect}");
        }
    }
}

fn informative(g: &ArealGraph, p: Vec<f64>) -> Smoothing {
    Smoothing::Local(PriorFamily::InformativeMoran(EdgePriorSet::new(g, p).unwrap()))
}

#[test]
fn small_prior_probability_does_not_freeze_an_edge() {
    let g = ArealGraph::lattice(2, 2).unwrap();
    let d = flat_data(4);
    let cfg = ModelConfig::new(Mode::Covariate, informative(&g, vec![0.001; 4]), Iterations::new(0, 1, 1), 1);
    let mut chain = Chain::with_state(&cfg, &d, &g, rng(1), state(&g, vec![0.3; 4], 1.0, RHO_MAX)).unwrap();
    for b in 0..4 {
        let p = chain.w_conditional(b).unwrap();
        assert!(p > 0.0 && p < 1.0, "border {b}: {p}");
    }
}

#[test]
fn large_jump_favours_switching_off() {
    let g = ArealGraph::lattice(2, 2).unwrap();
    let d = flat_data(4);
    let cfg = ModelConfig::new(Mode::Covariate, Smoothing::Local(PriorFamily::default()), Iterations::new(0, 1, 1), 1);
    let mut chain =
        Chain::with_state(&cfg, &d, &g, rng(1), state(&g, vec![10.0, -10.0, 10.0, -10.0], 1.0, 0.9)).unwrap();
    let b = g.border_index(0, 1).unwrap();
    assert!(chain.w_conditional(b).unwrap() < 0.5);
}

#[test]
fn w_marginals_reproduce_the_prior() {
    let g = ArealGraph::lattice(2, 2).unwrap();
    let d = flat_data(4);
    let p = vec![0.2, 0.5, 0.7, 0.9];
    let cfg = prior_only(informative(&g, p.clone()), Iterations::new(2_000, 200_000, 40), &["phi", "w"]);
    let mut chain = Chain::with_state(&cfg, &d, &g, rng(4), state(&g, vec![0.0; 4], 1.0, 0.9)).unwrap();
    let store = chain.run(0, 4).unwrap();
    let n = store.len() as u64;
    for (b, &pb) in p.iter().enumerate() {
        let on = store.w.iter().filter(|row| row[b]).count() as u64;
        let pv = binomial_two_sided(on, n, pb);
        assert!(pv > 0.01, "border {b}: {on}/{n} vs {pb}, p = {pv}");
    }
}

#[test]
fn alpha_b_is_beta_with_count_plug_in() {
    let g = ArealGraph::lattice(2, 4).unwrap();
    assert_eq!(g.border_count(), 10);
    let d = flat_data(8);
    let cfg = prior_only(Smoothing::Local(PriorFamily::GlobalAlphaB), Iterations::new(0, 1, 1), &["alpha"]);
    let mut init = state(&g, vec![0.0; 8], 1.0, 0.5);
    init.alpha = Alpha::Global(0.5);
    let mut chain = Chain::with_state(&cfg, &d, &g, rng(12), init).unwrap();
    let draws: Vec<f64> = (0..50_000)
        .map(|_| {
            chain.update_alpha().unwrap();
            match chain.alpha {
                Alpha::Global(a) => a,
                _ => unreachable!(),
            }
        })
        .collect();
    // Beta(11, 1): mean 11/12, variance 11 / (12² · 13).
    let n = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let var = draws.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let true_var = 11.0 / (144.0 * 13.0);
    assert!((mean - 11.0 / 12.0).abs() < 4.0 * (true_var / n).sqrt(), "mean {mean}");
    assert!((var / true_var - 1.0).abs() < 0.05, "var {var}");
}

#[test]
fn alpha_c_uses_per_border_counts() {
    let g = ArealGraph::lattice(2, 2).unwrap();
    let d = flat_data(4);
    let cfg = prior_only(Smoothing::Local(PriorFamily::EdgeAlphaC), Iterations::new(0, 1, 1), &["alpha"]);
    let mut init = state(&g, vec![0.0; 4], 1.0, 0.5);
    init.w.set(0, false);
    init.alpha = Alpha::PerBorder(vec![0.5; 4]);
    let mut chain = Chain::with_state(&cfg, &d, &g, rng(13), init).unwrap();
    let mut sums = [0.0; 4];
    let reps = 40_000;
    for _ in 0..reps {
        chain.update_alpha().unwrap();
        if let Alpha::PerBorder(a) = &chain.alpha {
            for (s, v) in sums.iter_mut().zip(a) {
                *s += v;
            }
        }
    }
    // Beta(1, 2) for the switched-off border, Beta(2, 1) otherwise; sd ≈ 0.236.
    let tol = 4.0 * 0.236 / (reps as f64).sqrt();
    assert!((sums[0] / reps as f64 - 1.0 / 3.0).abs() < tol);
    for s in &sums[1..] {
        assert!((s / reps as f64 - 2.0 / 3.0).abs() < tol);
    }
}

#[test]
fn alpha_update_rejects_other_families() {
    let g = ArealGraph::lattice(2, 2).unwrap();
    let d = flat_data(4);
    let cfg = ModelConfig::new(Mode::Covariate, Smoothing::Local(PriorFamily::default()), Iterations::new(0, 1, 1), 1);
    let mut chain = Chain::new(&cfg, &d, &g, rng(1)).unwrap();
    assert!(chain.update_alpha().is_err());
}

#[test]
fn recentring_preserves_risk_and_deviance() {
    let g = ArealGraph::lattice(3, 3).unwrap();
    let d = Dataset::new((1..=9).collect(), vec![3.0; 9], None).unwrap();
    let cfg = ModelConfig::new(Mode::Boundary, Smoothing::Global, Iterations::new(0, 1, 1), 1);
    let phi: Vec<f64> = (0..9).map(|k| 0.1 * k as f64).collect();
    let mut chain = Chain::with_state(&cfg, &d, &g, rng(1), state(&g, phi, 1.0, BOUNDARY_RHO)).unwrap();
    let risk = chain.risk();
    let dev = chain.deviance();
    chain.recentre();
    assert!(chain.phi.iter().sum::<f64>().abs() < 1e-12);
    for (a, b) in risk.iter().zip(chain.risk()) {
        assert!((a - b).abs() < 1e-12 * a);
    }
    assert!((dev - chain.deviance()).abs() < 1e-9);
}

#[test]
fn level_shift_draws_from_the_dense_conditional() {
    let g = ArealGraph::lattice(2, 3).unwrap();
    let d = Dataset::new(vec![4, 1, 7, 2, 5, 3], vec![3.0; 6], None).unwrap();
    let cfg = ModelConfig::new(Mode::Covariate, Smoothing::Global, Iterations::new(0, 1, 1), 1);
    let phi = vec![0.4, -0.2, 0.9, 0.1, 0.3, -0.5];
    let (tau2, rho) = (0.3, 0.97);
    let mut w = EdgeState::all(&g, true);
    w.set(2, false);
    let mut start = state(&g, phi.clone(), tau2, rho);
    start.beta = vec![0.25];
    start.w = w.clone();

    // The target along the shift is quadratic; read its mean and variance
    // off three dense evaluations.
    let var0 = cfg.beta_prior_variance;
    let f = |c: f64| {
        let shifted: Vec<f64> = phi.iter().map(|v| v - c).collect();
        dense_log_kernel(&g, &w, rho, tau2, &shifted) - (0.25 + c).powi(2) / (2.0 * var0)
    };
    let a = -(f(1.0) + f(-1.0) - 2.0 * f(0.0));
    let mean = (f(1.0) - f(-1.0)) / 2.0 / a;
    let sd = a.sqrt().recip();

    let mut r = rng(5);
    let mut z = Vec::with_capacity(20_000);
    for _ in 0..20_000 {
        let mut chain = Chain::with_state(&cfg, &d, &g, r.clone(), start.clone()).unwrap();
        let risk = chain.risk();
        chain.update_level();
        r = chain.rng.clone();
        let c = chain.beta[0] - 0.25;
        for (k, v) in chain.phi.iter().enumerate() {
            assert!((phi[k] - c - v).abs() < 1e-12);
        }
        for (x, y) in risk.iter().zip(chain.risk()) {
            assert!((x - y).abs() < 1e-12 * x);
        }
        z.push(c);
    }
    let p = ks_test(&z, |c| normal_cdf(c, mean, sd));
    assert!(p > 0.01, "KS p = {p}");
}

#[test]
fn stored_draw_count() {
    let g = ArealGraph::lattice(2, 2).unwrap();
    let d = Dataset::new(vec![1, 2, 3, 4], vec![2.0; 4], None).unwrap();
    let cfg = ModelConfig::new(Mode::Covariate, Smoothing::Local(PriorFamily::default()), Iterations::new(0, 10, 1), 1);
    let store = run_chain(&cfg, &d, &g, rng(1), 0, 1).unwrap();
    assert_eq!(store.len(), 10);
    assert_eq!(store.w.len(), 10);
    assert!(store.risk.iter().flatten().all(|&r| r > 0.0));
    let cfg = ModelConfig::new(Mode::Covariate, Smoothing::Global, Iterations::new(5, 30, 4), 1);
    assert_eq!(run_chain(&cfg, &d, &g, rng(1), 0, 1).unwrap().len(), 7);
}

fn simulated(seed: u64, side: usize, e: f64) -> (ArealGraph, Dataset) {
    let g = ArealGraph::lattice(side, side).unwrap();
    let mut r = rng(seed);
    let n = g.n();
    let w = EdgeState::all(&g, true);
    let q = gmrf::precision(&g, &w, 0.7).unwrap();
    let phi = gmrf::sample_zero_mean(&q, 0.05, &mut r).unwrap();
    let x: Vec<Vec<f64>> = (0..n).map(|_| vec![r.sample::<f64, _>(StandardNormal)]).collect();
    let y: Vec<u64> = (0..n)
        .map(|k| {
            let mean = e * (0.1 * x[k][0] + phi[k]).exp();
            Poisson::new(mean).unwrap().sample(&mut r) as u64
        })
        .collect();
    (g, Dataset::new(y, vec![e; n], Some(x)).unwrap())
}

#[test]
fn recovers_known_covariate_effect() {
    let (g, d) = simulated(21, 12, 60.0);
    let cfg = ModelConfig::new(
        Mode::Covariate,
        Smoothing::Local(PriorFamily::default()),
        Iterations::new(2_000, 3_000, 1),
        21,
    );
    let store = run_chain(&cfg, &d, &g, rng(21), 0, 21).unwrap();
    let b1: Vec<f64> = store.beta.iter().map(|b| b[1]).collect();
    let n = b1.len() as f64;
    let mean = b1.iter().sum::<f64>() / n;
    let sd = (b1.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!((mean - 0.1).abs() < 3.0 * sd, "posterior {mean} ± {sd}");
    let acc = &store.acceptance;
    assert!(acc.phi_mean > 0.2 && acc.phi_mean < 0.7, "{acc:?}");
}

#[test]
fn same_seed_same_store() {
    let (g, d) = simulated(5, 5, 20.0);
    let cfg = ModelConfig::new(
        Mode::Covariate,
        Smoothing::Local(PriorFamily::default()),
        Iterations::new(100, 100, 2),
        77,
    );
    let a = run_chains(&cfg, &d, &g, 3).unwrap();
    let b = run_chains_serial(&cfg, &d, &g, 3).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, run_chains(&cfg, &d, &g, 3).unwrap());
    assert_ne!(a[0].beta, a[1].beta);
    assert_ne!(a[1].beta, a[2].beta);
    assert_eq!(a.iter().map(|s| s.chain_id).collect::<Vec<_>>(), vec![0, 1, 2]);
    let pooled = SampleStore::pool(&a).unwrap();
    assert_eq!(pooled.len(), 3 * cfg.iterations.stored());
}
