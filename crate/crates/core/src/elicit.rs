//! Informative priors for the neighbourhood weights, elicited from an earlier
//! period's log-risk (or residual) surface.
//!
//! Each border's Geary ordinate `(φ*_k − φ*_j)²` or Moran ordinate
//! `(φ*_k − φ̄*)(φ*_j − φ̄*)` is ranked against the multiset of the same
//! ordinate over all `C(n, 2)` pairs of areas. The fraction of reference
//! values showing a weaker similarity than the border becomes `P(w_kj = 1)`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ArealGraph, BorderId};

/// Lower/upper clamp applied to every elicited probability.
pub const PRIOR_EPSILON: f64 = 0.001;

/// Default flat prior probability for Prior A.
pub const FLAT_PRIOR_P0: f64 = 0.5;

/// Earlier-period surface `φ*`, one finite value per area.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSurface {
    phi_star: Vec<f64>,
}

impl PriorSurface {
    pub fn new(phi_star: Vec<f64>) -> Result<Self> {
        if let Some(k) = phi_star.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("surface value at area {k} is not finite")));
        }
        Ok(PriorSurface { phi_star })
    }

    pub fn values(&self) -> &[f64] {
        &self.phi_star
    }

    pub fn len(&self) -> usize {
        self.phi_star.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi_star.is_empty()
    }

    fn mean(&self) -> f64 {
        self.phi_star.iter().sum::<f64>() / self.phi_star.len() as f64
    }
}

/// Per-border prior probability that the border is *not* a boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgePriorSet {
    borders: Vec<BorderId>,
    p: Vec<f64>,
    /// Set when every raw (unclamped) probability was zero.
    #[serde(default)]
    degenerate: bool,
}

impl EdgePriorSet {
    /// Wraps probabilities given in the graph's border order. Values must lie
    /// strictly inside (0, 1).
    pub fn new(g: &ArealGraph, p: Vec<f64>) -> Result<Self> {
        if p.len() != g.border_count() {
            return Err(Error::LengthMismatch {
                what: "edge priors",
                got: p.len(),
                expected: g.border_count(),
            });
        }
        if let Some(i) = p.iter().position(|&v| !(v > 0.0 && v < 1.0)) {
            return Err(Error::InvalidArgument(format!(
                "prior probability {} for border {:?} is outside (0, 1)",
                p[i],
                g.border(i)
            )));
        }
        Ok(EdgePriorSet {
            borders: g.border_pairs().to_vec(),
            p,
            degenerate: false,
        })
    }

    /// A constant prior over every border (Prior A).
    pub fn flat(g: &ArealGraph, p0: f64) -> Result<Self> {
        EdgePriorSet::new(g, vec![p0; g.border_count()])
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.p
    }

    pub fn borders(&self) -> &[BorderId] {
        &self.borders
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// True when this set was built for exactly the borders of `g`.
    pub fn matches(&self, g: &ArealGraph) -> bool {
        self.borders == g.border_pairs()
    }

    /// CSV with header `k,j,p`, rows in border order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,j,p\n");
        for (b, p) in self.borders.iter().zip(&self.p) {
            let _ = writeln!(out, "{},{},{:.15e}", b.k, b.j, p);
        }
        out
    }

    /// Reads the `k,j,p` CSV. Rows may come in any order but must cover the
    /// graph's borders exactly once.
    pub fn from_csv(text: &str, g: &ArealGraph) -> Result<Self> {
        let mut p = vec![f64::NAN; g.border_count()];
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, h)) if h.trim() == "k,j,p" => {}
            Some((i, _)) => return Err(Error::parse(i + 1, 1, "expected header `k,j,p`")),
            None => return Err(Error::parse(1, 1, "empty prior file")),
        }
        for (i, line) in lines {
            let fields: Vec<&str> = line.trim().split(',').collect();
            if fields.len() != 3 {
                return Err(Error::parse(i + 1, 1, format!("expected 3 fields, got {}", fields.len())));
            }
            let k: usize = fields[0]
                .parse()
                .map_err(|_| Error::parse(i + 1, 1, "bad index k"))?;
            let j: usize = fields[1]
                .parse()
                .map_err(|_| Error::parse(i + 1, 2, "bad index j"))?;
            let v: f64 = fields[2]
                .parse()
                .map_err(|_| Error::parse(i + 1, 3, "bad probability"))?;
            let idx = g
                .border_index(k, j)
                .ok_or_else(|| Error::parse(i + 1, 1, format!("({k},{j}) is not a border")))?;
            if !p[idx].is_nan() {
                return Err(Error::parse(i + 1, 1, format!("duplicate border ({k},{j})")));
            }
            p[idx] = v;
        }
        if let Some(idx) = p.iter().position(|v| v.is_nan()) {
            return Err(Error::InvalidArgument(format!(
                "prior file has no row for border {:?}",
                g.border(idx)
            )));
        }
        EdgePriorSet::new(g, p)
    }
}

/// The prior placed on the neighbourhood weights of the local model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PriorFamily {
    InformativeGeary(EdgePriorSet),
    InformativeMoran(EdgePriorSet),
    /// Prior A: independent Bernoulli(p0) on every border.
    FlatA { p0: f64 },
    /// Prior B: shared α ~ Uniform(0, 1).
    GlobalAlphaB,
    /// Prior C: per-border α_b ~ Uniform(0, 1).
    EdgeAlphaC,
}

impl Default for PriorFamily {
    fn default() -> Self {
        PriorFamily::FlatA { p0: FLAT_PRIOR_P0 }
    }
}

impl PriorFamily {
    pub fn label(&self) -> &'static str {
        match self {
            PriorFamily::InformativeGeary(_) => "geary",
            PriorFamily::InformativeMoran(_) => "moran",
            PriorFamily::FlatA { .. } => "prior-a",
            PriorFamily::GlobalAlphaB => "prior-b",
            PriorFamily::EdgeAlphaC => "prior-c",
        }
    }

    pub fn edge_priors(&self) -> Option<&EdgePriorSet> {
        match self {
            PriorFamily::InformativeGeary(s) | PriorFamily::InformativeMoran(s) => Some(s),
            _ => None,
        }
    }
}

/// Covariate rows `x_k` (full design rows, matching `beta_hat` in length) and
/// the fitted coefficients to remove from the log-SIR.
#[derive(Debug, Clone, Copy)]
pub struct Adjustment<'a> {
    pub rows: &'a [Vec<f64>],
    pub beta_hat: &'a [f64],
}

/// `φ*_k = ln(y*_k / e*_k) − x_kᵀβ̂`. With `zero_correct`, `y*_k + 0.5` is used
/// in place of `y*_k`; without it a zero count is an error.
pub fn log_residual_surface(
    y_star: &[u64],
    e_star: &[f64],
    adjustment: Option<Adjustment<'_>>,
    zero_correct: bool,
) -> Result<PriorSurface> {
    let n = y_star.len();
    if e_star.len() != n {
        return Err(Error::LengthMismatch {
            what: "expected counts",
            got: e_star.len(),
            expected: n,
        });
    }
    if let Some(k) = e_star.iter().position(|&e| !(e > 0.0 && e.is_finite())) {
        return Err(Error::InvalidArgument(format!(
            "expected count at area {k} must be positive, got {}",
            e_star[k]
        )));
    }
    if let Some(adj) = adjustment {
        if adj.rows.len() != n {
            return Err(Error::LengthMismatch {
                what: "covariate rows",
                got: adj.rows.len(),
                expected: n,
            });
        }
        if let Some(row) = adj.rows.iter().find(|r| r.len() != adj.beta_hat.len()) {
            return Err(Error::LengthMismatch {
                what: "covariate row",
                got: row.len(),
                expected: adj.beta_hat.len(),
            });
        }
    }
    let mut phi = Vec::with_capacity(n);
    for k in 0..n {
        let y = if zero_correct {
            y_star[k] as f64 + 0.5
        } else if y_star[k] == 0 {
            return Err(Error::ZeroCount(k));
        } else {
            y_star[k] as f64
        };
        let mut v = (y / e_star[k]).ln();
        if let Some(adj) = adjustment {
            v -= dot(&adj.rows[k], adj.beta_hat);
        }
        phi.push(v);
    }
    PriorSurface::new(phi)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn require_pairs(s: &PriorSurface) -> Result<()> {
    if s.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "reference distribution needs at least 2 areas, got {}",
            s.len()
        )));
    }
    Ok(())
}

/// Geary reference multiset `{(φ*_r − φ*_s)² : r < s}` in pair order.
pub fn geary_reference(s: &PriorSurface) -> Result<Vec<f64>> {
    require_pairs(s)?;
    let v = s.values();
    let mut out = Vec::with_capacity(v.len() * (v.len() - 1) / 2);
    for r in 0..v.len() {
        for t in (r + 1)..v.len() {
            out.push(geary_ordinate(v[r], v[t]));
        }
    }
    Ok(out)
}

/// Moran reference multiset `{(φ*_r − φ̄*)(φ*_s − φ̄*) : r < s}` in pair order.
pub fn moran_reference(s: &PriorSurface) -> Result<Vec<f64>> {
    require_pairs(s)?;
    let v = s.values();
    let mean = s.mean();
    let mut out = Vec::with_capacity(v.len() * (v.len() - 1) / 2);
    for r in 0..v.len() {
        for t in (r + 1)..v.len() {
            out.push(moran_ordinate(v[r], v[t], mean));
        }
    }
    Ok(out)
}

#[inline]
fn geary_ordinate(a: f64, b: f64) -> f64 {
    let d = a - b;
    d * d
}

#[inline]
fn moran_ordinate(a: f64, b: f64, mean: f64) -> f64 {
    (a - mean) * (b - mean)
}

fn check_elicitation_input(s: &PriorSurface, g: &ArealGraph) -> Result<()> {
    if s.len() != g.n() {
        return Err(Error::LengthMismatch {
            what: "prior surface",
            got: s.len(),
            expected: g.n(),
        });
    }
    if g.n() < 3 {
        return Err(Error::InvalidArgument(format!(
            "elicitation needs at least 3 areas, got {}",
            g.n()
        )));
    }
    if g.border_count() == 0 {
        return Err(Error::InvalidArgument("graph has no borders".into()));
    }
    Ok(())
}

fn finish(g: &ArealGraph, counts: Vec<usize>, total: usize, kind: &str) -> EdgePriorSet {
    let degenerate = counts.iter().all(|&c| c == 0);
    if degenerate {
        log::warn!(
            "{kind} elicitation: no reference value exceeds any border ordinate; \
             the prior surface carries no information and every p is clamped to {PRIOR_EPSILON}"
        );
    }
    let p = counts
        .into_iter()
        .map(|c| (c as f64 / total as f64).clamp(PRIOR_EPSILON, 1.0 - PRIOR_EPSILON))
        .collect();
    EdgePriorSet {
        borders: g.border_pairs().to_vec(),
        p,
        degenerate,
    }
}

/// `P(w_kj = 1)` = fraction of the Geary reference strictly greater than the
/// border's own squared difference, clamped to `[ε, 1 − ε]`.
pub fn geary_prior(s: &PriorSurface, g: &ArealGraph) -> Result<EdgePriorSet> {
    check_elicitation_input(s, g)?;
    let mut reference = geary_reference(s)?;
    reference.sort_unstable_by(f64::total_cmp);
    let v = s.values();
    let counts = g
        .border_pairs()
        .iter()
        .map(|b| {
            let ordinate = geary_ordinate(v[b.k], v[b.j]);
            reference.len() - reference.partition_point(|&x| x <= ordinate)
        })
        .collect();
    Ok(finish(g, counts, reference.len(), "Geary"))
}

/// `P(w_kj = 1)` = fraction of the Moran reference strictly less than the
/// border's own centred product, clamped to `[ε, 1 − ε]`.
pub fn moran_prior(s: &PriorSurface, g: &ArealGraph) -> Result<EdgePriorSet> {
    check_elicitation_input(s, g)?;
    let mut reference = moran_reference(s)?;
    reference.sort_unstable_by(f64::total_cmp);
    let v = s.values();
    let mean = s.mean();
    let counts = g
        .border_pairs()
        .iter()
        .map(|b| {
            let ordinate = moran_ordinate(v[b.k], v[b.j], mean);
            reference.partition_point(|&x| x < ordinate)
        })
        .collect();
    Ok(finish(g, counts, reference.len(), "Moran"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn path3() -> ArealGraph {
        ArealGraph::from_edge_list(3, &[(0, 1), (1, 2)]).unwrap()
    }

    fn surface(v: &[f64]) -> PriorSurface {
        PriorSurface::new(v.to_vec()).unwrap()
    }

    /// Brute-force double loop over all pairs; independent of the sort/search path.
    fn oracle_counts(v: &[f64], g: &ArealGraph) -> (Vec<usize>, Vec<usize>) {
        let n = v.len();
        let mean = v.iter().sum::<f64>() / n as f64;
        let mut geary = Vec::new();
        let mut moran = Vec::new();
        for b in g.border_pairs() {
            let og = (v[b.k] - v[b.j]) * (v[b.k] - v[b.j]);
            let om = (v[b.k] - mean) * (v[b.j] - mean);
            let (mut cg, mut cm) = (0, 0);
            for r in 0..n {
                for s in (r + 1)..n {
                    if (v[r] - v[s]) * (v[r] - v[s]) > og {
                        cg += 1;
                    }
                    if (v[r] - mean) * (v[s] - mean) < om {
                        cm += 1;
                    }
                }
            }
            geary.push(cg);
            moran.push(cm);
        }
        (geary, moran)
    }

    #[test]
    fn residual_surface_examples() {
        let s = log_residual_surface(&[2], &[2.0], None, false).unwrap();
        assert_eq!(s.values(), &[0.0]);

        // ln(e²) from a count of exactly e² is not representable; use the
        // equivalent real-valued ratio through the expected count instead.
        let e2 = std::f64::consts::E.powi(2);
        let s = log_residual_surface(&[1, 1], &[1.0, 1.0 / e2], None, false).unwrap();
        assert!((s.values()[1] - 2.0).abs() < 1e-12);
        assert_eq!(s.values()[0], 0.0);

        let rows = vec![vec![1.0]];
        let beta = [2f64.ln()];
        let s = log_residual_surface(
            &[2],
            &[1.0],
            Some(Adjustment { rows: &rows, beta_hat: &beta }),
            false,
        )
        .unwrap();
        assert!(s.values()[0].abs() < 1e-15);
    }

    #[test]
    fn residual_surface_errors() {
        assert!(matches!(
            log_residual_surface(&[3, 0], &[1.0, 1.0], None, false),
            Err(Error::ZeroCount(1))
        ));
        let s = log_residual_surface(&[3, 0], &[1.0, 1.0], None, true).unwrap();
        assert!((s.values()[1] - 0.5f64.ln()).abs() < 1e-15);
        assert!((s.values()[0] - 3.5f64.ln()).abs() < 1e-15);
        assert!(log_residual_surface(&[3], &[1.0, 1.0], None, false).is_err());
        assert!(log_residual_surface(&[3], &[0.0], None, false).is_err());
    }

    #[test]
    fn reference_examples() {
        assert_eq!(geary_reference(&surface(&[0.0, 1.0, 3.0])).unwrap(), vec![1.0, 9.0, 4.0]);
        assert_eq!(geary_reference(&surface(&[2.5; 3])).unwrap(), vec![0.0; 3]);
        assert_eq!(geary_reference(&surface(&[0.0, 1.0])).unwrap(), vec![1.0]);
        assert!(geary_reference(&surface(&[1.0])).is_err());

        let m = moran_reference(&surface(&[0.0, 1.0, 3.0])).unwrap();
        let expect = [4.0 / 9.0, -20.0 / 9.0, -5.0 / 9.0];
        for (a, b) in m.iter().zip(expect) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
        assert_eq!(moran_reference(&surface(&[7.0; 3])).unwrap(), vec![0.0; 3]);
        assert_eq!(moran_reference(&surface(&[-1.0, 1.0])).unwrap(), vec![-1.0]);
    }

    #[test]
    fn worked_examples() {
        let g = path3();
        let s = surface(&[0.0, 1.0, 3.0]);
        let p = geary_prior(&s, &g).unwrap();
        assert_eq!(p.probabilities(), &[2.0 / 3.0, 1.0 / 3.0]);
        let p = moran_prior(&s, &g).unwrap();
        assert_eq!(p.probabilities(), &[2.0 / 3.0, 1.0 / 3.0]);
    }

    #[test]
    fn constant_surface_clamps() {
        let g = path3();
        let s = surface(&[1.5; 3]);
        for p in [geary_prior(&s, &g).unwrap(), moran_prior(&s, &g).unwrap()] {
            assert!(p.is_degenerate());
            assert_eq!(p.probabilities(), &[PRIOR_EPSILON; 2]);
        }
    }

    #[test]
    fn elicitation_preconditions() {
        let g2 = ArealGraph::from_edge_list(2, &[(0, 1)]).unwrap();
        assert!(geary_prior(&surface(&[0.0, 1.0]), &g2).is_err());
        let g = ArealGraph::from_edge_list(3, &[]).unwrap();
        assert!(moran_prior(&surface(&[0.0, 1.0, 2.0]), &g).is_err());
        assert!(geary_prior(&surface(&[0.0, 1.0]), &path3()).is_err());
    }

    #[test]
    fn csv_roundtrip_and_validation() {
        let g = path3();
        let p = geary_prior(&surface(&[0.0, 1.0, 3.0]), &g).unwrap();
        let csv = p.to_csv();
        assert!(csv.starts_with("k,j,p\n0,1,6.666666666666"));
        let back = EdgePriorSet::from_csv(&csv, &g).unwrap();
        assert_eq!(back.probabilities(), p.probabilities());

        assert!(EdgePriorSet::from_csv("k,j,p\n0,1,0.5\n", &g).is_err());
        assert!(EdgePriorSet::from_csv("k,j,p\n0,1,0.5\n1,2,1.0\n", &g).is_err());
        assert!(EdgePriorSet::from_csv("k,j,p\n0,2,0.5\n1,2,0.5\n", &g).is_err());
        assert!(EdgePriorSet::from_csv("a,b\n", &g).is_err());
        let swapped = EdgePriorSet::from_csv("k,j,p\n2,1,0.25\n1,0,0.75\n", &g).unwrap();
        assert_eq!(swapped.probabilities(), &[0.75, 0.25]);
    }

    #[test]
    fn smooth_surface_favours_correlation() {
        let g = ArealGraph::lattice(12, 12).unwrap();
        let phi: Vec<f64> = (0..g.n())
            .map(|k| {
                let (r, c) = ((k / 12) as f64, (k % 12) as f64);
                (r / 3.0).sin() + (c / 4.0).cos()
            })
            .collect();
        let s = surface(&phi);
        for p in [geary_prior(&s, &g).unwrap(), moran_prior(&s, &g).unwrap()] {
            let mean = p.probabilities().iter().sum::<f64>() / p.probabilities().len() as f64;
            assert!(mean > 0.5, "mean prior {mean}");
        }
    }

    proptest! {
        #[test]
        fn matches_brute_force(
            n in 3usize..25,
            vals in prop::collection::vec(-3.0f64..3.0, 25),
            edges in prop::collection::vec((0usize..25, 0usize..25), 1..40),
        ) {
            let edges: Vec<_> = edges.into_iter().map(|(a, b)| (a % n, b % n)).filter(|(a, b)| a != b).collect();
            prop_assume!(!edges.is_empty());
            let g = ArealGraph::from_edge_list(n, &edges).unwrap();
            // Round to a coarse grid so ties are common.
            let v: Vec<f64> = vals[..n].iter().map(|x| (x * 4.0).round() / 4.0).collect();
            let s = surface(&v);
            let (cg, cm) = oracle_counts(&v, &g);
            let total = (n * (n - 1) / 2) as f64;
            let pg = geary_prior(&s, &g).unwrap();
            let pm = moran_prior(&s, &g).unwrap();
            for i in 0..g.border_count() {
                let eg = (cg[i] as f64 / total).clamp(PRIOR_EPSILON, 1.0 - PRIOR_EPSILON);
                let em = (cm[i] as f64 / total).clamp(PRIOR_EPSILON, 1.0 - PRIOR_EPSILON);
                prop_assert_eq!(pg.probabilities()[i], eg);
                prop_assert_eq!(pm.probabilities()[i], em);
            }
        }

        #[test]
        fn shift_and_sign_invariance(
            vals in prop::collection::vec(-3.0f64..3.0, 8),
            shift in -2.0f64..2.0,
        ) {
            let g = ArealGraph::lattice(2, 4).unwrap();
            // Dyadic grid and n = 8 keep the shifted values and mean exact.
            let v: Vec<f64> = vals.iter().map(|x| (x * 8.0).round() / 8.0).collect();
            let shift = (shift * 8.0).round() / 8.0;
            let shifted: Vec<f64> = v.iter().map(|x| x + shift).collect();
            let flipped: Vec<f64> = v.iter().map(|x| -x).collect();
            let base_g = geary_prior(&surface(&v), &g).unwrap();
            prop_assert_eq!(&base_g, &geary_prior(&surface(&shifted), &g).unwrap());
            prop_assert_eq!(&base_g, &geary_prior(&surface(&flipped), &g).unwrap());
            let base_m = moran_prior(&surface(&v), &g).unwrap();
            prop_assert_eq!(&base_m, &moran_prior(&surface(&shifted), &g).unwrap());
            for p in base_g.probabilities().iter().chain(base_m.probabilities()) {
                prop_assert!((PRIOR_EPSILON..=1.0 - PRIOR_EPSILON).contains(p));
            }
        }
    }
}
