//! Envelope (profile) Cholesky factorization under a reverse Cuthill–McKee
//! ordering, with in-place rank-1 update/downdate.
//!
//! The envelope of row `i` is the contiguous column range `first[i]..=i`.
//! The factor of any matrix whose nonzeros lie inside the envelope lies inside
//! the same envelope, so one symbolic pattern serves every edge state of a
//! graph: toggling a border only changes values, never the structure.

use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopePattern {
    /// New position -> original index.
    perm: Vec<usize>,
    /// Original index -> new position.
    inv: Vec<usize>,
    first: Vec<usize>,
    row_ptr: Vec<usize>,
    /// For each column `c`, the rows `i > c` whose envelope covers `c`.
    col_rows: Vec<Vec<usize>>,
}

impl EnvelopePattern {
    /// Builds the pattern for an `n x n` symmetric matrix whose off-diagonal
    /// structure is given as unordered index pairs.
    pub fn new(n: usize, pairs: &[(usize, usize)]) -> Self {
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in pairs {
            if a != b {
                adj[a].push(b);
                adj[b].push(a);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        let perm = reverse_cuthill_mckee(&adj);
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let first: Vec<usize> = (0..n)
            .map(|i| {
                adj[perm[i]]
                    .iter()
                    .map(|&nb| inv[nb])
                    .fold(i, usize::min)
            })
            .collect();
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        for i in 0..n {
            row_ptr.push(row_ptr[i] + (i - first[i] + 1));
        }
        let mut col_rows = vec![Vec::new(); n];
        for i in 0..n {
            for c in first[i]..i {
                col_rows[c].push(i);
            }
        }
        EnvelopePattern {
            perm,
            inv,
            first,
            row_ptr,
            col_rows,
        }
    }

    pub fn n(&self) -> usize {
        self.perm.len()
    }

    /// Stored entries of the lower triangle, diagonal included.
    pub fn envelope_size(&self) -> usize {
        *self.row_ptr.last().unwrap_or(&0)
    }

    pub fn bandwidth(&self) -> usize {
        (0..self.n()).map(|i| i - self.first[i]).max().unwrap_or(0)
    }

    pub fn position(&self, original: usize) -> usize {
        self.inv[original]
    }

    #[inline]
    fn idx(&self, i: usize, c: usize) -> usize {
        debug_assert!(c >= self.first[i] && c <= i);
        self.row_ptr[i] + (c - self.first[i])
    }

    #[inline]
    fn row(&self, i: usize) -> std::ops::Range<usize> {
        self.row_ptr[i]..self.row_ptr[i + 1]
    }
}

/// Reverse Cuthill–McKee: breadth-first from a minimum-degree vertex of each
/// component, neighbours queued by increasing degree, final order reversed.
fn reverse_cuthill_mckee(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&v| (adj[v].len(), v));
    let mut queue = VecDeque::new();
    for &start in &by_degree {
        if visited[start] {
            continue;
        }
        visited[start] = true;
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&u| !visited[u]).collect();
            next.sort_by_key(|&u| (adj[u].len(), u));
            for u in next {
                visited[u] = true;
                queue.push_back(u);
            }
        }
    }
    order.reverse();
    order
}

/// Lower-triangular factor `L` with `P A Pᵀ = L Lᵀ`, stored row-wise inside
/// the envelope.
#[derive(Debug, Clone)]
pub struct EnvelopeCholesky {
    values: Vec<f64>,
}

impl EnvelopeCholesky {
    /// Factors the symmetric matrix with diagonal `diag` and off-diagonal
    /// entries `offdiag` (original indices, each unordered pair given once).
    /// Every off-diagonal pair must belong to the pattern's structure.
    pub fn factor(
        pattern: &EnvelopePattern,
        diag: &[f64],
        offdiag: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let n = pattern.n();
        debug_assert_eq!(diag.len(), n);
        let mut values = vec![0.0; pattern.envelope_size()];
        for (old, &d) in diag.iter().enumerate() {
            let i = pattern.inv[old];
            values[pattern.idx(i, i)] = d;
        }
        for (a, b, v) in offdiag {
            let (pa, pb) = (pattern.inv[a], pattern.inv[b]);
            let (i, c) = if pa > pb { (pa, pb) } else { (pb, pa) };
            values[pattern.idx(i, c)] += v;
        }
        let mut chol = EnvelopeCholesky { values };
        chol.factor_in_place(pattern)?;
        Ok(chol)
    }

    fn factor_in_place(&mut self, p: &EnvelopePattern) -> Result<()> {
        let n = p.n();
        for i in 0..n {
            let fi = p.first[i];
            let ri = p.row_ptr[i];
            for c in fi..i {
                let fc = p.first[c];
                let start = fi.max(fc);
                let rc = p.row_ptr[c];
                let (head, tail) = self.values.split_at_mut(ri);
                let row_c = &head[rc + (start - fc)..rc + (c - fc)];
                let row_i = &tail[(start - fi)..(c - fi)];
                let s: f64 = row_i.iter().zip(row_c).map(|(x, y)| x * y).sum();
                let diag_c = head[rc + (c - fc)];
                tail[c - fi] = (tail[c - fi] - s) / diag_c;
            }
            let row = &self.values[ri..ri + (i - fi)];
            let s: f64 = row.iter().map(|x| x * x).sum();
            let d = self.values[ri + (i - fi)] - s;
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite { pivot: p.perm[i], value: d });
            }
            self.values[ri + (i - fi)] = d.sqrt();
        }
        Ok(())
    }

    #[inline]
    fn diag(&self, p: &EnvelopePattern, i: usize) -> f64 {
        self.values[p.row_ptr[i + 1] - 1]
    }

    /// `ln det A = 2 Σ ln L_ii`.
    pub fn log_det(&self, p: &EnvelopePattern) -> f64 {
        2.0 * (0..p.n()).map(|i| self.diag(p, i).ln()).sum::<f64>()
    }

    /// Solves `L z = b` in place (permuted ordering), assuming `b[t] = 0` for
    /// `t < start`.
    pub fn forward_from(&self, p: &EnvelopePattern, b: &mut [f64], start: usize) {
        for i in start..p.n() {
            let fi = p.first[i].max(start);
            let r = p.row(i);
            let lrow = &self.values[r.start + (fi - p.first[i])..r.end - 1];
            let s: f64 = lrow.iter().zip(&b[fi..i]).map(|(x, y)| x * y).sum();
            b[i] = (b[i] - s) / self.values[r.end - 1];
        }
    }

    /// Solves `Lᵀ x = z` in place (permuted ordering).
    pub fn backward(&self, p: &EnvelopePattern, z: &mut [f64]) {
        for i in (0..p.n()).rev() {
            let r = p.row(i);
            let xi = z[i] / self.values[r.end - 1];
            z[i] = xi;
            let fi = p.first[i];
            for (t, l) in (fi..i).zip(&self.values[r.start..r.end - 1]) {
                z[t] -= l * xi;
            }
        }
    }

    /// Solves `A x = b` for `b` in original ordering.
    pub fn solve(&self, p: &EnvelopePattern, b: &[f64]) -> Vec<f64> {
        let mut z: Vec<f64> = p.perm.iter().map(|&old| b[old]).collect();
        self.forward_from(p, &mut z, 0);
        self.backward(p, &mut z);
        let mut x = vec![0.0; p.n()];
        for (i, &old) in p.perm.iter().enumerate() {
            x[old] = z[i];
        }
        x
    }

    /// `vᵀ A⁻¹ v` for `v = e_a − e_b` (original indices), using `scratch` as
    /// workspace of length `n`.
    pub fn difference_quad_form(
        &self,
        p: &EnvelopePattern,
        a: usize,
        b: usize,
        scratch: &mut [f64],
    ) -> f64 {
        let (pa, pb) = (p.inv[a], p.inv[b]);
        let start = pa.min(pb);
        scratch[start..].iter_mut().for_each(|x| *x = 0.0);
        scratch[pa] = 1.0;
        scratch[pb] = -1.0;
        self.forward_from(p, scratch, start);
        scratch[start..].iter().map(|x| x * x).sum()
    }

    /// Replaces `L` by the factor of `A + sign · scale · v vᵀ` with
    /// `v = e_a − e_b`. `(a, b)` must be a structural pair of the pattern.
    /// Fails (leaving the factor unusable) if a downdate loses definiteness.
    pub fn rank_one_difference(
        &mut self,
        p: &EnvelopePattern,
        a: usize,
        b: usize,
        scale: f64,
        downdate: bool,
        scratch: &mut [f64],
    ) -> Result<()> {
        let (pa, pb) = (p.inv[a], p.inv[b]);
        let start = pa.min(pb);
        let sign = if downdate { -1.0 } else { 1.0 };
        let s0 = scale.sqrt();
        scratch[start..].iter_mut().for_each(|x| *x = 0.0);
        scratch[pa] = s0;
        scratch[pb] = -s0;
        for c in start..p.n() {
            let wc = scratch[c];
            if wc == 0.0 {
                continue;
            }
            let dpos = p.row_ptr[c + 1] - 1;
            let ljj = self.values[dpos];
            let r2 = ljj * ljj + sign * wc * wc;
            if !(r2 > 0.0) {
                return Err(Error::NotPositiveDefinite { pivot: p.perm[c], value: r2 });
            }
            let r = r2.sqrt();
            let cc = r / ljj;
            let s = wc / ljj;
            self.values[dpos] = r;
            for &i in &p.col_rows[c] {
                let k = p.idx(i, c);
                let updated = (self.values[k] + sign * s * scratch[i]) / cc;
                self.values[k] = updated;
                scratch[i] = cc * scratch[i] - s * updated;
            }
        }
        Ok(())
    }
}
