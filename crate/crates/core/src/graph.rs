//! Areal adjacency structure.
//!
//! The graph fixes the set of geographic borders on which the random
//! neighbourhood weights may live. Borders are stored once, as `(k, j)` with
//! `k < j`, in lexicographic order; every per-border vector in the crate is
//! indexed by this order.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One geographic border, `(k, j)` with `k < j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BorderId {
    pub k: usize,
    pub j: usize,
}

impl BorderId {
    /// Builds the canonical (ordered) id of an unordered pair.
    pub fn new(a: usize, b: usize) -> Self {
        if a <= b {
            BorderId { k: a, j: b }
        } else {
            BorderId { k: b, j: a }
        }
    }
}

/// Planar centroid, unitless coordinates.
pub type Point = [f64; 2];

#[derive(Debug, Clone, PartialEq)]
pub struct ArealGraph {
    n: usize,
    borders: Vec<BorderId>,
    /// Per area: `(neighbour, border index)`, sorted by neighbour.
    incident: Vec<Vec<(usize, usize)>>,
    centroids: Option<Vec<Point>>,
}

impl ArealGraph {
    /// Builds a graph from an undirected edge list. Duplicates and reversed
    /// duplicates collapse into one border.
    pub fn from_edge_list(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("graph needs at least one area".into()));
        }
        let mut borders = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            for index in [a, b] {
                if index >= n {
                    return Err(Error::IndexOutOfRange { index, n });
                }
            }
            if a == b {
                return Err(Error::SelfLoop(a));
            }
            borders.push(BorderId::new(a, b));
        }
        borders.sort_unstable();
        borders.dedup();

        let mut incident = vec![Vec::new(); n];
        for (idx, b) in borders.iter().enumerate() {
            incident[b.k].push((b.j, idx));
            incident[b.j].push((b.k, idx));
        }
        for list in &mut incident {
            list.sort_unstable();
        }
        Ok(ArealGraph {
            n,
            borders,
            incident,
            centroids: None,
        })
    }

    /// Rook-adjacency grid, row-major area numbering, centroids at `(col, row)`.
    pub fn lattice(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument(format!(
                "lattice dimensions must be positive, got {rows}x{cols}"
            )));
        }
        let id = |r: usize, c: usize| r * cols + c;
        let mut edges = Vec::with_capacity(rows * (cols - 1) + cols * (rows - 1));
        for r in 0..rows {
            for c in 0..cols {
                if c + 1 < cols {
                    edges.push((id(r, c), id(r, c + 1)));
                }
                if r + 1 < rows {
                    edges.push((id(r, c), id(r + 1, c)));
                }
            }
        }
        let centroids = (0..rows)
            .flat_map(|r| (0..cols).map(move |c| [c as f64, r as f64]))
            .collect();
        ArealGraph::from_edge_list(rows * cols, &edges)?.with_centroids(centroids)
    }

    pub fn with_centroids(mut self, centroids: Vec<Point>) -> Result<Self> {
        if centroids.len() != self.n {
            return Err(Error::LengthMismatch {
                what: "centroids",
                got: centroids.len(),
                expected: self.n,
            });
        }
        self.centroids = Some(centroids);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of borders `m`.
    pub fn border_count(&self) -> usize {
        self.borders.len()
    }

    /// All borders in lexicographic order.
    pub fn border_pairs(&self) -> &[BorderId] {
        &self.borders
    }

    pub fn border(&self, index: usize) -> BorderId {
        self.borders[index]
    }

    pub fn border_index(&self, k: usize, j: usize) -> Option<usize> {
        self.borders.binary_search(&BorderId::new(k, j)).ok()
    }

    /// `(neighbour, border index)` pairs of area `k`.
    pub fn incident(&self, k: usize) -> &[(usize, usize)] {
        &self.incident[k]
    }

    pub fn degree(&self, k: usize) -> usize {
        self.incident[k].len()
    }

    pub fn centroids(&self) -> Option<&[Point]> {
        self.centroids.as_deref()
    }

    /// Dense Euclidean distance matrix between centroids, row-major `n x n`.
    pub fn pairwise_distances(&self) -> Result<Vec<Vec<f64>>> {
        let pts = self.centroids.as_ref().ok_or(Error::MissingCentroids)?;
        let mut d = vec![vec![0.0; self.n]; self.n];
        for a in 0..self.n {
            for b in (a + 1)..self.n {
                let dist = (pts[a][0] - pts[b][0]).hypot(pts[a][1] - pts[b][1]);
                d[a][b] = dist;
                d[b][a] = dist;
            }
        }
        Ok(d)
    }

    /// Parses the plain-text adjacency format: first non-comment line `n`,
    /// then one `k j` pair per line. `#` starts a comment.
    pub fn parse_adjacency(text: &str) -> Result<Self> {
        let mut n = None;
        let mut edges = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let parse = |col: usize| -> Result<usize> {
                fields[col].parse::<usize>().map_err(|_| {
                    Error::parse(lineno + 1, col + 1, format!("expected index, got {:?}", fields[col]))
                })
            };
            match n {
                None => {
                    if fields.len() != 1 {
                        return Err(Error::parse(lineno + 1, 1, "first line must hold the area count"));
                    }
                    n = Some(parse(0)?);
                }
                Some(_) => {
                    if fields.len() != 2 {
                        return Err(Error::parse(
                            lineno + 1,
                            1,
                            format!("expected `k j`, got {} fields", fields.len()),
                        ));
                    }
                    edges.push((parse(0)?, parse(1)?));
                }
            }
        }
        let n = n.ok_or_else(|| Error::parse(1, 1, "empty adjacency file"))?;
        ArealGraph::from_edge_list(n, &edges)
    }

    pub fn to_adjacency_string(&self) -> String {
        let mut out = format!("{}\n", self.n);
        for b in &self.borders {
            let _ = writeln!(out, "{} {}", b.k, b.j);
        }
        out
    }
}
