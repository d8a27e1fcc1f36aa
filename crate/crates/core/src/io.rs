//! Plain-text data formats: the counts table `area,y,e[,x1,...]` and dumps of
//! simulated replicates.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::ArealGraph;
use crate::sim::ReplicateData;

/// Parsed counts file. Areas are numbered `0..n` in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct CountsTable {
    pub y: Vec<u64>,
    pub e: Vec<f64>,
    /// One row per area; empty when the file has no covariate columns.
    pub x: Vec<Vec<f64>>,
    pub covariate_names: Vec<String>,
}

impl CountsTable {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn has_covariates(&self) -> bool {
        !self.covariate_names.is_empty()
    }
}

/// Parses `area,y,e[,x1,...]` CSV text. Blank lines are skipped.
pub fn parse_counts(text: &str) -> Result<CountsTable> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::parse(1, 1, "empty counts file"))?;
    let names: Vec<&str> = header.split(',').map(str::trim).collect();
    if names.len() < 3 || names[..3] != ["area", "y", "e"] {
        return Err(Error::parse(1, 1, "header must start with `area,y,e`"));
    }
    let covariate_names: Vec<String> = names[3..].iter().map(|s| s.to_string()).collect();
    let width = names.len();
    let mut table = CountsTable {
        y: Vec::new(),
        e: Vec::new(),
        x: Vec::new(),
        covariate_names,
    };
    for (i, raw) in lines {
        let line = i + 1;
        let cells: Vec<&str> = raw.split(',').map(str::trim).collect();
        if cells.len() != width {
            return Err(Error::parse(line, 1, format!("expected {width} fields, got {}", cells.len())));
        }
        let area: usize = cells[0]
            .parse()
            .map_err(|_| Error::parse(line, 1, format!("expected area index, got {:?}", cells[0])))?;
        if area != table.y.len() {
            return Err(Error::parse(line, 1, format!("expected area {}, got {area}", table.y.len())));
        }
        let y: u64 = cells[1]
            .parse()
            .map_err(|_| Error::parse(line, 2, format!("expected non-negative integer count, got {:?}", cells[1])))?;
        let e: f64 = cells[2]
            .parse()
            .map_err(|_| Error::parse(line, 3, format!("expected number, got {:?}", cells[2])))?;
        if !(e > 0.0 && e.is_finite()) {
            return Err(Error::parse(line, 3, format!("expected count must be positive, got {e}")));
        }
        let mut row = Vec::with_capacity(width - 3);
        for (c, cell) in cells[3..].iter().enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| Error::parse(line, c + 4, format!("expected number, got {cell:?}")))?;
            if !v.is_finite() {
                return Err(Error::parse(line, c + 4, "covariate must be finite"));
            }
            row.push(v);
        }
        table.y.push(y);
        table.e.push(e);
        if !row.is_empty() {
            table.x.push(row);
        }
    }
    if table.y.is_empty() {
        return Err(Error::parse(2, 1, "no data rows"));
    }
    Ok(table)
}

pub fn write_counts(y: &[u64], e: &[f64], x: &[Vec<f64>], names: &[String]) -> String {
    let mut out = String::from("area,y,e");
    for n in names {
        out.push(',');
        out.push_str(n);
    }
    out.push('\n');
    for k in 0..y.len() {
        let _ = write!(out, "{k},{},{}", y[k], e[k]);
        if let Some(row) = x.get(k) {
            for v in row {
                let _ = write!(out, ",{v}");
            }
        }
        out.push('\n');
    }
    out
}

/// Column means and standard deviations used to standardise covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub names: Vec<String>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

/// Rescales every covariate column to mean 0 and sample sd 1.
pub fn standardize(x: &[Vec<f64>], names: &[String]) -> Result<(Vec<Vec<f64>>, Standardization)> {
    let p = names.len();
    let n = x.len();
    if p > 0 && n < 2 {
        return Err(Error::InvalidArgument("standardising needs at least two areas".into()));
    }
    let mut means = vec![0.0; p];
    let mut sds = vec![0.0; p];
    for c in 0..p {
        let col: Vec<f64> = x.iter().map(|r| r[c]).collect();
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        if !(var > 0.0) {
            return Err(Error::Degenerate(format!("covariate {} is constant", names[c])));
        }
        means[c] = mean;
        sds[c] = var.sqrt();
    }
    let scaled = x
        .iter()
        .map(|r| r.iter().enumerate().map(|(c, v)| (v - means[c]) / sds[c]).collect())
        .collect();
    Ok((
        scaled,
        Standardization {
            names: names.to_vec(),
            means,
            sds,
        },
    ))
}

/// Files describing one replicate: both count tables, the true effects and
/// the true boundary set.
pub fn replicate_files(data: &ReplicateData, g: &ArealGraph) -> Vec<(String, String)> {
    let names = vec!["x1".to_string()];
    let rows = data.covariate_rows();
    let mut truth = String::from("area,phi,phi_star\n");
    for k in 0..data.y.len() {
        let _ = writeln!(truth, "{k},{},{}", data.phi_true[k], data.phi_star_true[k]);
    }
    let mut borders = String::from("k,j,boundary\n");
    for (id, &b) in g.border_pairs().iter().zip(&data.boundaries) {
        let _ = writeln!(borders, "{},{},{}", id.k, id.j, u8::from(b));
    }
    vec![
        ("counts.csv".into(), write_counts(&data.y, &data.e, &rows, &names)),
        ("counts_star.csv".into(), write_counts(&data.y_star, &data.e, &rows, &names)),
        ("effects.csv".into(), truth),
        ("boundaries.csv".into(), borders),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_round_trip() {
        let text = "area,y,e,x1,x2\n0,3,2.5,0.1,7\n1,0,1,-2,8\n\n2,11,4.25,0,9\n";
        let t = parse_counts(text).unwrap();
        assert_eq!(t.y, vec![3, 0, 11]);
        assert_eq!(t.e, vec![2.5, 1.0, 4.25]);
        assert_eq!(t.x[1], vec![-2.0, 8.0]);
        assert_eq!(t.covariate_names, vec!["x1", "x2"]);
        let again = parse_counts(&write_counts(&t.y, &t.e, &t.x, &t.covariate_names)).unwrap();
        assert_eq!(again, t);
    }

    #[test]
    fn counts_without_covariates() {
        let t = parse_counts("area,y,e\n0,1,1\n1,2,1\n").unwrap();
        assert!(!t.has_covariates());
        assert!(t.x.is_empty());
    }

    #[test]
    fn counts_errors_carry_positions() {
        let cases = [
            ("", 1, 1),
            ("id,y,e\n0,1,1\n", 1, 1),
            ("area,y,e\n0,1,1\n2,1,1\n", 3, 1),
            ("area,y,e\n0,-1,1\n", 2, 2),
            ("area,y,e\n0,1,0\n", 2, 3),
            ("area,y,e,x\n0,1,1,abc\n", 2, 4),
            ("area,y,e\n0,1\n", 2, 1),
        ];
        for (text, line, column) in cases {
            match parse_counts(text) {
                Err(Error::Parse { line: l, column: c, .. }) => assert_eq!((l, c), (line, column), "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn standardised_columns() {
        let x = vec![vec![1.0, 10.0], vec![2.0, 10.5], vec![3.0, 12.0], vec![6.0, 9.0]];
        let names = vec!["a".to_string(), "b".to_string()];
        let (s, info) = standardize(&x, &names).unwrap();
        for c in 0..2 {
            let col: Vec<f64> = s.iter().map(|r| r[c]).collect();
            let mean = col.iter().sum::<f64>() / 4.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0;
            assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        }
        assert_eq!(info.means[0], 3.0);
        assert!(standardize(&[vec![1.0], vec![1.0]], &["c".to_string()]).is_err());
    }
}
