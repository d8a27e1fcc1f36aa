use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmrf::EdgeState;
use crate::graph::ArealGraph;

/// Acceptance rates over the kept iterations.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceSummary {
    pub beta: Vec<f64>,
    pub phi_mean: f64,
    pub phi_min: f64,
    /// NaN when ρ was not sampled.
    pub rho: f64,
}

/// Retained draws of one chain, one row per stored iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleStore {
    pub chain_id: usize,
    pub seed: u64,
    pub beta: Vec<Vec<f64>>,
    pub tau2: Vec<f64>,
    pub rho: Vec<f64>,
    pub phi: Vec<Vec<f64>>,
    pub risk: Vec<Vec<f64>>,
    pub w: Vec<Vec<bool>>,
    pub deviance: Vec<f64>,
    pub acceptance: AcceptanceSummary,
    /// Number of borders, i.e. the width of every row of `w`.
    pub borders: usize,
}

impl SampleStore {
    pub(crate) fn with_capacity(chain_id: usize, seed: u64, borders: usize, draws: usize) -> Self {
        SampleStore {
            chain_id,
            seed,
            beta: Vec::with_capacity(draws),
            tau2: Vec::with_capacity(draws),
            rho: Vec::with_capacity(draws),
            phi: Vec::with_capacity(draws),
            risk: Vec::with_capacity(draws),
            w: Vec::with_capacity(draws),
            deviance: Vec::with_capacity(draws),
            acceptance: AcceptanceSummary::default(),
            borders,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn push(
        &mut self,
        beta: &[f64],
        tau2: f64,
        rho: f64,
        phi: &[f64],
        risk: Vec<f64>,
        w: &EdgeState,
        deviance: f64,
    ) {
        self.beta.push(beta.to_vec());
        self.tau2.push(tau2);
        self.rho.push(rho);
        self.phi.push(phi.to_vec());
        self.risk.push(risk);
        self.w.push(w.bits().to_vec());
        self.deviance.push(deviance);
    }

    pub fn len(&self) -> usize {
        self.deviance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deviance.is_empty()
    }

    pub fn border_count(&self) -> usize {
        self.borders
    }

    /// Posterior mean of every fitted risk.
    pub fn mean_risk(&self) -> Vec<f64> {
        column_means(&self.risk)
    }

    pub fn mean_beta(&self) -> Vec<f64> {
        column_means(&self.beta)
    }

    pub fn mean_phi(&self) -> Vec<f64> {
        column_means(&self.phi)
    }

    /// Posterior `P(w_b = 0)` for each border.
    pub fn prob_w_zero(&self) -> Vec<f64> {
        let mut zeros = vec![0usize; self.borders];
        for row in &self.w {
            for (z, &on) in zeros.iter_mut().zip(row) {
                if !on {
                    *z += 1;
                }
            }
        }
        let n = self.len().max(1) as f64;
        zeros.into_iter().map(|z| z as f64 / n).collect()
    }

    /// Concatenates the draws of several chains into one store.
    pub fn pool(stores: &[SampleStore]) -> Result<SampleStore> {
        let first = stores
            .first()
            .ok_or_else(|| Error::InvalidArgument("no chains to pool".into()))?;
        let total = stores.iter().map(SampleStore::len).sum();
        let mut out = SampleStore::with_capacity(first.chain_id, first.seed, first.borders, total);
        for s in stores {
            if s.borders != first.borders || s.beta.first().map(Vec::len) != first.beta.first().map(Vec::len) {
                return Err(Error::InvalidArgument("chains disagree in shape".into()));
            }
            out.beta.extend_from_slice(&s.beta);
            out.tau2.extend_from_slice(&s.tau2);
            out.rho.extend_from_slice(&s.rho);
            out.phi.extend_from_slice(&s.phi);
            out.risk.extend_from_slice(&s.risk);
            out.w.extend_from_slice(&s.w);
            out.deviance.extend_from_slice(&s.deviance);
        }
        Ok(out)
    }

    /// Writes `beta.csv`, `phi.csv`, `w.csv` and `scalars.csv` into `dir`.
    /// Returns the file names written.
    pub fn write_csv(&self, dir: &Path, g: &ArealGraph) -> Result<Vec<String>> {
        fs::create_dir_all(dir)?;
        let p = self.beta.first().map_or(0, Vec::len);
        let n = g.n();

        let mut beta = (0..p).map(|c| format!("beta{c}")).collect::<Vec<_>>().join(",");
        beta.push('\n');
        for row in &self.beta {
            push_row(&mut beta, row.iter().map(|v| v.to_string()));
        }

        let mut phi = (0..n).map(|k| format!("phi{k}")).collect::<Vec<_>>().join(",");
        phi.push('\n');
        for row in &self.phi {
            push_row(&mut phi, row.iter().map(|v| v.to_string()));
        }

        let mut w = g
            .border_pairs()
            .iter()
            .map(|b| format!("w{}_{}", b.k, b.j))
            .collect::<Vec<_>>()
            .join(",");
        w.push('\n');
        for row in &self.w {
            push_row(&mut w, row.iter().map(|&on| u8::from(on).to_string()));
        }

        let mut scalars = String::from("tau2,rho,deviance\n");
        for i in 0..self.len() {
            let _ = writeln!(scalars, "{},{},{}", self.tau2[i], self.rho[i], self.deviance[i]);
        }

        let files = [("beta.csv", beta), ("phi.csv", phi), ("w.csv", w), ("scalars.csv", scalars)];
        let mut names = Vec::new();
        for (name, body) in files {
            fs::write(dir.join(name), body)?;
            names.push(name.to_string());
        }
        Ok(names)
    }
}

fn push_row(out: &mut String, cells: impl Iterator<Item = String>) {
    let row: Vec<String> = cells.collect();
    out.push_str(&row.join(","));
    out.push('\n');
}

fn column_means(rows: &[Vec<f64>]) -> Vec<f64> {
    let Some(first) = rows.first() else {
        return Vec::new();
    };
    let mut acc = vec![0.0; first.len()];
    for row in rows {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
    let n = rows.len() as f64;
    acc.into_iter().map(|a| a / n).collect()
}
