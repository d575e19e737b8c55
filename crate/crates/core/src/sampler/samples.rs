//! Posterior draws on the natural parameter scale and their CSV form.

use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-chain sampler statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainStats {
    pub accept_rate: f64,
    pub step_size: f64,
    pub divergences: usize,
}

/// Draws `[chain][iteration][parameter]`: the non-latent parameters first
/// (natural scale), then the whitened latent values `v_1..v_M`.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorSamples {
    pub names: Vec<String>,
    /// Number of leading non-latent parameters.
    pub n_hyper: usize,
    pub draws: Vec<Vec<Vec<f64>>>,
    pub stats: Vec<ChainStats>,
}

/// Column names for `hyper` followed by `m` whitened latent values.
pub fn sample_names(hyper: &[String], m: usize) -> Vec<String> {
    hyper.iter().cloned().chain((1..=m).map(|i| format!("v_{i}"))).collect()
}

impl PosteriorSamples {
    pub fn n_chains(&self) -> usize {
        self.draws.len()
    }

    pub fn n_iter(&self) -> usize {
        self.draws.iter().map(Vec::len).min().unwrap_or(0)
    }

    pub fn n_latent(&self) -> usize {
        self.names.len() - self.n_hyper
    }

    pub fn hyper(&self, chain: usize, iter: usize) -> &[f64] {
        &self.draws[chain][iter][..self.n_hyper]
    }

    pub fn latent(&self, chain: usize, iter: usize) -> &[f64] {
        &self.draws[chain][iter][self.n_hyper..]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Draws of parameter `k`, one vector per chain.
    pub fn column(&self, k: usize) -> Vec<Vec<f64>> {
        self.draws
            .iter()
            .map(|chain| chain.iter().map(|d| d[k]).collect())
            .collect()
    }

    /// `count` (chain, iteration) pairs evenly strided over the pooled
    /// draws, chain by chain. All draws when `count` exceeds the total.
    pub fn thinned(&self, count: usize) -> Vec<(usize, usize)> {
        let n = self.n_iter();
        crate::stats::strided_indices(self.n_chains() * n, count)
            .into_iter()
            .map(|k| (k / n, k % n))
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(f);
        let mut header = vec!["chain".to_string(), "iteration".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for (c, chain) in self.draws.iter().enumerate() {
            for (i, d) in chain.iter().enumerate() {
                let mut row = vec![(c + 1).to_string(), (i + 1).to_string()];
                // `{:?}` keeps full precision so a reload is exact
                row.extend(d.iter().map(|v| format!("{v:?}")));
                w.write_record(&row)?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads draws written by [`write_csv`](Self::write_csv). Chain
    /// statistics are not part of the file and come back as NaN.
    pub fn read_csv(path: &Path, n_hyper: usize) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = csv::Reader::from_reader(f);
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let file = path.display().to_string();
        if header.len() < 2 + n_hyper || header[0] != "chain" || header[1] != "iteration" {
            return Err(Error::Parse {
                file,
                line: 1,
                message: "expected `chain,iteration,<parameters>` header".into(),
            });
        }
        let names = header[2..].to_vec();
        let mut draws: Vec<Vec<Vec<f64>>> = Vec::new();
        for (k, rec) in r.records().enumerate() {
            let rec = rec?;
            let line = k + 2;
            let bad = |m: &str| Error::Parse {
                file: file.clone(),
                line,
                message: m.to_string(),
            };
            let chain: usize = rec
                .get(0)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad("invalid chain"))?;
            if chain == 0 || chain > draws.len() + 1 {
                return Err(bad("chains must be numbered consecutively from 1"));
            }
            if chain > draws.len() {
                draws.push(Vec::new());
            }
            let row: Vec<f64> = rec
                .iter()
                .skip(2)
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad("invalid value"))?;
            if row.len() != names.len() {
                return Err(bad("wrong number of columns"));
            }
            draws[chain - 1].push(row);
        }
        let stats = draws
            .iter()
            .map(|_| ChainStats {
                accept_rate: f64::NAN,
                step_size: f64::NAN,
                divergences: 0,
            })
            .collect();
        Ok(PosteriorSamples {
            names,
            n_hyper,
            draws,
            stats,
        })
    }
}
