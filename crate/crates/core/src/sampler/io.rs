//! Columnar CSV for retained draws plus a JSON sidecar with tuning results.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{SamplerConfig, SamplerError, SamplerRun, TransitionStats};

const STAT_COLUMNS: [&str; 6] = [
    "__divergent",
    "__tree_depth",
    "__n_leapfrog",
    "__energy",
    "__accept_stat",
    "__depth_saturated",
];

/// Constrained draws of each completed chain, in chain-index order.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    pub names: Vec<String>,
    pub chains: Vec<ChainDraws>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainDraws {
    pub chain: usize,
    /// draws × parameters
    pub values: Vec<Vec<f64>>,
    pub stats: Vec<TransitionStats>,
}

impl PosteriorDraws {
    pub fn from_run(run: &SamplerRun) -> Self {
        Self {
            names: run.names.clone(),
            chains: run
                .completed()
                .map(|c| ChainDraws {
                    chain: c.chain,
                    values: c.constrained.clone(),
                    stats: c.stats.clone(),
                })
                .collect(),
        }
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Per-chain traces of one parameter.
    pub fn parameter(&self, index: usize) -> Vec<Vec<f64>> {
        self.chains
            .iter()
            .map(|c| c.values.iter().map(|d| d[index]).collect())
            .collect()
    }

    pub fn total_draws(&self) -> usize {
        self.chains.iter().map(|c| c.values.len()).sum()
    }

    pub fn divergent_fraction(&self) -> f64 {
        let total = self.total_draws();
        if total == 0 {
            return 0.0;
        }
        let div = self
            .chains
            .iter()
            .flat_map(|c| &c.stats)
            .filter(|s| s.divergent)
            .count();
        div as f64 / total as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainMetadata {
    pub chain: usize,
    /// "ok" or the abort message.
    pub status: String,
    pub step_size: Option<f64>,
    pub inv_mass: Option<Vec<f64>>,
    pub divergences: usize,
    pub warmup_divergences: usize,
    pub depth_saturations: usize,
    pub mean_accept_stat: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawsMetadata {
    pub config: SamplerConfig,
    pub parameters: Vec<String>,
    pub chains: Vec<ChainMetadata>,
}

impl DrawsMetadata {
    pub fn from_run(run: &SamplerRun, config: &SamplerConfig) -> Self {
        let chains = run
            .chains
            .iter()
            .enumerate()
            .map(|(i, c)| match c {
                Ok(c) => ChainMetadata {
                    chain: c.chain,
                    status: "ok".into(),
                    step_size: Some(c.step_size),
                    inv_mass: Some(c.inv_mass.clone()),
                    divergences: c.divergences(),
                    warmup_divergences: c.warmup_divergences,
                    depth_saturations: c.stats.iter().filter(|s| s.depth_saturated).count(),
                    mean_accept_stat: Some(c.mean_accept_stat()),
                },
                Err(e) => ChainMetadata {
                    chain: i,
                    status: e.to_string(),
                    step_size: None,
                    inv_mass: None,
                    divergences: 0,
                    warmup_divergences: 0,
                    depth_saturations: 0,
                    mean_accept_stat: None,
                },
            })
            .collect();
        Self {
            config: config.clone(),
            parameters: run.names.clone(),
            chains,
        }
    }
}

pub fn metadata_path(draws_path: &Path) -> PathBuf {
    let mut s = draws_path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> SamplerError {
    SamplerError::Io(format!("{}: {e}", path.display()))
}

/// Writes the draws CSV and its `<path>.meta.json` sidecar.
pub fn write_draws(path: &Path, run: &SamplerRun, config: &SamplerConfig) -> Result<(), SamplerError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let mut header = vec!["chain".to_string(), "iteration".to_string()];
    header.extend(run.names.iter().cloned());
    header.extend(STAT_COLUMNS.iter().map(|s| s.to_string()));
    w.write_record(&header).map_err(|e| io_err(path, e))?;
    for chain in run.completed() {
        for (i, (values, s)) in chain.constrained.iter().zip(&chain.stats).enumerate() {
            let mut row = vec![chain.chain.to_string(), i.to_string()];
            row.extend(values.iter().map(|v| format!("{v}")));
            row.extend([
                u8::from(s.divergent).to_string(),
                s.tree_depth.to_string(),
                s.n_leapfrog.to_string(),
                format!("{}", s.energy),
                format!("{}", s.accept_stat),
                u8::from(s.depth_saturated).to_string(),
            ]);
            w.write_record(&row).map_err(|e| io_err(path, e))?;
        }
    }
    w.flush().map_err(|e| io_err(path, e))?;

    let meta_path = metadata_path(path);
    let meta = DrawsMetadata::from_run(run, config);
    let mut f = BufWriter::new(File::create(&meta_path).map_err(|e| io_err(&meta_path, e))?);
    serde_json::to_writer_pretty(&mut f, &meta).map_err(|e| io_err(&meta_path, e))?;
    f.write_all(b"\n").map_err(|e| io_err(&meta_path, e))?;
    f.flush().map_err(|e| io_err(&meta_path, e))
}

/// Reads a draws CSV; the sidecar is not required.
pub fn read_draws(path: &Path) -> Result<PosteriorDraws, SamplerError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let header: Vec<String> = r.headers().map_err(|e| io_err(path, e))?.iter().map(String::from).collect();
    if header.len() < 2 + STAT_COLUMNS.len() || header[0] != "chain" || header[1] != "iteration" {
        return Err(io_err(path, "expected chain, iteration, parameters, and sampler statistics columns"));
    }
    let n_params = header.len() - 2 - STAT_COLUMNS.len();
    if header[2 + n_params..] != STAT_COLUMNS {
        return Err(io_err(path, "missing sampler statistics columns"));
    }
    let names = header[2..2 + n_params].to_vec();
    let mut chains: Vec<ChainDraws> = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| io_err(path, e))?;
        let bad = |col: usize| io_err(path, format!("row {}: bad value in column {}", line + 2, header[col]));
        let num = |col: usize| rec[col].parse::<f64>().map_err(|_| bad(col));
        let int = |col: usize| rec[col].parse::<u32>().map_err(|_| bad(col));
        let chain: usize = rec[0].parse().map_err(|_| bad(0))?;
        let values = (2..2 + n_params).map(num).collect::<Result<Vec<_>, _>>()?;
        let s = 2 + n_params;
        let stats = TransitionStats {
            divergent: int(s)? != 0,
            tree_depth: int(s + 1)?,
            n_leapfrog: int(s + 2)?,
            energy: num(s + 3)?,
            accept_stat: num(s + 4)?,
            depth_saturated: int(s + 5)? != 0,
        };
        match chains.last_mut() {
            Some(c) if c.chain == chain => {
                c.values.push(values);
                c.stats.push(stats);
            }
            _ => {
                if chains.iter().any(|c| c.chain == chain) {
                    return Err(io_err(path, format!("rows of chain {chain} are not contiguous")));
                }
                chains.push(ChainDraws {
                    chain,
                    values: vec![values],
                    stats: vec![stats],
                });
            }
        }
    }
    Ok(PosteriorDraws { names, chains })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::{run_chains, LogDensity};

    struct Iso;

    impl LogDensity for Iso {
        fn dim(&self) -> usize {
            2
        }
        fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
            grad[0] = -x[0];
            grad[1] = -x[1];
            -0.5 * (x[0] * x[0] + x[1] * x[1])
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let config = SamplerConfig {
            chains: 2,
            warmup: 150,
            draws: 50,
            seed: 9,
            ..SamplerConfig::default()
        };
        let run = run_chains(&Iso, &config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("draws.csv");
        write_draws(&path, &run, &config).unwrap();
        let back = read_draws(&path).unwrap();
        assert_eq!(back, PosteriorDraws::from_run(&run));
        let meta: DrawsMetadata =
            serde_json::from_reader(File::open(metadata_path(&path)).unwrap()).unwrap();
        assert_eq!(meta.chains.len(), 2);
        assert_eq!(meta.chains[1].status, "ok");
    }
}
