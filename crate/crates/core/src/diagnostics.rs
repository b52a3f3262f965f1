//! Convergence statistics and posterior summaries over per-chain traces.
//!
//! `split_rhat` is the classic potential-scale-reduction factor over
//! half-chains. `rank_rhat` is the rank-normalized, folded variant; it is
//! reported next to the classic value and never replaces it.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::sampler::PosteriorDraws;

pub const DEFAULT_HDI_MASS: f64 = 0.94;
pub const DEFAULT_RHAT_THRESHOLD: f64 = 1.01;

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("need at least {needed} draws per chain, got {got}")]
    TooFewDraws { needed: usize, got: usize },
    #[error("no chains supplied")]
    NoChains,
    #[error("chains have unequal lengths")]
    RaggedChains,
    #[error("HDI mass must lie in (0, 1), got {0}")]
    BadMass(f64),
    #[error("HDI at mass {mass} needs at least {needed} draws, got {got}")]
    TooFewForHdi { mass: f64, needed: usize, got: usize },
    #[error("non-finite draw")]
    NonFinite,
    #[error("summary file: {0}")]
    Io(String),
}

/// R-hat plus a flag for zero within-sequence variance, in which case the
/// value is +∞.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rhat {
    pub value: f64,
    pub constant_chain: bool,
}

fn check_chains(chains: &[Vec<f64>]) -> Result<usize, DiagnosticsError> {
    let first = chains.first().ok_or(DiagnosticsError::NoChains)?;
    let n = first.len();
    if chains.iter().any(|c| c.len() != n) {
        return Err(DiagnosticsError::RaggedChains);
    }
    if n < 4 {
        return Err(DiagnosticsError::TooFewDraws { needed: 4, got: n });
    }
    if chains.iter().flatten().any(|v| !v.is_finite()) {
        return Err(DiagnosticsError::NonFinite);
    }
    Ok(n)
}

/// First and last ⌊N/2⌋ draws of every chain; the middle draw of an odd chain is dropped.
fn split_chains(chains: &[Vec<f64>]) -> Vec<&[f64]> {
    chains
        .iter()
        .flat_map(|c| {
            let half = c.len() / 2;
            [&c[..half], &c[c.len() - half..]]
        })
        .collect()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_var(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

fn rhat_of_sequences(seqs: &[&[f64]]) -> Rhat {
    let n = seqs[0].len() as f64;
    let means: Vec<f64> = seqs.iter().map(|s| mean(s)).collect();
    let w = mean(&seqs.iter().map(|s| sample_var(s)).collect::<Vec<_>>());
    let b_over_n = sample_var(&means);
    if w <= 0.0 {
        return Rhat {
            value: f64::INFINITY,
            constant_chain: true,
        };
    }
    let var_plus = (n - 1.0) / n * w + b_over_n;
    Rhat {
        value: (var_plus / w).sqrt(),
        constant_chain: false,
    }
}

/// sqrt(((N'−1)/N'·W + B/N') / W) over the 2M half-chains of length N'.
pub fn split_rhat(chains: &[Vec<f64>]) -> Result<Rhat, DiagnosticsError> {
    check_chains(chains)?;
    Ok(rhat_of_sequences(&split_chains(chains)))
}

/// Normal scores of pooled average ranks, reshaped back into chains.
pub fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = chains.first().map_or(0, Vec::len);
    let pooled: Vec<f64> = chains.iter().flatten().copied().collect();
    let s = pooled.len();
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&a, &b| pooled[a].total_cmp(&pooled[b]));
    let mut ranks = vec![0.0; s];
    let mut i = 0;
    while i < s {
        let mut j = i;
        while j + 1 < s && pooled[order[j + 1]] == pooled[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    let normal = Normal::standard();
    let z: Vec<f64> = ranks
        .iter()
        .map(|r| normal.inverse_cdf((r - 0.375) / (s as f64 + 0.25)))
        .collect();
    z.chunks(n.max(1)).map(<[f64]>::to_vec).collect()
}

/// Maximum of the rank-normalized bulk and folded split R-hat.
pub fn rank_rhat(chains: &[Vec<f64>]) -> Result<Rhat, DiagnosticsError> {
    check_chains(chains)?;
    let bulk = rhat_of_sequences(&split_chains(&rank_normalize(chains)));
    let median = {
        let mut all: Vec<f64> = chains.iter().flatten().copied().collect();
        all.sort_by(f64::total_cmp);
        let k = all.len();
        if k % 2 == 1 {
            all[k / 2]
        } else {
            0.5 * (all[k / 2 - 1] + all[k / 2])
        }
    };
    let folded: Vec<Vec<f64>> = chains
        .iter()
        .map(|c| c.iter().map(|v| (v - median).abs()).collect())
        .collect();
    let tail = rhat_of_sequences(&split_chains(&rank_normalize(&folded)));
    if is_constant(chains) {
        return Ok(Rhat {
            value: f64::INFINITY,
            constant_chain: true,
        });
    }
    Ok(Rhat {
        value: bulk.value.max(tail.value),
        constant_chain: false,
    })
}

fn is_constant(chains: &[Vec<f64>]) -> bool {
    split_chains(chains)
        .iter()
        .any(|s| s.iter().all(|v| *v == s[0]))
}

/// Biased autocovariance at `lag`.
fn autocov(x: &[f64], m: f64, lag: usize) -> f64 {
    let n = x.len();
    (0..n - lag).map(|i| (x[i] - m) * (x[i + lag] - m)).sum::<f64>() / n as f64
}

/// Geyer initial-monotone ESS over equal-length sequences.
fn ess_of_sequences(seqs: &[&[f64]]) -> f64 {
    let m = seqs.len();
    let n = seqs[0].len();
    let means: Vec<f64> = seqs.iter().map(|s| mean(s)).collect();
    let mean_acov = |lag: usize| -> f64 {
        seqs.iter()
            .zip(&means)
            .map(|(s, &mu)| autocov(s, mu, lag))
            .sum::<f64>()
            / m as f64
    };
    let acov0 = mean_acov(0);
    let mean_var = acov0 * n as f64 / (n as f64 - 1.0);
    let mut var_plus = mean_var * (n as f64 - 1.0) / n as f64;
    if m > 1 {
        var_plus += sample_var(&means);
    }
    let rho = |lag: usize| 1.0 - (mean_var - mean_acov(lag)) / var_plus;

    let mut rho_hat = vec![0.0; n];
    let mut even = 1.0;
    let mut odd = rho(1);
    rho_hat[0] = even;
    rho_hat[1] = odd;
    let mut t = 1;
    while t + 3 < n && even + odd > 0.0 {
        even = rho(t + 1);
        odd = rho(t + 2);
        if even + odd >= 0.0 {
            rho_hat[t + 1] = even;
            rho_hat[t + 2] = odd;
        }
        t += 2;
    }
    let max_t = t - 1;
    let max_t = max_t.saturating_sub(1);
    if even > 0.0 {
        rho_hat[max_t + 1] = even;
    }
    let mut t = 1;
    while t + 2 <= max_t {
        if rho_hat[t + 1] + rho_hat[t + 2] > rho_hat[t - 1] + rho_hat[t] {
            rho_hat[t + 1] = (rho_hat[t - 1] + rho_hat[t]) / 2.0;
            rho_hat[t + 2] = rho_hat[t + 1];
        }
        t += 2;
    }
    let total = (m * n) as f64;
    let tau = -1.0 + 2.0 * rho_hat[..=max_t].iter().sum::<f64>() + rho_hat[max_t + 1];
    let tau = tau.max(1.0 / total.log10());
    total / tau
}

/// Bulk ESS: rank-normalized split chains; `None` for constant chains.
pub fn ess_bulk(chains: &[Vec<f64>]) -> Result<Option<f64>, DiagnosticsError> {
    check_chains(chains)?;
    if is_constant(chains) {
        return Ok(None);
    }
    let z = rank_normalize(chains);
    Ok(Some(ess_of_sequences(&split_chains(&z))))
}

/// Narrowest interval holding ⌈mass·n⌉ draws; ties go to the lower start.
pub fn hdi(draws: &[f64], mass: f64) -> Result<(f64, f64), DiagnosticsError> {
    if !(mass > 0.0 && mass < 1.0) {
        return Err(DiagnosticsError::BadMass(mass));
    }
    let needed = (1.0 / (1.0 - mass) - 1e-9).ceil() as usize;
    if draws.len() < needed {
        return Err(DiagnosticsError::TooFewForHdi {
            mass,
            needed,
            got: draws.len(),
        });
    }
    if draws.iter().any(|v| v.is_nan()) {
        return Err(DiagnosticsError::NonFinite);
    }
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let k = ((mass * n as f64) - 1e-9).ceil() as usize;
    let span = k.max(1) - 1;
    let mut best = 0;
    let mut best_width = f64::INFINITY;
    for start in 0..n - span {
        let width = sorted[start + span] - sorted[start];
        if width < best_width {
            best_width = width;
            best = start;
        }
    }
    Ok((sorted[best], sorted[best + span]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub hdi_low: f64,
    pub hdi_high: f64,
    pub r_hat: f64,
    pub r_hat_rank: f64,
    pub ess_bulk: Option<f64>,
    pub constant_chain: bool,
    pub divergent_fraction: f64,
}

fn summarize_one(name: &str, chains: &[Vec<f64>], mass: f64, divergent_fraction: f64) -> Result<ParameterSummary, DiagnosticsError> {
    let pooled: Vec<f64> = chains.iter().flatten().copied().collect();
    let r = split_rhat(chains)?;
    let rr = rank_rhat(chains)?;
    let (lo, hi) = hdi(&pooled, mass)?;
    Ok(ParameterSummary {
        name: name.to_string(),
        mean: mean(&pooled),
        sd: sample_var(&pooled).sqrt(),
        hdi_low: lo,
        hdi_high: hi,
        r_hat: r.value,
        r_hat_rank: rr.value,
        ess_bulk: ess_bulk(chains)?,
        constant_chain: r.constant_chain,
        divergent_fraction,
    })
}

/// Summaries of every parameter in `draws`, in column order.
pub fn summarize(draws: &PosteriorDraws, mass: f64) -> Result<Vec<ParameterSummary>, DiagnosticsError> {
    if draws.chains.is_empty() {
        return Err(DiagnosticsError::NoChains);
    }
    let div = draws.divergent_fraction();
    (0..draws.names.len())
        .into_par_iter()
        .map(|i| summarize_one(&draws.names[i], &draws.parameter(i), mass, div))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Pass,
    Warn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceEntry {
    pub name: String,
    pub r_hat: f64,
    pub status: Status,
    /// Whether this parameter decides the overall status.
    pub gating: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub threshold: f64,
    pub overall: Status,
    pub entries: Vec<ConvergenceEntry>,
    pub divergent_fraction: f64,
    /// σ_γ R-hat as observed; informative only.
    pub sigma_gamma_r_hat: Option<f64>,
}

impl ConvergenceReport {
    pub fn warnings(&self) -> impl Iterator<Item = &ConvergenceEntry> {
        self.entries.iter().filter(|e| e.status == Status::Warn)
    }
}

/// The β sensitivities gate the verdict when present; otherwise every
/// parameter does. σ_γ never gates.
pub fn convergence_report(summaries: &[ParameterSummary], threshold: f64) -> ConvergenceReport {
    let has_beta = summaries.iter().any(|s| s.name.starts_with("beta_"));
    let entries: Vec<ConvergenceEntry> = summaries
        .iter()
        .map(|s| {
            let gating = if has_beta {
                s.name.starts_with("beta_")
            } else {
                s.name != "sigma_gamma"
            };
            let status = if s.r_hat <= threshold { Status::Pass } else { Status::Warn };
            ConvergenceEntry {
                name: s.name.clone(),
                r_hat: s.r_hat,
                status,
                gating,
            }
        })
        .collect();
    let overall = if entries.iter().any(|e| e.gating && e.status == Status::Warn) {
        Status::Warn
    } else {
        Status::Pass
    };
    ConvergenceReport {
        threshold,
        overall,
        entries,
        divergent_fraction: summaries.first().map_or(0.0, |s| s.divergent_fraction),
        sigma_gamma_r_hat: summaries.iter().find(|s| s.name == "sigma_gamma").map(|s| s.r_hat),
    }
}

const SUMMARY_HEADER: [&str; 9] = [
    "parameter",
    "mean",
    "sd",
    "hdi_3%",
    "hdi_97%",
    "r_hat",
    "ess_bulk",
    "divergent_fraction",
    "r_hat_rank",
];

pub fn write_summary_csv<W: Write>(out: W, summaries: &[ParameterSummary]) -> Result<(), DiagnosticsError> {
    let err = |e: csv::Error| DiagnosticsError::Io(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER).map_err(err)?;
    for s in summaries {
        w.write_record([
            s.name.clone(),
            format!("{}", s.mean),
            format!("{}", s.sd),
            format!("{}", s.hdi_low),
            format!("{}", s.hdi_high),
            format!("{}", s.r_hat),
            s.ess_bulk.map_or_else(String::new, |e| format!("{e}")),
            format!("{}", s.divergent_fraction),
            format!("{}", s.r_hat_rank),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| DiagnosticsError::Io(e.to_string()))
}

pub fn read_summary_csv<R: Read>(input: R) -> Result<Vec<ParameterSummary>, DiagnosticsError> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(|e| DiagnosticsError::Io(e.to_string()))?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DiagnosticsError::Io(format!("missing column {name}")))
    };
    let idx: Vec<usize> = SUMMARY_HEADER[..8].iter().map(|h| col(h)).collect::<Result<_, _>>()?;
    let rank_idx = col("r_hat_rank").ok();
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| DiagnosticsError::Io(e.to_string()))?;
        let num = |i: usize| {
            rec[i]
                .parse::<f64>()
                .map_err(|_| DiagnosticsError::Io(format!("bad number {:?}", &rec[i])))
        };
        let r_hat = num(idx[5])?;
        out.push(ParameterSummary {
            name: rec[idx[0]].to_string(),
            mean: num(idx[1])?,
            sd: num(idx[2])?,
            hdi_low: num(idx[3])?,
            hdi_high: num(idx[4])?,
            r_hat,
            r_hat_rank: match rank_idx {
                Some(i) => num(i)?,
                None => f64::NAN,
            },
            ess_bulk: if rec[idx[6]].is_empty() { None } else { Some(num(idx[6])?) },
            constant_chain: r_hat.is_infinite(),
            divergent_fraction: num(idx[7])?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn normals(seed: u64, chains: usize, n: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..chains)
            .map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect())
            .collect()
    }

    #[test]
    fn identical_chains_give_unit_rhat() {
        let c = normals(1, 1, 1000).remove(0);
        // identical halves as well, so B = 0 exactly
        let doubled: Vec<f64> = c.iter().chain(&c).copied().collect();
        let r = split_rhat(&[doubled.clone(), doubled]).unwrap();
        assert!((r.value - (999.0f64 / 1000.0).sqrt()).abs() < 1e-12);
        let r = split_rhat(&[c.clone(), c]).unwrap();
        assert!(r.value.is_finite());
    }

    #[test]
    fn step_chains_flag_zero_within_variance() {
        let c = vec![1.0, 1.0, 1.0, 1.0, 3.0, 3.0, 3.0, 3.0];
        let r = split_rhat(&[c.clone(), c.clone()]).unwrap();
        assert!(r.constant_chain);
        assert!(r.value.is_infinite());
        assert_eq!(ess_bulk(&[c.clone(), c]).unwrap(), None);
    }

    #[test]
    fn rejects_short_or_ragged_chains() {
        assert!(split_rhat(&[vec![1.0, 2.0, 3.0]]).is_err());
        assert!(split_rhat(&[vec![1.0; 5], vec![1.0; 6]]).is_err());
        assert!(split_rhat(&[]).is_err());
    }

    #[test]
    fn iid_ess_near_total() {
        let chains = normals(7, 4, 1000);
        let e = ess_bulk(&chains).unwrap().unwrap();
        assert!((3200.0..=4800.0).contains(&e), "ess {e}");
        let r = rank_rhat(&chains).unwrap();
        assert!(r.value < 1.01);
    }

    #[test]
    fn ar1_ess_matches_autocorrelation_time() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let phi: f64 = 0.9;
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|_| {
                let mut x = rng.sample::<f64, _>(StandardNormal) / (1.0 - phi * phi).sqrt();
                (0..5000)
                    .map(|_| {
                        x = phi * x + rng.sample::<f64, _>(StandardNormal);
                        x
                    })
                    .collect()
            })
            .collect();
        let expected = 20000.0 * (1.0 - phi) / (1.0 + phi);
        let e = ess_bulk(&chains).unwrap().unwrap();
        assert!(e > expected / 1.5 && e < expected * 1.5, "ess {e} vs {expected}");
    }

    #[test]
    fn hdi_on_uniform_grid() {
        let draws: Vec<f64> = (0..100).map(f64::from).collect();
        assert_eq!(hdi(&draws, 0.94).unwrap(), (0.0, 93.0));
    }

    #[test]
    fn hdi_of_constant_draws() {
        assert_eq!(hdi(&[2.5; 40], 0.94).unwrap(), (2.5, 2.5));
    }

    #[test]
    fn hdi_of_standard_normal() {
        let draws = normals(11, 1, 100_000).remove(0);
        let (lo, hi) = hdi(&draws, 0.94).unwrap();
        assert!((lo + 1.88).abs() < 0.05 && (hi - 1.88).abs() < 0.05, "({lo}, {hi})");
    }

    #[test]
    fn hdi_domain_errors() {
        assert!(matches!(hdi(&[1.0; 100], 1.0), Err(DiagnosticsError::BadMass(_))));
        assert!(matches!(hdi(&[1.0; 100], 0.0), Err(DiagnosticsError::BadMass(_))));
        assert!(matches!(hdi(&[1.0; 16], 0.94), Err(DiagnosticsError::TooFewForHdi { needed: 17, .. })));
        assert!(hdi(&[1.0; 17], 0.94).is_ok());
    }

    #[test]
    fn frozen_chain_warns() {
        let mut chains = normals(5, 4, 500);
        chains[3] = vec![4.0; 500];
        let summary = summarize_one("beta_nas", &chains, 0.94, 0.0).unwrap();
        let report = convergence_report(&[summary], 1.01);
        assert_eq!(report.overall, Status::Warn);

        let chains = normals(6, 4, 1000);
        let names = ["beta_weather", "sigma_gamma"];
        let s: Vec<_> = names
            .iter()
            .map(|n| summarize_one(n, &chains, 0.94, 0.0).unwrap())
            .collect();
        let report = convergence_report(&s, 1.01);
        assert_eq!(report.overall, Status::Pass);
        assert!(report.entries[0].gating && !report.entries[1].gating);
        assert!(report.sigma_gamma_r_hat.is_some());
    }

    #[test]
    fn summary_csv_round_trip() {
        let chains = normals(9, 2, 200);
        let s = vec![summarize_one("phi", &chains, 0.94, 0.01).unwrap()];
        let mut buf = Vec::new();
        write_summary_csv(&mut buf, &s).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("parameter,mean,sd,hdi_3%,hdi_97%,r_hat,ess_bulk,divergent_fraction"));
        assert_eq!(read_summary_csv(buf.as_slice()).unwrap(), s);
    }
}
