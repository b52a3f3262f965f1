//! Cross-epoch comparison, threshold scaling tables, and plot-ready exports.
//!
//! Files carry full precision; only the text rendering rounds (three decimals
//! for coefficients, two for percentages).

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::calendar::YearMonth;
use crate::diagnostics::{hdi, ParameterSummary, DEFAULT_HDI_MASS};
use crate::model::FACTORS;
use crate::sampler::PosteriorDraws;
use crate::special::logistic;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("summary {summary} lacks parameter {parameter}")]
    MissingParameter { summary: String, parameter: String },
    #[error("no draws for {0}")]
    MissingDraws(String),
    #[error("{0}")]
    Invalid(String),
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> ReportError {
    ReportError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Inverse logit.
pub fn prob_from_logit(alpha: f64) -> f64 {
    logistic(alpha)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochComparison {
    pub factor: String,
    pub beta_baseline: f64,
    pub beta_full: f64,
    pub delta: f64,
    /// exp(delta): the ratio of the two odds ratios.
    pub or_multiplier: f64,
}

impl EpochComparison {
    pub fn new(factor: &str, beta_baseline: f64, beta_full: f64) -> Self {
        let delta = beta_full - beta_baseline;
        Self {
            factor: factor.to_string(),
            beta_baseline,
            beta_full,
            delta,
            or_multiplier: delta.exp(),
        }
    }
}

fn mean_of(summaries: &[ParameterSummary], name: &str, label: &str) -> Result<f64, ReportError> {
    summaries
        .iter()
        .find(|s| s.name == name)
        .map(|s| s.mean)
        .ok_or_else(|| ReportError::MissingParameter {
            summary: label.to_string(),
            parameter: name.to_string(),
        })
}

/// One row per exogenous factor from the posterior means of `beta_<factor>`.
pub fn compare_epochs(
    baseline: &[ParameterSummary],
    full: &[ParameterSummary],
) -> Result<Vec<EpochComparison>, ReportError> {
    FACTORS
        .iter()
        .map(|f| {
            let name = format!("beta_{f}");
            Ok(EpochComparison::new(
                f,
                mean_of(baseline, &name, "baseline")?,
                mean_of(full, &name, "full")?,
            ))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterInterceptRow {
    pub cluster: usize,
    pub label: String,
    pub alpha: f64,
    pub probability: f64,
}

/// Posterior-mean intercepts `alpha[j]` with their implied delay probabilities.
pub fn cluster_intercepts(
    summaries: &[ParameterSummary],
    labels: &[String],
) -> Result<Vec<ClusterInterceptRow>, ReportError> {
    let mut rows = Vec::new();
    for j in 0.. {
        let name = format!("alpha[{j}]");
        let Some(s) = summaries.iter().find(|s| s.name == name) else {
            break;
        };
        rows.push(ClusterInterceptRow {
            cluster: j,
            label: labels.get(j).cloned().unwrap_or_else(|| format!("cluster {j}")),
            alpha: s.mean,
            probability: prob_from_logit(s.mean),
        });
    }
    if rows.is_empty() {
        return Err(ReportError::MissingParameter {
            summary: "full".into(),
            parameter: "alpha[0]".into(),
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingRow {
    pub factor: String,
    /// Posterior mean per threshold; `None` where that summary is missing.
    pub values: Vec<Option<f64>>,
    /// Strictly positive and strictly negative means both occur.
    pub sign_crossover: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingTable {
    pub thresholds: Vec<String>,
    pub rows: Vec<ScalingRow>,
    pub warnings: Vec<String>,
}

/// β means per threshold. Missing summaries leave gaps and add a warning.
pub fn scaling_table(inputs: &[(String, Option<Vec<ParameterSummary>>)]) -> ScalingTable {
    let mut warnings = Vec::new();
    for (label, s) in inputs {
        if s.is_none() {
            warnings.push(format!("threshold {label}: summary missing; column left empty"));
        }
    }
    let rows = FACTORS
        .iter()
        .map(|f| {
            let name = format!("beta_{f}");
            let values: Vec<Option<f64>> = inputs
                .iter()
                .map(|(label, s)| {
                    let s = s.as_ref()?;
                    let v = s.iter().find(|p| p.name == name).map(|p| p.mean);
                    if v.is_none() {
                        warnings.push(format!("threshold {label}: {name} missing"));
                    }
                    v
                })
                .collect();
            let present = values.iter().flatten();
            let sign_crossover = present.clone().any(|v| *v > 0.0) && present.clone().any(|v| *v < 0.0);
            ScalingRow {
                factor: f.to_string(),
                values,
                sign_crossover,
            }
        })
        .collect();
    ScalingTable {
        thresholds: inputs.iter().map(|(l, _)| l.clone()).collect(),
        rows,
        warnings,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForestRow {
    pub series: String,
    pub parameter: String,
    pub mean: f64,
    pub hdi_low: f64,
    pub hdi_high: f64,
}

/// Mean and HDI of every β per labelled summary.
pub fn forest_rows(series: &[(String, Vec<ParameterSummary>)]) -> Vec<ForestRow> {
    let mut rows = Vec::new();
    for (label, summaries) in series {
        for f in FACTORS {
            let name = format!("beta_{f}");
            if let Some(s) = summaries.iter().find(|s| s.name == name) {
                rows.push(ForestRow {
                    series: label.clone(),
                    parameter: name,
                    mean: s.mean,
                    hdi_low: s.hdi_low,
                    hdi_high: s.hdi_high,
                });
            }
        }
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRow {
    pub month_index: usize,
    /// Calendar month when the first modelled month is known.
    pub month: String,
    pub mean: f64,
    pub hdi_low: f64,
    pub hdi_high: f64,
}

/// γ_t posterior mean and HDI per month, taken from `gamma[t]` summaries.
pub fn gamma_trajectory(summaries: &[ParameterSummary], first_month: Option<YearMonth>) -> Vec<TrajectoryRow> {
    let mut rows = Vec::new();
    for t in 0.. {
        let name = format!("gamma[{t}]");
        let Some(s) = summaries.iter().find(|s| s.name == name) else {
            break;
        };
        let month = first_month
            .map(|m| YearMonth::from_index(m.offset() as usize + t).to_string())
            .unwrap_or_default();
        rows.push(TrajectoryRow {
            month_index: t,
            month,
            mean: s.mean,
            hdi_low: s.hdi_low,
            hdi_high: s.hdi_high,
        });
    }
    rows
}

/// Same quantity from raw draws, for callers without summaries.
pub fn gamma_trajectory_from_draws(
    draws: &PosteriorDraws,
    first_month: Option<YearMonth>,
) -> Result<Vec<TrajectoryRow>, ReportError> {
    let mut rows = Vec::new();
    for t in 0.. {
        let Some(i) = draws.param_index(&format!("gamma[{t}]")) else {
            break;
        };
        let pooled: Vec<f64> = draws.parameter(i).into_iter().flatten().collect();
        let (lo, hi) = hdi(&pooled, DEFAULT_HDI_MASS).map_err(|e| ReportError::Invalid(e.to_string()))?;
        let month = first_month
            .map(|m| YearMonth::from_index(m.offset() as usize + t).to_string())
            .unwrap_or_default();
        rows.push(TrajectoryRow {
            month_index: t,
            month,
            mean: pooled.iter().sum::<f64>() / pooled.len() as f64,
            hdi_low: lo,
            hdi_high: hi,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramBin {
    pub low: f64,
    pub high: f64,
    pub baseline: usize,
    pub full: usize,
}

/// Equal-width bins over the pooled range of both samples; the last bin is closed.
pub fn shared_histogram(baseline: &[f64], full: &[f64], bins: usize) -> Result<Vec<HistogramBin>, ReportError> {
    if bins == 0 {
        return Err(ReportError::Invalid("histogram needs at least one bin".into()));
    }
    let all = baseline.iter().chain(full);
    if all.clone().any(|v| !v.is_finite()) {
        return Err(ReportError::Invalid("non-finite draw in histogram input".into()));
    }
    let lo = all.clone().copied().fold(f64::INFINITY, f64::min);
    let hi = all.copied().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() {
        return Err(ReportError::MissingDraws("histogram".into()));
    }
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|b| HistogramBin {
            low: lo + b as f64 * width,
            high: if b + 1 == bins && hi > lo { hi } else { lo + (b + 1) as f64 * width },
            baseline: 0,
            full: 0,
        })
        .collect();
    let index = |v: f64| (((v - lo) / width) as usize).min(bins - 1);
    for &v in baseline {
        out[index(v)].baseline += 1;
    }
    for &v in full {
        out[index(v)].full += 1;
    }
    Ok(out)
}

pub fn pooled_draws(draws: &PosteriorDraws, name: &str) -> Result<Vec<f64>, ReportError> {
    let i = draws
        .param_index(name)
        .ok_or_else(|| ReportError::MissingDraws(name.to_string()))?;
    Ok(draws.parameter(i).into_iter().flatten().collect())
}

fn write_csv_rows<T: Serialize>(path: &Path, rows: &[T], header_if_empty: &[&str]) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    if rows.is_empty() {
        w.write_record(header_if_empty).map_err(|e| io_err(path, e))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Inputs for [`export_plot_data`]; absent parts are skipped.
#[derive(Debug, Default)]
pub struct PlotInputs<'a> {
    pub forest: Vec<(String, Vec<ParameterSummary>)>,
    pub trajectory: Option<(&'a [ParameterSummary], Option<YearMonth>)>,
    pub security_draws: Option<(&'a PosteriorDraws, &'a PosteriorDraws)>,
    pub bins: usize,
}

/// Writes `forest.csv`, `gamma_trajectory.csv`, and `security_density.csv`
/// under `dir`, returning the paths written.
///
/// Schemas:
/// - forest: series, parameter, mean, hdi_low, hdi_high
/// - gamma_trajectory: month_index, month, mean, hdi_low, hdi_high
/// - security_density: low, high, baseline, full (bin counts)
pub fn export_plot_data(dir: &Path, inputs: &PlotInputs) -> Result<Vec<PathBuf>, ReportError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut written = Vec::new();
    if !inputs.forest.is_empty() {
        let path = dir.join("forest.csv");
        write_csv_rows(&path, &forest_rows(&inputs.forest), &["series", "parameter", "mean", "hdi_low", "hdi_high"])?;
        written.push(path);
    }
    if let Some((summaries, first)) = inputs.trajectory {
        let path = dir.join("gamma_trajectory.csv");
        write_csv_rows(
            &path,
            &gamma_trajectory(summaries, first),
            &["month_index", "month", "mean", "hdi_low", "hdi_high"],
        )?;
        written.push(path);
    }
    if let Some((baseline, full)) = inputs.security_draws {
        let name = "beta_security";
        let bins = shared_histogram(&pooled_draws(baseline, name)?, &pooled_draws(full, name)?, inputs.bins.max(1))?;
        let path = dir.join("security_density.csv");
        write_csv_rows(&path, &bins, &["low", "high", "baseline", "full"])?;
        written.push(path);
    }
    Ok(written)
}

pub fn write_epoch_comparison(path: &Path, rows: &[EpochComparison]) -> Result<(), ReportError> {
    write_csv_rows(path, rows, &[])
}

pub fn write_cluster_intercepts(path: &Path, rows: &[ClusterInterceptRow]) -> Result<(), ReportError> {
    write_csv_rows(path, rows, &[])
}

pub fn write_scaling_table(path: &Path, table: &ScalingTable) -> Result<(), ReportError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let mut header = vec!["factor".to_string()];
    header.extend(table.thresholds.iter().cloned());
    header.push("sign_crossover".into());
    w.write_record(&header).map_err(|e| io_err(path, e))?;
    for row in &table.rows {
        let mut rec = vec![row.factor.clone()];
        rec.extend(row.values.iter().map(|v| v.map_or_else(String::new, |v| format!("{v}"))));
        rec.push(row.sign_crossover.to_string());
        w.write_record(&rec).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Rounded plain-text tables for reading at a terminal.
pub fn render_text(
    epochs: &[EpochComparison],
    intercepts: &[ClusterInterceptRow],
    scaling: Option<&ScalingTable>,
) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Cross-epoch shift");
    let _ = writeln!(out, "{:<10} {:>9} {:>9} {:>9} {:>10}", "factor", "baseline", "full", "delta", "OR mult.");
    for e in epochs {
        let _ = writeln!(
            out,
            "{:<10} {:>9.3} {:>9.3} {:>9.3} {:>9.2}%",
            e.factor,
            e.beta_baseline,
            e.beta_full,
            e.delta,
            100.0 * e.or_multiplier
        );
    }
    if !intercepts.is_empty() {
        let _ = writeln!(out, "\nCluster intercepts");
        for r in intercepts {
            let _ = writeln!(out, "{:<34} {:>7.3} {:>7.2}%", r.label, r.alpha, 100.0 * r.probability);
        }
    }
    if let Some(t) = scaling {
        let _ = writeln!(out, "\nSensitivity by volume threshold");
        let _ = write!(out, "{:<10}", "factor");
        for th in &t.thresholds {
            let _ = write!(out, " {th:>9}");
        }
        let _ = writeln!(out);
        for r in &t.rows {
            let _ = write!(out, "{:<10}", r.factor);
            for v in &r.values {
                match v {
                    Some(v) => {
                        let _ = write!(out, " {v:>9.3}");
                    }
                    None => {
                        let _ = write!(out, " {:>9}", "-");
                    }
                }
            }
            let _ = writeln!(out, "{}", if r.sign_crossover { "  sign crossover" } else { "" });
        }
        for w in &t.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> Result<(), ReportError> {
    let mut f = File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(name: &str, mean: f64) -> ParameterSummary {
        ParameterSummary {
            name: name.into(),
            mean,
            sd: 0.1,
            hdi_low: mean - 0.2,
            hdi_high: mean + 0.2,
            r_hat: 1.0,
            r_hat_rank: 1.0,
            ess_bulk: Some(1000.0),
            constant_chain: false,
            divergent_fraction: 0.0,
        }
    }

    fn betas(values: [f64; 4]) -> Vec<ParameterSummary> {
        FACTORS
            .iter()
            .zip(values)
            .map(|(f, v)| summary(&format!("beta_{f}"), v))
            .collect()
    }

    fn pct(x: f64) -> String {
        format!("{:.2}", 100.0 * x)
    }

    #[test]
    fn security_and_nas_shifts() {
        let rows = compare_epochs(&betas([0.362, 1.028, -1.307, 0.779]), &betas([0.281, 0.835, -0.130, 0.746])).unwrap();
        assert_eq!(format!("{:.3}", rows[2].delta), "1.177");
        assert_eq!(pct(rows[2].or_multiplier), "324.46");
        assert_eq!(format!("{:.3}", rows[1].delta), "-0.193");
        assert_eq!(pct(rows[1].or_multiplier), "82.45");
    }

    #[test]
    fn identical_epochs_are_neutral() {
        let b = betas([0.1, 0.2, 0.3, 0.4]);
        for r in compare_epochs(&b, &b).unwrap() {
            assert_eq!(r.delta, 0.0);
            assert_eq!(r.or_multiplier, 1.0);
        }
    }

    #[test]
    fn missing_factor_is_named() {
        let mut b = betas([0.1, 0.2, 0.3, 0.4]);
        b.remove(3);
        let err = compare_epochs(&b, &betas([0.0; 4])).unwrap_err();
        assert!(err.to_string().contains("beta_late"), "{err}");
    }

    #[test]
    fn logit_conversions() {
        assert_eq!(format!("{:.5}", prob_from_logit(-1.5)), "0.18243");
        assert_eq!(pct(prob_from_logit(-1.460)), "18.85");
        assert_eq!(prob_from_logit(0.0), 0.5);
    }

    #[test]
    fn scaling_flags_security_crossover() {
        let inputs = vec![
            ("n>=30".to_string(), Some(betas([0.206, 0.542, 0.118, 0.610]))),
            ("n>=50".to_string(), Some(betas([0.209, 0.582, 0.025, 0.632]))),
            ("n>=100".to_string(), Some(betas([0.281, 0.835, -0.130, 0.746]))),
        ];
        let t = scaling_table(&inputs);
        let flags: Vec<bool> = t.rows.iter().map(|r| r.sign_crossover).collect();
        assert_eq!(flags, vec![false, false, true, false]);
        let nas: Vec<f64> = t.rows[1].values.iter().map(|v| v.unwrap()).collect();
        assert!(nas.windows(2).all(|w| w[0] < w[1]));
        assert!(t.warnings.is_empty());
    }

    #[test]
    fn scaling_without_variation_or_with_gaps() {
        let same = betas([0.2, -0.3, 0.1, 0.4]);
        let inputs: Vec<_> = ["a", "b", "c"].iter().map(|l| (l.to_string(), Some(same.clone()))).collect();
        assert!(scaling_table(&inputs).rows.iter().all(|r| !r.sign_crossover));

        let inputs = vec![("a".to_string(), Some(same)), ("b".to_string(), None)];
        let t = scaling_table(&inputs);
        assert_eq!(t.warnings.len(), 1);
        assert!(t.rows.iter().all(|r| r.values[1].is_none()));
    }

    #[test]
    fn forest_cardinality() {
        let series: Vec<_> = ["30", "50", "100"].iter().map(|l| (l.to_string(), betas([0.1; 4]))).collect();
        assert_eq!(forest_rows(&series).len(), 12);
    }

    #[test]
    fn histogram_counts_all_draws() {
        let a: Vec<f64> = (0..500).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..300).map(|i| 0.5 + (i as f64 * 0.11).cos()).collect();
        let bins = shared_histogram(&a, &b, 25).unwrap();
        assert_eq!(bins.iter().map(|h| h.baseline).sum::<usize>(), 500);
        assert_eq!(bins.iter().map(|h| h.full).sum::<usize>(), 300);
        assert!(bins.windows(2).all(|w| w[0].high == w[1].low || (w[0].high - w[1].low).abs() < 1e-12));
        let flat = shared_histogram(&[1.0; 4], &[1.0; 2], 3).unwrap();
        assert_eq!(flat[0].baseline + flat[0].full, 6);
    }

    #[test]
    fn trajectory_rows_per_month() {
        let s: Vec<_> = (0..6).map(|t| summary(&format!("gamma[{t}]"), t as f64 * 0.1)).collect();
        let rows = gamma_trajectory(&s, Some(YearMonth { year: 2019, month: 11 }));
        assert_eq!(rows.len(), 6);
        assert_eq!(rows[2].month, "2020-01");
        assert!(rows.iter().all(|r| r.hdi_low <= r.hdi_high));
    }

    #[test]
    fn intercept_table_probabilities() {
        let s = vec![summary("alpha[0]", -1.460), summary("alpha[1]", -1.705), summary("alpha[2]", -1.373)];
        let rows = cluster_intercepts(&s, &[]).unwrap();
        let p: Vec<String> = rows.iter().map(|r| pct(r.probability)).collect();
        assert_eq!(p, vec!["18.85", "15.38", "20.21"]);
        assert!(cluster_intercepts(&[], &[]).is_err());
    }

    #[test]
    fn export_writes_documented_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = betas([0.1, 0.2, 0.3, 0.4]);
        s.extend((0..4).map(|t| summary(&format!("gamma[{t}]"), 0.0)));
        let inputs = PlotInputs {
            forest: vec![("full".into(), s.clone())],
            trajectory: Some((&s, None)),
            security_draws: None,
            bins: 20,
        };
        let files = export_plot_data(dir.path(), &inputs).unwrap();
        assert_eq!(files.len(), 2);
        let text = std::fs::read_to_string(dir.path().join("gamma_trajectory.csv")).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.starts_with("month_index,month,mean,hdi_low,hdi_high"));
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn multiplier_is_ratio_of_odds_ratios(a in -5.0f64..5.0, b in -5.0f64..5.0) {
                let e = EpochComparison::new("nas", a, b);
                prop_assert!((e.or_multiplier - b.exp() / a.exp()).abs() <= 1e-12 * e.or_multiplier.max(1.0));
                prop_assert_eq!(e.delta, b - a);
            }

            #[test]
            fn logistic_is_symmetric_and_increasing(x in -30.0f64..30.0, d in 1e-3f64..5.0) {
                prop_assert!((prob_from_logit(x) + prob_from_logit(-x) - 1.0).abs() < 1e-12);
                prop_assert!(prob_from_logit(x + d) > prob_from_logit(x));
            }
        }
    }
}
