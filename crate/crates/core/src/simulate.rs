//! Synthetic panels drawn forward from the hierarchical model.
//!
//! The raw cause counts come from a gamma-Poisson fixture process; they are
//! not part of the fitted model. Each record's delayed flights are split
//! across the five causes by a Dirichlet draw, so recorded cause counts sum
//! to `arr_del15` but differ from the counts that generated `p_i`. The
//! returned [`DesignMatrix`] carries the generating counts.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Binomial, Cauchy, Distribution, Exp, Gamma, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calendar::{MonthRange, YearMonth, STUDY_MONTHS};
use crate::cluster::ClusterAssignment;
use crate::ingest::ObservationRecord;
use crate::model::{linear_predictor, DesignMatrix, ModelError, ParamLayout, ParameterVector, Priors, ETA_CLAMP};
use crate::special::logistic;

#[derive(Debug, Error)]
pub enum SimulateError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("io error: {0}")]
    Io(String),
}

/// Gamma-Poisson counts with the given mean; smaller `shape` means more dispersion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountProcess {
    pub mean: f64,
    pub shape: f64,
}

impl CountProcess {
    fn validate(&self, name: &str) -> Result<(), SimulateError> {
        if !(self.mean >= 0.0 && self.mean.is_finite() && self.shape > 0.0 && self.shape.is_finite()) {
            return Err(SimulateError::Config(format!(
                "{name}: need finite mean >= 0 and shape > 0"
            )));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.mean == 0.0 {
            return 0.0;
        }
        let rate = Gamma::new(self.shape, self.mean / self.shape)
            .expect("validated gamma parameters")
            .sample(rng);
        if rate <= 0.0 {
            return 0.0;
        }
        Poisson::new(rate).map_or(0.0, |p| p.sample(rng))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CauseProcesses {
    pub weather: CountProcess,
    pub nas: CountProcess,
    pub security: CountProcess,
    pub late: CountProcess,
}

impl Default for CauseProcesses {
    fn default() -> Self {
        Self {
            weather: CountProcess { mean: 0.4, shape: 1.0 },
            nas: CountProcess { mean: 1.5, shape: 2.0 },
            security: CountProcess { mean: 0.05, shape: 0.5 },
            late: CountProcess { mean: 1.2, shape: 2.0 },
        }
    }
}

impl CauseProcesses {
    fn as_array(&self) -> [CountProcess; 4] {
        [self.weather, self.nas, self.security, self.late]
    }
}

/// Dirichlet split of delayed flights across carrier, weather, NAS, security,
/// and late-aircraft causes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Apportionment {
    /// Expected shares in cause order; normalized before use.
    pub shares: [f64; 5],
    /// Dirichlet concentration; larger values keep draws near `shares`.
    pub concentration: f64,
}

impl Default for Apportionment {
    fn default() -> Self {
        Self {
            shares: [0.32, 0.04, 0.30, 0.0025, 0.3375],
            concentration: 50.0,
        }
    }
}

/// Generating parameters. Omitted `alpha_raw` / `gamma_raw` are drawn from N(0, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Truth {
    pub mu_alpha: f64,
    pub sigma_alpha: f64,
    pub alpha_raw: Option<Vec<f64>>,
    pub beta: [f64; 4],
    pub gamma_raw: Option<Vec<f64>>,
    pub sigma_gamma: f64,
    pub shock_factor: f64,
    pub delta_covid: f64,
    pub phi: f64,
}

impl Default for Truth {
    fn default() -> Self {
        Self {
            mu_alpha: -1.5,
            sigma_alpha: 0.2,
            alpha_raw: None,
            beta: [0.3, 0.8, -0.1, 0.7],
            gamma_raw: None,
            sigma_gamma: 0.236,
            shock_factor: 2.24,
            delta_covid: -0.267,
            phi: 35.0,
        }
    }
}

/// Scenario file. Defaults give the recovery scenario: 3 clusters, 48 months
/// from 2018-01, 2000 records, COVID window 2020-01..2021-12.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub clusters: usize,
    pub months: usize,
    pub first_month: YearMonth,
    pub n_records: usize,
    pub airports: usize,
    pub carriers: usize,
    pub covid_enabled: bool,
    pub covid_start: YearMonth,
    pub covid_end: YearMonth,
    pub seed: u64,
    pub flights: CountProcess,
    pub causes: CauseProcesses,
    pub apportionment: Apportionment,
    pub truth: Truth,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            clusters: 3,
            months: 48,
            first_month: YearMonth { year: 2018, month: 1 },
            n_records: 2000,
            airports: 12,
            carriers: 4,
            covid_enabled: true,
            covid_start: YearMonth { year: 2020, month: 1 },
            covid_end: YearMonth { year: 2021, month: 12 },
            seed: 0,
            flights: CountProcess { mean: 150.0, shape: 4.0 },
            causes: CauseProcesses::default(),
            apportionment: Apportionment::default(),
            truth: Truth::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, SimulateError> {
        let cfg: Self = toml::from_str(text).map_err(|e| SimulateError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimulateError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SimulateError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn covid_window(&self) -> Result<Option<MonthRange>, SimulateError> {
        if !self.covid_enabled {
            return Ok(None);
        }
        MonthRange::new(self.covid_start, self.covid_end)
            .map(Some)
            .map_err(|e| SimulateError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), SimulateError> {
        let fail = |m: String| Err(SimulateError::Config(m));
        if self.clusters == 0 || self.months == 0 || self.n_records == 0 || self.carriers == 0 {
            return fail("clusters, months, n_records, and carriers must be positive".into());
        }
        if self.airports < self.clusters {
            return fail(format!("{} airports cannot fill {} clusters", self.airports, self.clusters));
        }
        if self.airports > 26 * 26 || self.carriers > 26 {
            return fail("at most 676 airports and 26 carriers".into());
        }
        let capacity = self.airports * self.carriers * self.months;
        if self.n_records > capacity {
            return fail(format!(
                "{} records exceed the {capacity} distinct airport-carrier-months",
                self.n_records
            ));
        }
        let first = self
            .first_month
            .month_index()
            .map_err(|e| SimulateError::Config(e.to_string()))?;
        if first + self.months > STUDY_MONTHS {
            return fail("simulated months run past the study window".into());
        }
        self.covid_window()?;
        self.flights.validate("flights")?;
        for (p, name) in self.causes.as_array().iter().zip(crate::model::FACTORS) {
            p.validate(name)?;
        }
        let a = &self.apportionment;
        if a.shares.iter().any(|s| !(*s >= 0.0 && s.is_finite())) || a.shares.iter().sum::<f64>() <= 0.0 {
            return fail("apportionment shares must be non-negative with a positive sum".into());
        }
        if !(a.concentration > 0.0 && a.concentration.is_finite()) {
            return fail("apportionment concentration must be positive".into());
        }
        let t = &self.truth;
        if let Some(raw) = &t.alpha_raw {
            if raw.len() != self.clusters {
                return fail(format!("alpha_raw has {} entries for {} clusters", raw.len(), self.clusters));
            }
        }
        if let Some(raw) = &t.gamma_raw {
            if raw.len() != self.months {
                return fail(format!("gamma_raw has {} entries for {} months", raw.len(), self.months));
            }
        }
        let probe = ParameterVector {
            mu_alpha: t.mu_alpha,
            sigma_alpha: t.sigma_alpha,
            alpha_raw: vec![0.0; self.clusters],
            beta: t.beta,
            gamma_raw: vec![0.0; self.months],
            sigma_gamma: t.sigma_gamma,
            shock_factor: t.shock_factor,
            delta_covid: t.delta_covid,
            phi: t.phi,
        };
        probe.validate()?;
        Ok(())
    }

    fn covid_months(&self) -> Result<Vec<bool>, SimulateError> {
        let first = self.first_month.offset() as usize;
        let window = self.covid_window()?;
        Ok((first..first + self.months)
            .map(|t| window.is_some_and(|w| w.contains_index(t)))
            .collect())
    }
}

/// Beta draw for the success probability followed by a Binomial draw.
pub fn sample_beta_binomial<R: Rng + ?Sized>(n: u64, p: f64, phi: f64, rng: &mut R) -> u64 {
    let a = (p * phi).max(f64::MIN_POSITIVE);
    let b = ((1.0 - p) * phi).max(f64::MIN_POSITIVE);
    let q = Beta::new(a, b).map_or(p, |d| d.sample(rng));
    let q = if q.is_nan() { p } else { q.clamp(0.0, 1.0) };
    Binomial::new(n, q).map_or(0, |d| d.sample(rng))
}

fn dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Vec<f64> {
    let g: Vec<f64> = alpha
        .iter()
        .map(|&a| if a > 0.0 { Gamma::new(a, 1.0).expect("positive shape").sample(rng) } else { 0.0 })
        .collect();
    let total: f64 = g.iter().sum();
    if total > 0.0 {
        g.iter().map(|v| v / total).collect()
    } else {
        let s: f64 = alpha.iter().sum();
        alpha.iter().map(|a| a / s).collect()
    }
}

pub fn airport_code(index: usize) -> String {
    let letter = |i: usize| char::from(b'A' + (i % 26) as u8);
    format!("S{}{}", letter(index / 26), letter(index))
}

pub fn carrier_code(index: usize) -> String {
    format!("Q{}", char::from(b'A' + (index % 26) as u8))
}

/// A generated panel with its generating parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedDataset {
    pub records: Vec<ObservationRecord>,
    /// Design built from the generating cause counts.
    pub design: DesignMatrix,
    pub truth: ParameterVector,
    pub assignment: ClusterAssignment,
}

/// Generating parameters plus derived α_j, γ_t and airport clusters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub params: ParameterVector,
    pub alpha: Vec<f64>,
    pub gamma: Vec<f64>,
    pub first_month: YearMonth,
    pub clusters: BTreeMap<String, usize>,
}

impl SimulatedDataset {
    pub fn truth_file(&self) -> TruthFile {
        TruthFile {
            params: self.truth.clone(),
            alpha: self.truth.alpha(),
            gamma: self.truth.gamma(&self.design.covid_months),
            first_month: YearMonth::from_index(self.design.first_month),
            clusters: self.assignment.labels().clone(),
        }
    }

    pub fn write_truth<W: Write>(&self, mut out: W) -> Result<(), SimulateError> {
        serde_json::to_writer_pretty(&mut out, &self.truth_file()).map_err(|e| SimulateError::Io(e.to_string()))?;
        out.write_all(b"\n").map_err(|e| SimulateError::Io(e.to_string()))
    }
}

fn truth_params<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> ParameterVector {
    let t = &config.truth;
    let mut normals = |k: usize| -> Vec<f64> { (0..k).map(|_| rng.sample(StandardNormal)).collect() };
    let alpha_raw = t.alpha_raw.clone().unwrap_or_else(|| normals(config.clusters));
    let gamma_raw = t.gamma_raw.clone().unwrap_or_else(|| normals(config.months));
    ParameterVector {
        mu_alpha: t.mu_alpha,
        sigma_alpha: t.sigma_alpha,
        alpha_raw,
        beta: t.beta,
        gamma_raw,
        sigma_gamma: t.sigma_gamma,
        shock_factor: t.shock_factor,
        delta_covid: t.delta_covid,
        phi: t.phi,
    }
}

fn probabilities(params: &ParameterVector, design: &DesignMatrix) -> Result<Vec<f64>, SimulateError> {
    Ok(linear_predictor(params, design)?
        .into_iter()
        .map(|eta| logistic(eta.clamp(-ETA_CLAMP, ETA_CLAMP)))
        .collect())
}

/// Draws a panel. Record `r` falls in relative month `r mod T` of
/// airport-carrier slot `⌊r / T⌋`; airport `a` belongs to cluster `a mod J`.
pub fn simulate_dataset(config: &ScenarioConfig) -> Result<SimulatedDataset, SimulateError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let truth = truth_params(config, &mut rng);
    let covid_months = config.covid_months()?;
    let first = config.first_month.offset() as usize;
    let t_count = config.months;

    let causes = config.causes.as_array();
    let mut flights = Vec::with_capacity(config.n_records);
    let mut counts = Vec::with_capacity(config.n_records);
    let mut cluster = Vec::with_capacity(config.n_records);
    let mut month = Vec::with_capacity(config.n_records);
    let mut keys = Vec::with_capacity(config.n_records);
    for r in 0..config.n_records {
        let slot = r / t_count;
        let airport = slot % config.airports;
        let carrier = slot / config.airports;
        let n = 1.0 + config.flights.sample(&mut rng);
        let c = [
            causes[0].sample(&mut rng),
            causes[1].sample(&mut rng),
            causes[2].sample(&mut rng),
            causes[3].sample(&mut rng),
        ];
        flights.push(n);
        counts.push(c);
        cluster.push(airport % config.clusters);
        month.push(r % t_count);
        keys.push((airport, carrier));
    }

    let n_obs = config.n_records as f64;
    let mut means = [0.0; 4];
    for c in &counts {
        for k in 0..4 {
            means[k] += c[k] / n_obs;
        }
    }
    let x: Vec<[f64; 4]> = counts
        .iter()
        .map(|c| [c[0] - means[0], c[1] - means[1], c[2] - means[2], c[3] - means[3]])
        .collect();

    // y is provisional until drawn; zeros satisfy the design invariants
    let mut design = DesignMatrix::from_parts(
        flights.clone(),
        vec![0.0; config.n_records],
        cluster,
        month,
        x,
        means,
        [1.0; 4],
        config.clusters,
        first,
        covid_months,
    )?;
    let p = probabilities(&truth, &design)?;
    let y: Vec<f64> = flights
        .iter()
        .zip(&p)
        .map(|(&n, &p)| sample_beta_binomial(n as u64, p, truth.phi, &mut rng) as f64)
        .collect();
    design = DesignMatrix::from_parts(
        design.n,
        y.clone(),
        design.cluster,
        design.month,
        design.x,
        means,
        [1.0; 4],
        config.clusters,
        first,
        design.covid_months,
    )?;

    let a = &config.apportionment;
    let share_total: f64 = a.shares.iter().sum();
    let alpha: Vec<f64> = a.shares.iter().map(|s| s / share_total * a.concentration).collect();
    let mut records = Vec::with_capacity(config.n_records);
    for i in 0..config.n_records {
        let shares = dirichlet(&alpha, &mut rng);
        let ym = YearMonth::from_index(first + design.month[i]);
        let (airport, carrier) = keys[i];
        let yi = y[i];
        records.push(ObservationRecord {
            year: ym.year,
            month: ym.month,
            airport: airport_code(airport),
            carrier: carrier_code(carrier),
            arr_flights: flights[i],
            arr_del15: yi,
            carrier_ct: yi * shares[0],
            weather_ct: yi * shares[1],
            nas_ct: yi * shares[2],
            security_ct: yi * shares[3],
            late_aircraft_ct: yi * shares[4],
        });
    }

    let labels = (0..config.airports)
        .map(|a| (airport_code(a), a % config.clusters))
        .collect();
    let assignment = ClusterAssignment::new(config.clusters, labels, Vec::new(), f64::NAN);
    Ok(SimulatedDataset {
        records,
        design,
        truth,
        assignment,
    })
}

/// One prior draw with the outcomes it implies on a fixed design.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorDraw {
    pub params: ParameterVector,
    /// logit⁻¹(μ_α)
    pub baseline_probability: f64,
    /// logit⁻¹(α_j) per cluster.
    pub cluster_probabilities: Vec<f64>,
    pub y: Vec<f64>,
}

/// Draws every latent quantity from its prior. A zero `sigma_alpha_scale`
/// pins σ_α to zero.
pub fn draw_from_prior<R: Rng + ?Sized>(priors: &Priors, layout: ParamLayout, rng: &mut R) -> ParameterVector {
    let half_normal = |scale: f64, rng: &mut R| (rng.sample::<f64, _>(StandardNormal) * scale).abs();
    let mu_alpha = Normal::new(priors.mu_alpha_mean, priors.mu_alpha_sd)
        .expect("validated prior")
        .sample(rng);
    let sigma_alpha = half_normal(priors.sigma_alpha_scale, rng);
    let alpha_raw = (0..layout.n_clusters).map(|_| rng.sample(StandardNormal)).collect();
    let beta = [0; 4].map(|_| rng.sample::<f64, _>(StandardNormal) * priors.beta_sd);
    let gamma_raw = (0..layout.n_months).map(|_| rng.sample(StandardNormal)).collect();
    let sigma_gamma = if priors.sigma_gamma_scale > 0.0 {
        Cauchy::new(0.0, priors.sigma_gamma_scale).expect("positive scale").sample(rng).abs()
    } else {
        0.0
    };
    let shock_factor = 1.0 + half_normal(priors.shock_excess_scale, rng);
    let delta_covid = rng.sample::<f64, _>(StandardNormal) * priors.delta_covid_sd;
    let phi = Exp::new(priors.phi_rate).expect("positive rate").sample(rng);
    ParameterVector {
        mu_alpha,
        sigma_alpha,
        alpha_raw,
        beta,
        gamma_raw,
        sigma_gamma,
        shock_factor,
        delta_covid,
        phi,
    }
}

/// Prior predictive outcomes on `design`.
pub fn prior_predictive(
    priors: &Priors,
    design: &DesignMatrix,
    draws: usize,
    seed: u64,
) -> Result<Vec<PriorDraw>, SimulateError> {
    if draws == 0 {
        return Err(SimulateError::Config("draws must be at least 1".into()));
    }
    let scales = [
        priors.mu_alpha_sd,
        priors.sigma_alpha_scale,
        priors.beta_sd,
        priors.sigma_gamma_scale,
        priors.delta_covid_sd,
        priors.shock_excess_scale,
    ];
    if scales.iter().any(|s| !(*s >= 0.0 && s.is_finite())) || !(priors.phi_rate > 0.0) || !priors.mu_alpha_mean.is_finite() {
        return Err(SimulateError::Config("prior scales must be finite and non-negative, phi_rate positive".into()));
    }
    let layout = ParamLayout::new(design.n_clusters, design.n_months);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..draws)
        .map(|_| {
            let params = draw_from_prior(priors, layout, &mut rng);
            let p = probabilities(&params, design)?;
            let y = design
                .n
                .iter()
                .zip(&p)
                .map(|(&n, &p)| sample_beta_binomial(n as u64, p, params.phi, &mut rng) as f64)
                .collect();
            Ok(PriorDraw {
                baseline_probability: logistic(params.mu_alpha),
                cluster_probabilities: params.alpha().into_iter().map(logistic).collect(),
                params,
                y,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet_truth(mu: f64, phi: f64, delta: f64) -> Truth {
        Truth {
            mu_alpha: mu,
            sigma_alpha: 1.0,
            alpha_raw: Some(vec![0.0]),
            beta: [0.0; 4],
            gamma_raw: Some(vec![0.0; 24]),
            sigma_gamma: 1.0,
            shock_factor: 1.0,
            delta_covid: delta,
            phi,
        }
    }

    fn quiet_scenario(truth: Truth) -> ScenarioConfig {
        ScenarioConfig {
            clusters: 1,
            months: 24,
            first_month: YearMonth { year: 2019, month: 1 },
            n_records: 4800,
            airports: 10,
            carriers: 20,
            covid_start: YearMonth { year: 2020, month: 1 },
            covid_end: YearMonth { year: 2020, month: 12 },
            truth,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn binomial_limit_gives_half() {
        let data = simulate_dataset(&quiet_scenario(quiet_truth(0.0, 1e6, 0.0))).unwrap();
        let (y, n): (f64, f64) = data.design.y.iter().zip(&data.design.n).fold((0.0, 0.0), |(a, b), (y, n)| (a + y, b + n));
        let frac = y / n;
        let se = (0.25 / n).sqrt();
        assert!((frac - 0.5).abs() < 3.0 * se, "fraction {frac}, se {se}");
    }

    #[test]
    fn covid_shift_moves_logit() {
        let data = simulate_dataset(&quiet_scenario(quiet_truth(-1.0, 1e6, -0.267))).unwrap();
        let d = &data.design;
        let mut sums = [[0.0; 2]; 2];
        for i in 0..d.len() {
            let k = usize::from(d.covid[i]);
            sums[k][0] += d.y[i];
            sums[k][1] += d.n[i];
        }
        let logit = |s: [f64; 2]| (s[0] / (s[1] - s[0])).ln();
        let p = |s: [f64; 2]| s[0] / s[1];
        let se = |s: [f64; 2]| (1.0 / (s[1] * p(s) * (1.0 - p(s)))).sqrt();
        let diff = logit(sums[1]) - logit(sums[0]);
        let tol = 4.0 * (se(sums[0]).powi(2) + se(sums[1]).powi(2)).sqrt();
        assert!((diff + 0.267).abs() < tol, "diff {diff}, tol {tol}");
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let cfg = ScenarioConfig::default();
        let a = simulate_dataset(&cfg).unwrap();
        let b = simulate_dataset(&cfg).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.design, b.design);
        assert_eq!(a.truth, b.truth);
        let c = simulate_dataset(&ScenarioConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a.records, c.records);
    }

    #[test]
    fn records_satisfy_ingest_invariants() {
        let data = simulate_dataset(&ScenarioConfig::default()).unwrap();
        assert_eq!(data.records.len(), 2000);
        for r in &data.records {
            r.validate().unwrap();
            assert!((r.cause_sum() - r.arr_del15).abs() < 1e-9);
            assert!(r.arr_flights > 0.0);
        }
        let mut keys: Vec<_> = data.records.iter().map(|r| (&r.airport, &r.carrier, r.year, r.month)).collect();
        keys.sort();
        keys.dedup();
        assert_eq!(keys.len(), 2000);
        assert_eq!(data.design.n_months, 48);
        assert_eq!(data.design.covid_months.iter().filter(|c| **c).count(), 24);
        assert!(data.design.column_sums().iter().all(|s| s.abs() < 1e-8));
    }

    #[test]
    fn overdispersed_at_low_phi() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (n, p) = (50u64, 0.3);
        let fr: Vec<f64> = (0..10_000)
            .map(|_| sample_beta_binomial(n, p, 5.0, &mut rng) as f64 / n as f64)
            .collect();
        let m = fr.iter().sum::<f64>() / fr.len() as f64;
        let var = fr.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (fr.len() as f64 - 1.0);
        let binomial = p * (1.0 - p) / n as f64;
        // sampling sd of a variance estimate is about var·sqrt(2/(R−1))
        assert!(var > binomial * (1.0 + 3.0 * (2.0f64 / 9999.0).sqrt()), "var {var}");
    }

    #[test]
    fn invalid_scenarios_rejected() {
        let too_many = ScenarioConfig {
            n_records: 12 * 4 * 48 + 1,
            ..ScenarioConfig::default()
        };
        assert!(simulate_dataset(&too_many).is_err());
        let late = ScenarioConfig {
            first_month: YearMonth { year: 2024, month: 1 },
            ..ScenarioConfig::default()
        };
        assert!(late.validate().is_err());
        assert!(ScenarioConfig::from_toml_str("bogus = 1").is_err());
        let cfg = ScenarioConfig::from_toml_str("months = 24\nn_records = 1000\n[truth]\nphi = 10.0\n").unwrap();
        assert_eq!(cfg.months, 24);
        assert_eq!(cfg.truth.phi, 10.0);
    }

    fn prior_design() -> DesignMatrix {
        simulate_dataset(&ScenarioConfig {
            n_records: 96,
            ..ScenarioConfig::default()
        })
        .unwrap()
        .design
    }

    #[test]
    fn prior_baseline_median_near_published_average() {
        let draws = prior_predictive(&Priors::default(), &prior_design(), 1000, 4).unwrap();
        let mut base: Vec<f64> = draws.iter().map(|d| d.baseline_probability).collect();
        base.sort_by(f64::total_cmp);
        let median = 0.5 * (base[499] + base[500]);
        assert!((median - logistic(-1.5)).abs() < 0.02, "median {median}");
        assert!((logistic(-1.5) - 0.18243).abs() < 1e-5);
    }

    #[test]
    fn zero_sigma_alpha_pins_clusters() {
        let priors = Priors {
            sigma_alpha_scale: 0.0,
            ..Priors::default()
        };
        for d in prior_predictive(&priors, &prior_design(), 20, 1).unwrap() {
            assert_eq!(d.params.sigma_alpha, 0.0);
            assert!(d.params.alpha().iter().all(|a| *a == d.params.mu_alpha));
        }
    }

    #[test]
    fn cluster_spread_grows_with_sigma_alpha_scale() {
        let spread = |scale: f64| {
            let priors = Priors {
                sigma_alpha_scale: scale,
                ..Priors::default()
            };
            let draws = prior_predictive(&priors, &prior_design(), 1000, 9).unwrap();
            draws
                .iter()
                .map(|d| {
                    let p = &d.cluster_probabilities;
                    let m = p.iter().sum::<f64>() / p.len() as f64;
                    (p.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (p.len() as f64 - 1.0)).sqrt()
                })
                .sum::<f64>()
                / draws.len() as f64
        };
        assert!(spread(0.5) > spread(0.1));
    }

    #[test]
    fn codes_are_valid_identifiers() {
        assert_eq!(airport_code(0), "SAA");
        assert_eq!(airport_code(27), "SBB");
        assert_eq!(carrier_code(2), "QC");
    }
}
