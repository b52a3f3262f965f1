use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::calendar::{MonthRange, YearMonth};

/// Prior hyperparameters. Defaults are the published model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Priors {
    /// μ_α ~ Normal(mean, sd)
    pub mu_alpha_mean: f64,
    pub mu_alpha_sd: f64,
    /// σ_α ~ HalfNormal(scale)
    pub sigma_alpha_scale: f64,
    /// β_k ~ Normal(0, sd)
    pub beta_sd: f64,
    /// σ_γ ~ HalfCauchy(scale)
    pub sigma_gamma_scale: f64,
    /// φ ~ Exponential(rate)
    pub phi_rate: f64,
    /// δ_covid ~ Normal(0, sd)
    pub delta_covid_sd: f64,
    /// shock_factor − 1 ~ HalfNormal(scale)
    pub shock_excess_scale: f64,
}

impl Default for Priors {
    fn default() -> Self {
        Self {
            mu_alpha_mean: -1.5,
            mu_alpha_sd: 1.0,
            sigma_alpha_scale: 0.5,
            beta_sd: 0.5,
            sigma_gamma_scale: 0.5,
            phi_rate: 1.0,
            delta_covid_sd: 1.0,
            shock_excess_scale: 2.0,
        }
    }
}

impl Priors {
    pub fn validate(&self) -> Result<(), ModelError> {
        let scales = [
            ("mu_alpha_sd", self.mu_alpha_sd),
            ("sigma_alpha_scale", self.sigma_alpha_scale),
            ("beta_sd", self.beta_sd),
            ("sigma_gamma_scale", self.sigma_gamma_scale),
            ("phi_rate", self.phi_rate),
            ("delta_covid_sd", self.delta_covid_sd),
            ("shock_excess_scale", self.shock_excess_scale),
        ];
        for (name, v) in scales {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ModelError::Domain(format!("prior {name} must be positive, got {v}")));
            }
        }
        if !self.mu_alpha_mean.is_finite() {
            return Err(ModelError::Domain("prior mu_alpha_mean must be finite".into()));
        }
        Ok(())
    }
}

/// Model configuration file: `key = value` lines plus an optional `[priors]`
/// table. An empty file yields the published model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub covid_enabled: bool,
    pub covid_start: YearMonth,
    pub covid_end: YearMonth,
    /// Divide centered predictors by their standard deviation (sensitivity runs only).
    pub standardize_predictors: bool,
    pub priors: Priors,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let w = MonthRange::covid_default();
        Self {
            covid_enabled: true,
            covid_start: w.start,
            covid_end: w.end,
            standardize_predictors: false,
            priors: Priors::default(),
        }
    }
}

impl ModelConfig {
    pub fn covid_window(&self) -> Result<Option<MonthRange>, ModelError> {
        if !self.covid_enabled {
            return Ok(None);
        }
        Ok(Some(MonthRange::new(self.covid_start, self.covid_end)?))
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ModelError> {
        let cfg: ModelConfig = toml::from_str(text).map_err(|e| ModelError::Config(e.to_string()))?;
        cfg.priors.validate()?;
        cfg.covid_window()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| ModelError::Config(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("model config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default_model() {
        let cfg = ModelConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, ModelConfig::default());
        assert_eq!(cfg.priors.mu_alpha_mean, -1.5);
        assert_eq!(cfg.priors.beta_sd, 0.5);
        assert_eq!(cfg.covid_window().unwrap(), Some(MonthRange::covid_default()));
    }

    #[test]
    fn partial_overrides() {
        let cfg = ModelConfig::from_toml_str(
            "covid_start = \"2020-03\"\nstandardize_predictors = true\n[priors]\nbeta_sd = 1.0\n",
        )
        .unwrap();
        assert_eq!(cfg.covid_start, YearMonth { year: 2020, month: 3 });
        assert!(cfg.standardize_predictors);
        assert_eq!(cfg.priors.beta_sd, 1.0);
        assert_eq!(cfg.priors.phi_rate, 1.0);
        let back = ModelConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_scales() {
        assert!(ModelConfig::from_toml_str("covid_begin = \"2020-01\"").is_err());
        assert!(ModelConfig::from_toml_str("[priors]\nbeta_sd = 0.0").is_err());
        assert!(ModelConfig::from_toml_str("covid_start = \"2023-01\"").is_err());
    }
}
