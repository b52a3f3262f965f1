//! Three-level hierarchical Beta-Binomial logit model.
//!
//! ```text
//! y_i ~ BetaBinomial(n_i, p_i φ, (1 − p_i) φ)
//! logit p_i = α_cluster[i] + Σ_k β_k X_k,i + γ_month[i] + δ_covid · covid_i
//! α_j = μ_α + α_raw,j σ_α
//! γ_t = (γ_raw,t − mean γ_raw) σ_γ,t,   σ_γ,t = σ_γ · shock_factor inside the COVID window
//! ```
//!
//! The sampler works on the unconstrained vector described by [`ParamLayout`];
//! scales are log-transformed and `shock_factor` is mapped by `ln(s − 1)`.

mod config;
mod density;
mod design;
mod params;

use thiserror::Error;

pub use config::{ModelConfig, Priors};
pub use density::{
    beta_binomial_ln_pmf, linear_predictor, log_likelihood, log_prior, HierarchicalModel,
    LikelihoodValue, PosteriorEval, ETA_CLAMP,
};
pub use design::{build_design, grand_means, DesignMatrix, DesignOptions};
pub use params::{ParamLayout, ParameterVector};

/// Exogenous delay causes entering the linear predictor, in column order.
/// Carrier delay is the reference category.
pub const FACTORS: [&str; 4] = ["weather", "nas", "security", "late"];

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("airport {0} has no cluster label")]
    UnknownAirport(String),
    #[error("invalid design: {0}")]
    Design(String),
    #[error("model config: {0}")]
    Config(String),
    #[error("calendar: {0}")]
    Calendar(#[from] crate::calendar::CalendarError),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(String),
}
