use serde::{Deserialize, Serialize};

use super::{ModelError, FACTORS};

/// Positions of each block inside the unconstrained vector.
///
/// Layout: `[μ_α, ln σ_α, α_raw (J), β (4), γ_raw (T), ln σ_γ, ln(shock − 1), δ_covid, ln φ]`,
/// `J + T + 10` coordinates in total.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    pub n_clusters: usize,
    pub n_months: usize,
}

impl ParamLayout {
    pub const MU_ALPHA: usize = 0;
    pub const SIGMA_ALPHA: usize = 1;
    pub const ALPHA_RAW: usize = 2;

    pub fn new(n_clusters: usize, n_months: usize) -> Self {
        Self { n_clusters, n_months }
    }

    pub fn beta(&self) -> usize {
        Self::ALPHA_RAW + self.n_clusters
    }
    pub fn gamma_raw(&self) -> usize {
        self.beta() + FACTORS.len()
    }
    pub fn sigma_gamma(&self) -> usize {
        self.gamma_raw() + self.n_months
    }
    pub fn shock(&self) -> usize {
        self.sigma_gamma() + 1
    }
    pub fn delta_covid(&self) -> usize {
        self.sigma_gamma() + 2
    }
    pub fn phi(&self) -> usize {
        self.sigma_gamma() + 3
    }
    pub fn dim(&self) -> usize {
        self.sigma_gamma() + 4
    }

    /// Names of the sampled coordinates, in layout order.
    pub fn names(&self) -> Vec<String> {
        let mut names = vec!["mu_alpha".to_string(), "sigma_alpha".to_string()];
        names.extend((0..self.n_clusters).map(|j| format!("alpha_raw[{j}]")));
        names.extend(FACTORS.iter().map(|f| format!("beta_{f}")));
        names.extend((0..self.n_months).map(|t| format!("gamma_raw[{t}]")));
        names.extend(["sigma_gamma", "shock_factor", "delta_covid", "phi"].map(String::from));
        names
    }

    /// Names of the constrained view: the sampled parameters followed by the
    /// derived cluster intercepts α_j and temporal offsets γ_t.
    pub fn constrained_names(&self) -> Vec<String> {
        let mut names = self.names();
        names.extend((0..self.n_clusters).map(|j| format!("alpha[{j}]")));
        names.extend((0..self.n_months).map(|t| format!("gamma[{t}]")));
        names
    }
}

/// All latent quantities on their natural (constrained) scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    pub mu_alpha: f64,
    pub sigma_alpha: f64,
    pub alpha_raw: Vec<f64>,
    /// Sensitivities for weather, nas, security, late aircraft.
    pub beta: [f64; 4],
    pub gamma_raw: Vec<f64>,
    pub sigma_gamma: f64,
    pub shock_factor: f64,
    pub delta_covid: f64,
    pub phi: f64,
}

impl ParameterVector {
    pub fn layout(&self) -> ParamLayout {
        ParamLayout::new(self.alpha_raw.len(), self.gamma_raw.len())
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("sigma_alpha", self.sigma_alpha),
            ("sigma_gamma", self.sigma_gamma),
            ("phi", self.phi),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || v.is_infinite() {
                return Err(ModelError::Domain(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.shock_factor >= 1.0) || self.shock_factor.is_infinite() {
            return Err(ModelError::Domain(format!(
                "shock_factor must be at least 1, got {}",
                self.shock_factor
            )));
        }
        let finite = std::iter::once(self.mu_alpha)
            .chain(self.alpha_raw.iter().copied())
            .chain(self.beta)
            .chain(self.gamma_raw.iter().copied())
            .chain(std::iter::once(self.delta_covid))
            .all(f64::is_finite);
        if !finite {
            return Err(ModelError::Domain("non-finite location parameter".into()));
        }
        Ok(())
    }

    /// α_j = μ_α + α_raw,j · σ_α
    pub fn alpha(&self) -> Vec<f64> {
        self.alpha_raw
            .iter()
            .map(|a| self.mu_alpha + a * self.sigma_alpha)
            .collect()
    }

    /// Per-month temporal scale: σ_γ, times `shock_factor` inside the COVID window.
    pub fn gamma_scales(&self, covid_months: &[bool]) -> Vec<f64> {
        covid_months
            .iter()
            .map(|&c| if c { self.sigma_gamma * self.shock_factor } else { self.sigma_gamma })
            .collect()
    }

    /// γ_t = (γ_raw,t − mean(γ_raw)) · σ_γ,t
    pub fn gamma(&self, covid_months: &[bool]) -> Vec<f64> {
        gamma_from_raw(&self.gamma_raw, &self.gamma_scales(covid_months))
    }

    pub fn to_unconstrained(&self) -> Vec<f64> {
        let mut u = Vec::with_capacity(self.layout().dim());
        u.push(self.mu_alpha);
        u.push(self.sigma_alpha.ln());
        u.extend_from_slice(&self.alpha_raw);
        u.extend_from_slice(&self.beta);
        u.extend_from_slice(&self.gamma_raw);
        u.push(self.sigma_gamma.ln());
        u.push((self.shock_factor - 1.0).ln());
        u.push(self.delta_covid);
        u.push(self.phi.ln());
        u
    }

    pub fn from_unconstrained(u: &[f64], layout: ParamLayout) -> Result<Self, ModelError> {
        if u.len() != layout.dim() {
            return Err(ModelError::Dimension {
                expected: layout.dim(),
                got: u.len(),
            });
        }
        let b = layout.beta();
        Ok(Self {
            mu_alpha: u[ParamLayout::MU_ALPHA],
            sigma_alpha: u[ParamLayout::SIGMA_ALPHA].exp(),
            alpha_raw: u[ParamLayout::ALPHA_RAW..b].to_vec(),
            beta: [u[b], u[b + 1], u[b + 2], u[b + 3]],
            gamma_raw: u[layout.gamma_raw()..layout.sigma_gamma()].to_vec(),
            sigma_gamma: u[layout.sigma_gamma()].exp(),
            shock_factor: 1.0 + u[layout.shock()].exp(),
            delta_covid: u[layout.delta_covid()],
            phi: u[layout.phi()].exp(),
        })
    }

    /// Sampled parameters in layout order followed by α_j and γ_t.
    pub fn constrained_view(&self, covid_months: &[bool]) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.layout().dim() + self.alpha_raw.len() + self.gamma_raw.len());
        v.push(self.mu_alpha);
        v.push(self.sigma_alpha);
        v.extend_from_slice(&self.alpha_raw);
        v.extend_from_slice(&self.beta);
        v.extend_from_slice(&self.gamma_raw);
        v.extend([self.sigma_gamma, self.shock_factor, self.delta_covid, self.phi]);
        v.extend(self.alpha());
        v.extend(self.gamma(covid_months));
        v
    }
}

pub(crate) fn gamma_from_raw(gamma_raw: &[f64], scales: &[f64]) -> Vec<f64> {
    if gamma_raw.is_empty() {
        return Vec::new();
    }
    let mean = gamma_raw.iter().sum::<f64>() / gamma_raw.len() as f64;
    gamma_raw
        .iter()
        .zip(scales)
        .map(|(g, s)| (g - mean) * s)
        .collect()
}
