//! Log-posterior of the hierarchical Beta-Binomial model and its analytic
//! gradient on the unconstrained scale.

use super::params::{gamma_from_raw, ParamLayout, ParameterVector};
use super::{DesignMatrix, ModelError, Priors};
use crate::sampler::LogDensity;
use crate::special::{
    digamma, exponential_ln_pdf, half_cauchy_ln_pdf, half_normal_ln_pdf, ln_beta, ln_choose,
    ln_gamma, logistic, normal_ln_pdf,
};

/// Linear predictors are clamped to ±35 before the logistic transform.
pub const ETA_CLAMP: f64 = 35.0;

/// `ln P(y | n, a = pφ, b = (1−p)φ)` for the Beta-Binomial distribution.
pub fn beta_binomial_ln_pmf(y: f64, n: f64, p: f64, phi: f64) -> f64 {
    let a = p * phi;
    let b = (1.0 - p) * phi;
    ln_choose(n, y) + ln_beta(y + a, n - y + b) - ln_beta(a, b)
}

/// Sum of prior log-densities on the constrained scale (no Jacobian terms).
pub fn log_prior(params: &ParameterVector, priors: &Priors) -> Result<f64, ModelError> {
    priors.validate()?;
    params.validate()?;
    let mut lp = normal_ln_pdf(params.mu_alpha, priors.mu_alpha_mean, priors.mu_alpha_sd);
    lp += half_normal_ln_pdf(params.sigma_alpha, priors.sigma_alpha_scale);
    lp += params.alpha_raw.iter().map(|a| normal_ln_pdf(*a, 0.0, 1.0)).sum::<f64>();
    lp += params.beta.iter().map(|b| normal_ln_pdf(*b, 0.0, priors.beta_sd)).sum::<f64>();
    lp += params.gamma_raw.iter().map(|g| normal_ln_pdf(*g, 0.0, 1.0)).sum::<f64>();
    lp += half_cauchy_ln_pdf(params.sigma_gamma, priors.sigma_gamma_scale);
    lp += exponential_ln_pdf(params.phi, priors.phi_rate);
    lp += normal_ln_pdf(params.delta_covid, 0.0, priors.delta_covid_sd);
    lp += half_normal_ln_pdf(params.shock_factor - 1.0, priors.shock_excess_scale);
    Ok(lp)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LikelihoodValue {
    pub value: f64,
    /// Observations whose linear predictor hit the ±35 clamp.
    pub saturated: usize,
}

fn check_dims(params: &ParameterVector, design: &DesignMatrix) -> Result<(), ModelError> {
    if params.alpha_raw.len() != design.n_clusters {
        return Err(ModelError::Dimension {
            expected: design.n_clusters,
            got: params.alpha_raw.len(),
        });
    }
    if params.gamma_raw.len() != design.n_months {
        return Err(ModelError::Dimension {
            expected: design.n_months,
            got: params.gamma_raw.len(),
        });
    }
    Ok(())
}

/// Linear predictor η_i for every observation (unclamped).
pub fn linear_predictor(params: &ParameterVector, design: &DesignMatrix) -> Result<Vec<f64>, ModelError> {
    check_dims(params, design)?;
    let alpha = params.alpha();
    let gamma = params.gamma(&design.covid_months);
    Ok((0..design.len())
        .map(|i| eta(i, design, &alpha, &params.beta, &gamma, params.delta_covid))
        .collect())
}

#[inline]
fn eta(i: usize, d: &DesignMatrix, alpha: &[f64], beta: &[f64; 4], gamma: &[f64], delta: f64) -> f64 {
    let x = &d.x[i];
    let mut e = alpha[d.cluster[i]] + gamma[d.month[i]];
    e += beta[0] * x[0] + beta[1] * x[1] + beta[2] * x[2] + beta[3] * x[3];
    if d.covid[i] {
        e += delta;
    }
    e
}

pub fn log_likelihood(params: &ParameterVector, design: &DesignMatrix) -> Result<LikelihoodValue, ModelError> {
    params.validate()?;
    let etas = linear_predictor(params, design)?;
    let mut value = 0.0;
    let mut saturated = 0;
    for (i, e) in etas.into_iter().enumerate() {
        if e.abs() > ETA_CLAMP {
            saturated += 1;
        }
        let p = logistic(e.clamp(-ETA_CLAMP, ETA_CLAMP));
        value += beta_binomial_ln_pmf(design.y[i], design.n[i], p, params.phi);
    }
    Ok(LikelihoodValue { value, saturated })
}

/// Value and gradient of the unconstrained log-posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorEval {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub saturated: usize,
    /// Set when an intermediate was non-finite; `value` is then −∞ and the
    /// gradient zero.
    pub non_finite: bool,
}

/// The hierarchical model bound to a design: a reentrant log-density target.
#[derive(Debug, Clone)]
pub struct HierarchicalModel {
    pub design: DesignMatrix,
    pub priors: Priors,
    layout: ParamLayout,
}

impl HierarchicalModel {
    pub fn new(design: DesignMatrix, priors: Priors) -> Result<Self, ModelError> {
        priors.validate()?;
        let layout = ParamLayout::new(design.n_clusters, design.n_months);
        Ok(Self { design, priors, layout })
    }

    pub fn layout(&self) -> ParamLayout {
        self.layout
    }

    pub fn log_posterior_grad(&self, u: &[f64]) -> Result<PosteriorEval, ModelError> {
        if u.len() != self.layout.dim() {
            return Err(ModelError::Dimension {
                expected: self.layout.dim(),
                got: u.len(),
            });
        }
        let mut gradient = vec![0.0; u.len()];
        let (value, saturated) = self.eval(u, &mut gradient);
        let non_finite = !value.is_finite() || gradient.iter().any(|g| !g.is_finite());
        if non_finite {
            gradient.iter_mut().for_each(|g| *g = 0.0);
            return Ok(PosteriorEval {
                value: f64::NEG_INFINITY,
                gradient,
                saturated,
                non_finite,
            });
        }
        Ok(PosteriorEval {
            value,
            gradient,
            saturated,
            non_finite,
        })
    }

    /// Unconstrained log-posterior with Jacobian terms; writes the gradient.
    /// Observations are reduced in index order so results are bit-reproducible.
    fn eval(&self, u: &[f64], grad: &mut [f64]) -> (f64, usize) {
        let l = self.layout;
        let pr = &self.priors;
        let d = &self.design;
        let j_count = l.n_clusters;
        let t_count = l.n_months;

        let mu = u[ParamLayout::MU_ALPHA];
        let log_sa = u[ParamLayout::SIGMA_ALPHA];
        let sigma_alpha = log_sa.exp();
        let alpha_raw = &u[ParamLayout::ALPHA_RAW..l.beta()];
        let beta: [f64; 4] = [u[l.beta()], u[l.beta() + 1], u[l.beta() + 2], u[l.beta() + 3]];
        let gamma_raw = &u[l.gamma_raw()..l.sigma_gamma()];
        let log_sg = u[l.sigma_gamma()];
        let sigma_gamma = log_sg.exp();
        let log_excess = u[l.shock()];
        let excess = log_excess.exp();
        let shock = 1.0 + excess;
        let delta = u[l.delta_covid()];
        let log_phi = u[l.phi()];
        let phi = log_phi.exp();

        // Priors plus log-Jacobians of the constraining transforms.
        let mut lp = normal_ln_pdf(mu, pr.mu_alpha_mean, pr.mu_alpha_sd);
        grad[ParamLayout::MU_ALPHA] = -(mu - pr.mu_alpha_mean) / (pr.mu_alpha_sd * pr.mu_alpha_sd);

        lp += half_normal_ln_pdf(sigma_alpha, pr.sigma_alpha_scale) + log_sa;
        grad[ParamLayout::SIGMA_ALPHA] = 1.0 - (sigma_alpha / pr.sigma_alpha_scale).powi(2);

        for (j, a) in alpha_raw.iter().enumerate() {
            lp += normal_ln_pdf(*a, 0.0, 1.0);
            grad[ParamLayout::ALPHA_RAW + j] = -a;
        }
        let beta_var = pr.beta_sd * pr.beta_sd;
        for (k, b) in beta.iter().enumerate() {
            lp += normal_ln_pdf(*b, 0.0, pr.beta_sd);
            grad[l.beta() + k] = -b / beta_var;
        }
        for (t, g) in gamma_raw.iter().enumerate() {
            lp += normal_ln_pdf(*g, 0.0, 1.0);
            grad[l.gamma_raw() + t] = -g;
        }
        let sg_scale2 = pr.sigma_gamma_scale * pr.sigma_gamma_scale;
        lp += half_cauchy_ln_pdf(sigma_gamma, pr.sigma_gamma_scale) + log_sg;
        grad[l.sigma_gamma()] = 1.0 - 2.0 * sigma_gamma * sigma_gamma / (sg_scale2 + sigma_gamma * sigma_gamma);

        lp += half_normal_ln_pdf(excess, pr.shock_excess_scale) + log_excess;
        grad[l.shock()] = 1.0 - (excess / pr.shock_excess_scale).powi(2);

        lp += normal_ln_pdf(delta, 0.0, pr.delta_covid_sd);
        grad[l.delta_covid()] = -delta / (pr.delta_covid_sd * pr.delta_covid_sd);

        lp += exponential_ln_pdf(phi, pr.phi_rate) + log_phi;
        grad[l.phi()] = 1.0 - pr.phi_rate * phi;

        if d.is_empty() {
            return (lp, 0);
        }

        // Derived effects.
        let alpha: Vec<f64> = alpha_raw.iter().map(|a| mu + a * sigma_alpha).collect();
        let scales: Vec<f64> = d
            .covid_months
            .iter()
            .map(|&c| if c { sigma_gamma * shock } else { sigma_gamma })
            .collect();
        let gamma = gamma_from_raw(gamma_raw, &scales);

        let mut d_alpha = vec![0.0; j_count];
        let mut d_gamma = vec![0.0; t_count];
        let mut d_beta = [0.0; 4];
        let mut d_delta = 0.0;
        let mut d_phi = 0.0;
        let mut ll = 0.0;
        let mut saturated = 0;

        let psi_phi = digamma(phi);
        let lgamma_phi = ln_gamma(phi);
        for i in 0..d.len() {
            let e = eta(i, d, &alpha, &beta, &gamma, delta);
            let clamped = e.abs() > ETA_CLAMP;
            if clamped {
                saturated += 1;
            }
            let p = logistic(e.clamp(-ETA_CLAMP, ETA_CLAMP));
            let a = p * phi;
            let b = (1.0 - p) * phi;
            let (n, y) = (d.n[i], d.y[i]);
            ll += d.log_choose[i] + ln_gamma(y + a) + ln_gamma(n - y + b) - ln_gamma(n + phi)
                - ln_gamma(a)
                - ln_gamma(b)
                + lgamma_phi;

            let common = psi_phi - digamma(n + phi);
            let dl_da = digamma(y + a) - digamma(a) + common;
            let dl_db = digamma(n - y + b) - digamma(b) + common;
            d_phi += p * dl_da + (1.0 - p) * dl_db;
            if clamped {
                continue;
            }
            let dl_deta = phi * p * (1.0 - p) * (dl_da - dl_db);
            d_alpha[d.cluster[i]] += dl_deta;
            d_gamma[d.month[i]] += dl_deta;
            let x = &d.x[i];
            for k in 0..4 {
                d_beta[k] += dl_deta * x[k];
            }
            if d.covid[i] {
                d_delta += dl_deta;
            }
        }

        // Chain rule back to the unconstrained coordinates.
        for j in 0..j_count {
            grad[ParamLayout::MU_ALPHA] += d_alpha[j];
            grad[ParamLayout::ALPHA_RAW + j] += d_alpha[j] * sigma_alpha;
            grad[ParamLayout::SIGMA_ALPHA] += d_alpha[j] * alpha_raw[j] * sigma_alpha;
        }
        for k in 0..4 {
            grad[l.beta() + k] += d_beta[k];
        }
        let weighted: f64 = d_gamma.iter().zip(&scales).map(|(g, s)| g * s).sum();
        let mean_weighted = weighted / t_count as f64;
        let mut d_log_sg = 0.0;
        let mut d_log_excess = 0.0;
        for t in 0..t_count {
            grad[l.gamma_raw() + t] += d_gamma[t] * scales[t] - mean_weighted;
            d_log_sg += d_gamma[t] * gamma[t];
            if d.covid_months[t] {
                d_log_excess += d_gamma[t] * gamma[t] * excess / shock;
            }
        }
        grad[l.sigma_gamma()] += d_log_sg;
        grad[l.shock()] += d_log_excess;
        grad[l.delta_covid()] += d_delta;
        grad[l.phi()] += d_phi * phi;

        (lp + ll, saturated)
    }
}

impl LogDensity for HierarchicalModel {
    fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn log_density_and_grad(&self, position: &[f64], grad: &mut [f64]) -> f64 {
        let (value, _) = self.eval(position, grad);
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            return f64::NEG_INFINITY;
        }
        value
    }

    fn param_names(&self) -> Vec<String> {
        self.layout.constrained_names()
    }

    fn constrain(&self, position: &[f64]) -> Vec<f64> {
        ParameterVector::from_unconstrained(position, self.layout)
            .map(|p| p.constrained_view(&self.design.covid_months))
            .unwrap_or_else(|_| vec![f64::NAN; self.layout.constrained_names().len()])
    }
}
