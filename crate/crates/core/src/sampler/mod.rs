//! No-U-Turn sampling for any differentiable log density.
//!
//! Each chain draws from its own ChaCha8 stream (stream index = chain index)
//! seeded from the run seed, so results do not depend on thread scheduling.

mod adapt;
mod io;
mod nuts;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adapt::{DualAveraging, VarianceEstimator, WarmupSchedule};
pub use io::{read_draws, write_draws, DrawsMetadata, PosteriorDraws};
pub use nuts::{find_reasonable_step_size, leapfrog, nuts_draw, PhasePoint, TransitionSettings, TransitionStats};

/// A target distribution on ℝ^d known up to a constant.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// Writes ∇ ln π(x) into `grad` and returns ln π(x). Returns −∞ outside the support.
    fn log_density_and_grad(&self, position: &[f64], grad: &mut [f64]) -> f64;

    /// Names of the constrained view returned by [`LogDensity::constrain`].
    fn param_names(&self) -> Vec<String> {
        (0..self.dim()).map(|i| format!("x[{i}]")).collect()
    }

    fn constrain(&self, position: &[f64]) -> Vec<f64> {
        position.to_vec()
    }
}

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("invalid sampler configuration: {0}")]
    Config(String),
    #[error("chain {chain}: no finite starting point found after {attempts} attempts")]
    Initialization { chain: usize, attempts: usize },
    #[error("chain {chain}: every warmup transition diverged; try a smaller initial step size")]
    AllDivergentWarmup { chain: usize },
    #[error("no chain completed")]
    NoChains,
    #[error("draws file: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub chains: usize,
    pub warmup: usize,
    pub draws: usize,
    pub target_accept: f64,
    pub max_tree_depth: u32,
    pub divergence_threshold: f64,
    pub seed: u64,
    /// Initial positions are drawn from U(−r, r) per coordinate.
    pub init_radius: f64,
    /// Starting guess handed to the step-size heuristic.
    pub initial_step_size: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            chains: 4,
            warmup: 2000,
            draws: 2000,
            target_accept: 0.8,
            max_tree_depth: 10,
            divergence_threshold: 1000.0,
            seed: 0,
            init_radius: 2.0,
            initial_step_size: 1.0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        let fail = |m: &str| Err(SamplerError::Config(m.to_string()));
        if self.chains == 0 {
            return fail("chains must be at least 1");
        }
        if self.warmup == 0 || self.draws == 0 {
            return fail("warmup and draws must be at least 1");
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return fail("target_accept must lie in (0, 1)");
        }
        if self.max_tree_depth == 0 {
            return fail("max_tree_depth must be at least 1");
        }
        if !(self.divergence_threshold > 0.0) {
            return fail("divergence_threshold must be positive");
        }
        if !(self.init_radius >= 0.0 && self.init_radius.is_finite()) {
            return fail("init_radius must be finite and non-negative");
        }
        if !(self.initial_step_size > 0.0 && self.initial_step_size.is_finite()) {
            return fail("initial_step_size must be positive");
        }
        Ok(())
    }

    fn settings(&self) -> TransitionSettings {
        TransitionSettings {
            max_tree_depth: self.max_tree_depth,
            divergence_threshold: self.divergence_threshold,
        }
    }
}

/// Result of warmup for one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Adaptation {
    pub step_size: f64,
    pub inv_mass: Vec<f64>,
    pub divergences: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    pub chain: usize,
    pub unconstrained: Vec<Vec<f64>>,
    pub constrained: Vec<Vec<f64>>,
    pub stats: Vec<TransitionStats>,
    pub step_size: f64,
    /// Diagonal of the inverse mass matrix (posterior variance estimate).
    pub inv_mass: Vec<f64>,
    pub warmup_divergences: usize,
}

impl ChainOutput {
    pub fn divergences(&self) -> usize {
        self.stats.iter().filter(|s| s.divergent).count()
    }

    pub fn mean_accept_stat(&self) -> f64 {
        self.stats.iter().map(|s| s.accept_stat).sum::<f64>() / self.stats.len().max(1) as f64
    }
}

/// All chains of one run in chain-index order; failed chains keep their error.
#[derive(Debug)]
pub struct SamplerRun {
    pub names: Vec<String>,
    pub chains: Vec<Result<ChainOutput, SamplerError>>,
}

impl SamplerRun {
    pub fn completed(&self) -> impl Iterator<Item = &ChainOutput> {
        self.chains.iter().filter_map(|c| c.as_ref().ok())
    }

    pub fn total_draws(&self) -> usize {
        self.completed().map(|c| c.stats.len()).sum()
    }
}

pub fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

fn initial_point<T: LogDensity + ?Sized, R: Rng>(
    target: &T,
    radius: f64,
    chain: usize,
    rng: &mut R,
) -> Result<PhasePoint, SamplerError> {
    const ATTEMPTS: usize = 100;
    for _ in 0..ATTEMPTS {
        let q: Vec<f64> = (0..target.dim())
            .map(|_| if radius > 0.0 { rng.random_range(-radius..radius) } else { 0.0 })
            .collect();
        let point = PhasePoint::new(target, q);
        if point.log_density.is_finite() && point.grad.iter().all(|g| g.is_finite()) {
            return Ok(point);
        }
    }
    Err(SamplerError::Initialization {
        chain,
        attempts: ATTEMPTS,
    })
}

/// Runs the warmup phase, returning the final state and the frozen tuning.
pub fn adapt<T: LogDensity + ?Sized, R: Rng>(
    target: &T,
    config: &SamplerConfig,
    mut state: PhasePoint,
    chain: usize,
    rng: &mut R,
) -> Result<(PhasePoint, Adaptation), SamplerError> {
    let dim = target.dim();
    let settings = config.settings();
    let schedule = WarmupSchedule::new(config.warmup);
    let mut inv_mass = vec![1.0; dim];
    let mut step = find_reasonable_step_size(target, &state, &inv_mass, config.initial_step_size, rng);
    let mut averaging = DualAveraging::new(step, config.target_accept);
    let mut estimator = VarianceEstimator::new(dim);
    let mut divergences = 0;

    for i in 0..config.warmup {
        let (next, stats) = nuts_draw(&state, step, &inv_mass, target, settings, rng);
        state = next;
        if stats.divergent {
            divergences += 1;
        }
        averaging.update(stats.accept_stat);
        step = averaging.current();

        if schedule.in_slow_window(i) {
            estimator.add(&state.position);
            if schedule.is_window_end(i) {
                inv_mass = estimator.regularized();
                estimator.reset();
                // The final window refines an already-estimated metric, so the
                // step-size averaging carries over instead of restarting.
                let refining = schedule.window_ends.len() > 1 && schedule.window_ends.last() == Some(&(i + 1));
                if !refining {
                    step = find_reasonable_step_size(target, &state, &inv_mass, step, rng);
                    averaging.restart(step);
                }
            }
        }
    }
    if divergences == config.warmup {
        return Err(SamplerError::AllDivergentWarmup { chain });
    }
    Ok((
        state,
        Adaptation {
            step_size: averaging.averaged(),
            inv_mass,
            divergences,
        },
    ))
}

/// Warmup followed by `config.draws` retained transitions for one chain.
pub fn run_chain<T: LogDensity + ?Sized>(
    target: &T,
    config: &SamplerConfig,
    chain: usize,
) -> Result<ChainOutput, SamplerError> {
    let mut rng = chain_rng(config.seed, chain);
    let start = initial_point(target, config.init_radius, chain, &mut rng)?;
    let (mut state, tuning) = adapt(target, config, start, chain, &mut rng)?;
    let settings = config.settings();

    let mut unconstrained = Vec::with_capacity(config.draws);
    let mut constrained = Vec::with_capacity(config.draws);
    let mut stats = Vec::with_capacity(config.draws);
    for _ in 0..config.draws {
        let (next, s) = nuts_draw(&state, tuning.step_size, &tuning.inv_mass, target, settings, &mut rng);
        state = next;
        constrained.push(target.constrain(&state.position));
        unconstrained.push(state.position.clone());
        stats.push(s);
    }
    let out = ChainOutput {
        chain,
        unconstrained,
        constrained,
        stats,
        step_size: tuning.step_size,
        inv_mass: tuning.inv_mass,
        warmup_divergences: tuning.divergences,
    };
    log::info!(
        "chain {chain}: step size {:.4}, {} divergences, mean accept {:.3}",
        out.step_size,
        out.divergences(),
        out.mean_accept_stat()
    );
    Ok(out)
}

/// Runs all chains in parallel. Only configuration errors fail the whole call.
pub fn run_chains<T: LogDensity + ?Sized>(target: &T, config: &SamplerConfig) -> Result<SamplerRun, SamplerError> {
    config.validate()?;
    let chains: Vec<_> = (0..config.chains)
        .into_par_iter()
        .map(|c| run_chain(target, config, c))
        .collect();
    for (c, r) in chains.iter().enumerate() {
        if let Err(e) = r {
            log::warn!("chain {c} aborted: {e}");
        }
    }
    Ok(SamplerRun {
        names: target.param_names(),
        chains,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Normal {
        sd: f64,
    }

    impl LogDensity for Normal {
        fn dim(&self) -> usize {
            1
        }
        fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
            let v = self.sd * self.sd;
            grad[0] = -x[0] / v;
            -0.5 * x[0] * x[0] / v
        }
    }

    struct Nowhere;

    impl LogDensity for Nowhere {
        fn dim(&self) -> usize {
            2
        }
        fn log_density_and_grad(&self, _: &[f64], grad: &mut [f64]) -> f64 {
            grad.fill(0.0);
            f64::NEG_INFINITY
        }
    }

    fn small(chains: usize, seed: u64) -> SamplerConfig {
        SamplerConfig {
            chains,
            warmup: 500,
            draws: 1000,
            seed,
            ..SamplerConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(SamplerConfig::default().validate().is_ok());
        let bad = SamplerConfig {
            target_accept: 1.0,
            ..SamplerConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SamplerConfig {
            chains: 0,
            ..SamplerConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn mass_adapts_to_wide_normal() {
        let run = run_chains(&Normal { sd: 10.0 }, &small(1, 3)).unwrap();
        let chain = run.chains[0].as_ref().unwrap();
        let m = chain.inv_mass[0];
        assert!((50.0..=200.0).contains(&m), "inverse mass {m}");
    }

    #[test]
    fn realized_acceptance_near_target() {
        let config = SamplerConfig {
            chains: 4,
            seed: 8,
            ..SamplerConfig::default()
        };
        let run = run_chains(&Normal { sd: 1.0 }, &config).unwrap();
        for chain in run.completed() {
            let a = chain.mean_accept_stat();
            assert!((0.7..=0.9).contains(&a), "accept {a}");
        }
    }

    #[test]
    fn deterministic_for_equal_seeds() {
        let a = run_chains(&Normal { sd: 2.0 }, &small(2, 42)).unwrap();
        let b = run_chains(&Normal { sd: 2.0 }, &small(2, 42)).unwrap();
        for (x, y) in a.chains.iter().zip(&b.chains) {
            let (x, y) = (x.as_ref().unwrap(), y.as_ref().unwrap());
            assert_eq!(x.step_size.to_bits(), y.step_size.to_bits());
            assert_eq!(x.inv_mass, y.inv_mass);
            assert_eq!(x.unconstrained, y.unconstrained);
        }
        let c = run_chains(&Normal { sd: 2.0 }, &small(2, 43)).unwrap();
        assert_ne!(
            a.chains[0].as_ref().unwrap().unconstrained,
            c.chains[0].as_ref().unwrap().unconstrained
        );
    }

    #[test]
    fn retained_draw_count_matches_config() {
        let config = SamplerConfig {
            chains: 4,
            warmup: 150,
            draws: 200,
            seed: 1,
            ..SamplerConfig::default()
        };
        let run = run_chains(&Normal { sd: 1.0 }, &config).unwrap();
        assert_eq!(run.total_draws(), 800);
        assert_eq!(run.names, vec!["x[0]"]);
    }

    #[test]
    fn single_chain_moments() {
        let config = SamplerConfig {
            chains: 1,
            warmup: 1000,
            draws: 4000,
            seed: 17,
            ..SamplerConfig::default()
        };
        let run = run_chains(&Normal { sd: 1.0 }, &config).unwrap();
        let xs: Vec<f64> = run.chains[0].as_ref().unwrap().unconstrained.iter().map(|d| d[0]).collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((0.9..=1.1).contains(&var), "var {var}");
    }

    #[test]
    fn unreachable_target_reports_per_chain_failure() {
        let run = run_chains(&Nowhere, &small(2, 0)).unwrap();
        assert_eq!(run.chains.len(), 2);
        assert!(run
            .chains
            .iter()
            .all(|c| matches!(c, Err(SamplerError::Initialization { .. }))));
        assert_eq!(run.total_draws(), 0);
    }
}
