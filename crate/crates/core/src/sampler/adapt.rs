//! Warmup adaptation: dual-averaging step size and a windowed diagonal
//! inverse-mass estimate.

/// Nesterov dual averaging of `ln ε` toward a target acceptance statistic.
#[derive(Debug, Clone)]
pub struct DualAveraging {
    target: f64,
    gamma: f64,
    t0: f64,
    kappa: f64,
    mu: f64,
    log_step: f64,
    log_step_bar: f64,
    h_bar: f64,
    count: u64,
}

impl DualAveraging {
    pub fn new(initial_step: f64, target: f64) -> Self {
        Self {
            target,
            gamma: 0.05,
            t0: 10.0,
            kappa: 0.75,
            mu: (10.0 * initial_step).ln(),
            log_step: initial_step.ln(),
            log_step_bar: 0.0,
            h_bar: 0.0,
            count: 0,
        }
    }

    /// Restarts the averaging around a new initial step size.
    pub fn restart(&mut self, initial_step: f64) {
        *self = Self::new(initial_step, self.target);
    }

    pub fn update(&mut self, accept_stat: f64) {
        self.count += 1;
        let m = self.count as f64;
        let eta = 1.0 / (m + self.t0);
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.target - accept_stat);
        self.log_step = self.mu - m.sqrt() / self.gamma * self.h_bar;
        let w = m.powf(-self.kappa);
        self.log_step_bar = w * self.log_step + (1.0 - w) * self.log_step_bar;
    }

    pub fn current(&self) -> f64 {
        self.log_step.exp()
    }

    /// The averaged step size used once warmup ends.
    pub fn averaged(&self) -> f64 {
        if self.count == 0 {
            self.current()
        } else {
            self.log_step_bar.exp()
        }
    }
}

/// Welford running variance per coordinate.
#[derive(Debug, Clone)]
pub struct VarianceEstimator {
    count: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl VarianceEstimator {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn add(&mut self, x: &[f64]) {
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let delta = v - *m;
            *m += delta / n;
            *s += delta * (v - *m);
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Sample variances shrunk toward 1e-3 as in the Stan warmup.
    pub fn regularized(&self) -> Vec<f64> {
        let n = self.count as f64;
        self.m2
            .iter()
            .map(|s| {
                let var = if self.count > 1 { s / (n - 1.0) } else { 1.0 };
                (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            })
            .collect()
    }

    pub fn reset(&mut self) {
        let dim = self.mean.len();
        *self = Self::new(dim);
    }
}

/// Warmup phases: an initial fast buffer, doubling slow windows that feed the
/// mass-matrix estimate, and a terminal fast buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WarmupSchedule {
    pub init_buffer: usize,
    pub term_buffer: usize,
    /// Exclusive iteration index at which each slow window ends.
    pub window_ends: Vec<usize>,
}

impl WarmupSchedule {
    pub const INIT_BUFFER: usize = 75;
    pub const TERM_BUFFER: usize = 50;
    pub const BASE_WINDOW: usize = 25;

    pub fn new(warmup: usize) -> Self {
        let (init, term, base) = if warmup >= Self::INIT_BUFFER + Self::TERM_BUFFER + Self::BASE_WINDOW {
            (Self::INIT_BUFFER, Self::TERM_BUFFER, Self::BASE_WINDOW)
        } else {
            // Short warmups keep the same proportions (15% / 75% / 10%).
            let init = (0.15 * warmup as f64) as usize;
            let term = (0.1 * warmup as f64) as usize;
            (init, term, warmup.saturating_sub(init + term))
        };
        let end_slow = warmup.saturating_sub(term);
        let mut window_ends = Vec::new();
        let mut start = init;
        let mut width = base.max(1);
        while start < end_slow {
            let mut end = start + width;
            if end + 2 * width > end_slow {
                end = end_slow;
            }
            window_ends.push(end);
            start = end;
            width *= 2;
        }
        Self {
            init_buffer: init,
            term_buffer: term,
            window_ends,
        }
    }

    pub fn in_slow_window(&self, iteration: usize) -> bool {
        iteration >= self.init_buffer && self.window_ends.last().is_some_and(|&e| iteration < e)
    }

    pub fn is_window_end(&self, iteration: usize) -> bool {
        self.window_ends.contains(&(iteration + 1))
    }
}
