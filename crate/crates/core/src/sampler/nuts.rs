//! Leapfrog integration and the slice-sampling No-U-Turn transition with
//! recursive trajectory doubling.

use rand::Rng;
use rand_distr::StandardNormal;

use super::LogDensity;

/// Position, momentum, and the cached log-density and gradient at the position.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint {
    pub position: Vec<f64>,
    pub momentum: Vec<f64>,
    pub grad: Vec<f64>,
    pub log_density: f64,
}

impl PhasePoint {
    /// Evaluates the target at `position`; momentum starts at zero.
    pub fn new<T: LogDensity + ?Sized>(target: &T, position: Vec<f64>) -> Self {
        let mut grad = vec![0.0; position.len()];
        let log_density = target.log_density_and_grad(&position, &mut grad);
        let momentum = vec![0.0; position.len()];
        Self {
            position,
            momentum,
            grad,
            log_density,
        }
    }

    pub fn kinetic_energy(&self, inv_mass: &[f64]) -> f64 {
        0.5 * self
            .momentum
            .iter()
            .zip(inv_mass)
            .map(|(p, m)| p * p * m)
            .sum::<f64>()
    }

    /// H = −ln π(q) + ½ pᵀ M⁻¹ p
    pub fn hamiltonian(&self, inv_mass: &[f64]) -> f64 {
        let h = -self.log_density + self.kinetic_energy(inv_mass);
        if h.is_nan() {
            f64::INFINITY
        } else {
            h
        }
    }

    pub fn resample_momentum<R: Rng + ?Sized>(&mut self, inv_mass: &[f64], rng: &mut R) {
        for (p, m) in self.momentum.iter_mut().zip(inv_mass) {
            let z: f64 = rng.sample(StandardNormal);
            *p = z / m.sqrt();
        }
    }
}

/// One half-kick / drift / half-kick step. Returns the new Hamiltonian;
/// a non-finite value signals a divergence to the caller.
pub fn leapfrog<T: LogDensity + ?Sized>(
    target: &T,
    state: &mut PhasePoint,
    step_size: f64,
    inv_mass: &[f64],
) -> f64 {
    let half = 0.5 * step_size;
    for (p, g) in state.momentum.iter_mut().zip(&state.grad) {
        *p += half * g;
    }
    for ((q, p), m) in state.position.iter_mut().zip(&state.momentum).zip(inv_mass) {
        *q += step_size * m * p;
    }
    state.log_density = target.log_density_and_grad(&state.position, &mut state.grad);
    for (p, g) in state.momentum.iter_mut().zip(&state.grad) {
        *p += half * g;
    }
    state.hamiltonian(inv_mass)
}

/// Per-transition sampler statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionStats {
    pub tree_depth: u32,
    pub n_leapfrog: u32,
    pub divergent: bool,
    /// Hamiltonian of the selected point.
    pub energy: f64,
    /// Mean Metropolis acceptance probability over the final trajectory.
    pub accept_stat: f64,
    /// The doubling stopped at `max_tree_depth` rather than on a U-turn.
    pub depth_saturated: bool,
}

/// Settings consumed by a single transition.
#[derive(Debug, Clone, Copy)]
pub struct TransitionSettings {
    pub max_tree_depth: u32,
    pub divergence_threshold: f64,
}

struct Subtree {
    minus: PhasePoint,
    plus: PhasePoint,
    proposal: PhasePoint,
    n_valid: u64,
    keep_going: bool,
    sum_accept: f64,
    n_accept: u64,
}

struct Trajectory<'a, T: ?Sized> {
    target: &'a T,
    inv_mass: &'a [f64],
    step_size: f64,
    log_slice: f64,
    initial_joint: f64,
    threshold: f64,
    n_leapfrog: u32,
    divergent: bool,
}

fn no_u_turn(minus: &PhasePoint, plus: &PhasePoint, inv_mass: &[f64]) -> bool {
    let mut dot_minus = 0.0;
    let mut dot_plus = 0.0;
    for i in 0..minus.position.len() {
        let dq = plus.position[i] - minus.position[i];
        dot_minus += dq * inv_mass[i] * minus.momentum[i];
        dot_plus += dq * inv_mass[i] * plus.momentum[i];
    }
    dot_minus >= 0.0 && dot_plus >= 0.0
}

impl<T: LogDensity + ?Sized> Trajectory<'_, T> {
    fn build<R: Rng + ?Sized>(&mut self, start: &PhasePoint, direction: f64, depth: u32, rng: &mut R) -> Subtree {
        if depth == 0 {
            let mut next = start.clone();
            let h = leapfrog(self.target, &mut next, direction * self.step_size, self.inv_mass);
            self.n_leapfrog += 1;
            let joint = -h;
            let n_valid = u64::from(self.log_slice <= joint);
            let keep_going = self.log_slice < self.threshold + joint;
            if !keep_going {
                self.divergent = true;
            }
            let accept = if joint.is_finite() {
                (joint - self.initial_joint).exp().min(1.0)
            } else {
                0.0
            };
            return Subtree {
                minus: next.clone(),
                plus: next.clone(),
                proposal: next,
                n_valid,
                keep_going,
                sum_accept: accept,
                n_accept: 1,
            };
        }
        let mut inner = self.build(start, direction, depth - 1, rng);
        if !inner.keep_going {
            return inner;
        }
        let edge = if direction < 0.0 { &inner.minus } else { &inner.plus };
        let outer = self.build(&edge.clone(), direction, depth - 1, rng);
        let total = inner.n_valid + outer.n_valid;
        if total > 0 && rng.random::<f64>() < outer.n_valid as f64 / total as f64 {
            inner.proposal = outer.proposal;
        }
        if direction < 0.0 {
            inner.minus = outer.minus;
        } else {
            inner.plus = outer.plus;
        }
        inner.sum_accept += outer.sum_accept;
        inner.n_accept += outer.n_accept;
        inner.n_valid = total;
        inner.keep_going = outer.keep_going && no_u_turn(&inner.minus, &inner.plus, self.inv_mass);
        inner
    }
}

/// One NUTS transition from `current` (whose momentum is resampled).
pub fn nuts_draw<T: LogDensity + ?Sized, R: Rng + ?Sized>(
    current: &PhasePoint,
    step_size: f64,
    inv_mass: &[f64],
    target: &T,
    settings: TransitionSettings,
    rng: &mut R,
) -> (PhasePoint, TransitionStats) {
    let mut start = current.clone();
    start.resample_momentum(inv_mass, rng);
    let initial_joint = -start.hamiltonian(inv_mass);
    let u: f64 = rng.random();
    // ln of a uniform draw on (0, e^joint]
    let log_slice = initial_joint + (1.0 - u).ln();

    let mut traj = Trajectory {
        target,
        inv_mass,
        step_size,
        log_slice,
        initial_joint,
        threshold: settings.divergence_threshold,
        n_leapfrog: 0,
        divergent: false,
    };
    let mut minus = start.clone();
    let mut plus = start.clone();
    let mut proposal = start;
    let mut n_valid: u64 = 1;
    let mut keep_going = true;
    let mut depth = 0;
    let mut sum_accept = 0.0;
    let mut n_accept = 0;

    while keep_going && depth < settings.max_tree_depth {
        let direction = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let sub = if direction < 0.0 {
            let sub = traj.build(&minus, direction, depth, rng);
            minus = sub.minus.clone();
            sub
        } else {
            let sub = traj.build(&plus, direction, depth, rng);
            plus = sub.plus.clone();
            sub
        };
        if sub.keep_going && rng.random::<f64>() < (sub.n_valid as f64 / n_valid as f64).min(1.0) {
            proposal = sub.proposal;
        }
        n_valid += sub.n_valid;
        sum_accept += sub.sum_accept;
        n_accept += sub.n_accept;
        keep_going = sub.keep_going && no_u_turn(&minus, &plus, inv_mass);
        depth += 1;
    }

    let stats = TransitionStats {
        tree_depth: depth,
        n_leapfrog: traj.n_leapfrog,
        divergent: traj.divergent,
        energy: proposal.hamiltonian(inv_mass),
        accept_stat: if n_accept > 0 { sum_accept / n_accept as f64 } else { 0.0 },
        depth_saturated: keep_going && depth >= settings.max_tree_depth,
    };
    (proposal, stats)
}

/// Doubles or halves `step_size` until a single leapfrog step crosses an
/// acceptance probability of one half.
pub fn find_reasonable_step_size<T: LogDensity + ?Sized, R: Rng + ?Sized>(
    target: &T,
    current: &PhasePoint,
    inv_mass: &[f64],
    initial: f64,
    rng: &mut R,
) -> f64 {
    let mut start = current.clone();
    start.resample_momentum(inv_mass, rng);
    let h0 = start.hamiltonian(inv_mass);
    let log_ratio = |eps: f64| {
        let mut s = start.clone();
        let h = leapfrog(target, &mut s, eps, inv_mass);
        let r = h0 - h;
        if r.is_nan() {
            f64::NEG_INFINITY
        } else {
            r
        }
    };
    let mut eps = initial;
    let direction: f64 = if log_ratio(eps) > 0.5f64.ln() { 1.0 } else { -1.0 };
    for _ in 0..100 {
        let r = log_ratio(eps);
        if direction * r <= -direction * 2f64.ln() {
            break;
        }
        eps *= 2f64.powf(direction);
        if !(1e-10..=1e7).contains(&eps) {
            break;
        }
    }
    eps.clamp(1e-10, 1e7)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct StdNormal(usize);

    impl LogDensity for StdNormal {
        fn dim(&self) -> usize {
            self.0
        }
        fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
            for (g, v) in grad.iter_mut().zip(x) {
                *g = -v;
            }
            -0.5 * x.iter().map(|v| v * v).sum::<f64>()
        }
    }

    /// Finite only at the origin.
    struct Spike;

    impl LogDensity for Spike {
        fn dim(&self) -> usize {
            1
        }
        fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
            grad[0] = 0.0;
            if x[0] == 0.0 {
                0.0
            } else {
                f64::NEG_INFINITY
            }
        }
    }

    #[test]
    fn harmonic_oscillator_conserves_energy() {
        let target = StdNormal(1);
        let mut s = PhasePoint::new(&target, vec![1.0]);
        let h0 = s.hamiltonian(&[1.0]);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let h = leapfrog(&target, &mut s, 0.01, &[1.0]);
            worst = worst.max((h - h0).abs());
        }
        assert!(worst < 1e-3, "drift {worst}");
    }

    #[test]
    fn leapfrog_is_reversible() {
        let target = StdNormal(3);
        let mut s = PhasePoint::new(&target, vec![0.3, -1.2, 2.0]);
        s.momentum = vec![0.5, 0.1, -0.7];
        let start = s.clone();
        let inv_mass = [1.0, 2.0, 0.5];
        for _ in 0..25 {
            leapfrog(&target, &mut s, 0.1, &inv_mass);
        }
        s.momentum.iter_mut().for_each(|p| *p = -*p);
        for _ in 0..25 {
            leapfrog(&target, &mut s, 0.1, &inv_mass);
        }
        for (a, b) in s.position.iter().zip(&start.position) {
            assert!((a - b).abs() < 1e-10);
        }
        for (a, b) in s.momentum.iter().zip(&start.momentum) {
            assert!((a + b).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_step_is_identity() {
        let target = StdNormal(2);
        let mut s = PhasePoint::new(&target, vec![0.4, -0.9]);
        s.momentum = vec![1.0, 2.0];
        let before = s.clone();
        leapfrog(&target, &mut s, 0.0, &[1.0, 1.0]);
        assert_eq!(s, before);
    }

    #[test]
    fn degenerate_target_never_moves() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut state = PhasePoint::new(&Spike, vec![0.0]);
        let settings = TransitionSettings {
            max_tree_depth: 10,
            divergence_threshold: 1000.0,
        };
        for _ in 0..100 {
            let (next, stats) = nuts_draw(&state, 0.1, &[1.0], &Spike, settings, &mut rng);
            assert_eq!(next.position, vec![0.0]);
            assert!(stats.divergent);
            state = next;
        }
    }

    #[test]
    fn fixed_step_standard_normal_moments() {
        let target = StdNormal(1);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut state = PhasePoint::new(&target, vec![0.0]);
        let settings = TransitionSettings {
            max_tree_depth: 10,
            divergence_threshold: 1000.0,
        };
        let mut xs = Vec::new();
        for _ in 0..4000 {
            let (next, _) = nuts_draw(&state, 0.8, &[1.0], &target, settings, &mut rng);
            xs.push(next.position[0]);
            state = next;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((0.9..=1.1).contains(&var), "var {var}");
    }
}
