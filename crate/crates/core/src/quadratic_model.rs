//! Expected squared distance of momentum SGD on a scalar noisy quadratic.
//!
//! The model is `f(x) = (h/2) x^2 + C`, written as the average of `n`
//! components `(h/2)(x - c_i)^2` with centered offsets. Sampling one
//! component per step gives a stochastic gradient `h (x - c_i)` whose
//! variance is `h^2 * mean(c_i^2)`, a constant independent of `x`.
//!
//! The mean iterate pair evolves under the bias operator `A` and the
//! centered second moments `(U_{t+1}, U_t, V_{t+1})` under the variance
//! operator `B` plus the additive source `(alpha^2 * Var, 0, 0)`, starting
//! from `U_1 = U_0 = V_1 = 0` under the convention `x_1 = x_0`. Iterating
//! those recurrences evaluates
//! `bias + variance = (e1' A^t [x1, x0]')^2 + alpha^2 Var e1' (I - B^t)(I - B)^{-1} e1`
//! without forming any matrix inverse, which stays stable even as the
//! spectral radius of `B` approaches one.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::operators::{build_bias_operator, build_variance_operator, Hyperparams};

/// Scalar noisy quadratic with curvature `h` and centered offsets `c_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyQuadratic {
    curvature: f64,
    offsets: Vec<f64>,
}

impl NoisyQuadratic {
    /// Builds the model, centering the offsets so they sum to zero.
    pub fn new(curvature: f64, offsets: Vec<f64>) -> Result<Self> {
        if !curvature.is_finite() || curvature <= 0.0 {
            return Err(Error::domain(format!(
                "curvature must be a positive real, got {curvature}"
            )));
        }
        if offsets.is_empty() {
            return Err(Error::domain("at least one component offset is required"));
        }
        if offsets.iter().any(|c| !c.is_finite()) {
            return Err(Error::domain("offsets must be finite"));
        }
        let mean = offsets.iter().sum::<f64>() / offsets.len() as f64;
        let centered = offsets.iter().map(|c| c - mean).collect();
        Ok(Self {
            curvature,
            offsets: centered,
        })
    }

    /// A noiseless quadratic (single component at the origin).
    pub fn noiseless(curvature: f64) -> Result<Self> {
        Self::new(curvature, vec![0.0])
    }

    pub fn curvature(&self) -> f64 {
        self.curvature
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub fn component_count(&self) -> usize {
        self.offsets.len()
    }

    /// The constant `C = (1/2n) sum h c_i^2` in the objective value.
    pub fn offset_constant(&self) -> f64 {
        let n = self.offsets.len() as f64;
        self.curvature / (2.0 * n) * self.offsets.iter().map(|c| c * c).sum::<f64>()
    }

    /// Variance of the single-component stochastic gradient,
    /// `E (grad_i - grad)^2 = h^2 * mean(c_i^2)`. This is the quantity that
    /// drives the second-moment recurrence (it equals `2h` times
    /// [`offset_constant`](Self::offset_constant)).
    pub fn gradient_variance(&self) -> f64 {
        let n = self.offsets.len() as f64;
        let mean_sq = self.offsets.iter().map(|c| c * c).sum::<f64>() / n;
        self.curvature * self.curvature * mean_sq
    }

    /// Full gradient `h * x`; the optimum sits at the origin.
    pub fn full_gradient(&self, x: f64) -> f64 {
        self.curvature * x
    }

    /// Gradient of component `i`, `h (x - c_i)`.
    pub fn component_gradient(&self, x: f64, index: usize) -> f64 {
        self.curvature * (x - self.offsets[index])
    }
}

/// Mean pair `(xbar_{t+1}, xbar_t)`, second moments `(U_{t+1}, U_t, V_{t+1})`,
/// and the step count `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentState {
    mean_pair: [f64; 2],
    second_moments: [f64; 3],
    step: usize,
}

impl MomentState {
    /// State at step zero: `x_1 = x_0` and no accumulated variance.
    pub fn initial(x0: f64) -> Self {
        Self {
            mean_pair: [x0, x0],
            second_moments: [0.0; 3],
            step: 0,
        }
    }

    pub fn mean_pair(&self) -> [f64; 2] {
        self.mean_pair
    }

    pub fn second_moments(&self) -> [f64; 3] {
        self.second_moments
    }

    pub fn step(&self) -> usize {
        self.step
    }

    /// Squared bias `xbar_{t+1}^2` of the current state.
    pub fn bias_sq(&self) -> f64 {
        self.mean_pair[0] * self.mean_pair[0]
    }

    /// Centered second moment `U_{t+1}` of the current state.
    pub fn variance(&self) -> f64 {
        self.second_moments[0]
    }
}

/// Advances the mean pair by `A` and the second moments by `B` plus the
/// additive noise source `(alpha^2 * Var, 0, 0)`.
pub fn iterate_moments(
    model: &NoisyQuadratic,
    hp: &Hyperparams,
    state: &MomentState,
) -> MomentState {
    let bias_op = build_bias_operator(hp, model.curvature)
        .expect("model curvature was validated at construction");
    let var_op = build_variance_operator(hp, model.curvature)
        .expect("model curvature was validated at construction");
    let alpha = hp.learning_rate();
    let mut second = var_op.apply(state.second_moments);
    second[0] += alpha * alpha * model.gradient_variance();
    MomentState {
        mean_pair: bias_op.apply(state.mean_pair),
        second_moments: second,
        step: state.step + 1,
    }
}

/// Bias/variance decomposition of the expected squared distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SqDistDecomposition {
    pub total: f64,
    pub bias: f64,
    pub variance: f64,
}

/// Expected squared distance `E (x_{steps+1} - x*)^2` after `steps`
/// stochastic momentum updates from `x_1 = x_0`, split into squared bias
/// and variance. `steps = 0` returns the degenerate `(x0^2, x0^2, 0)`.
pub fn exact_expected_sq_dist(
    model: &NoisyQuadratic,
    hp: &Hyperparams,
    x0: f64,
    steps: usize,
) -> SqDistDecomposition {
    let mut state = MomentState::initial(x0);
    for _ in 0..steps {
        state = iterate_moments(model, hp, &state);
    }
    let bias = state.bias_sq();
    let variance = state.variance();
    SqDistDecomposition {
        total: bias + variance,
        bias,
        variance,
    }
}

/// Spectral surrogate for the expected squared distance:
/// `rho_bias^(2t) * x0_sq + (1 - rho_var^t) * alpha^2 C / (1 - rho_var)`.
/// With robust-region radii `(sqrt(mu), mu)` this is the standard
/// `mu^t * x0_sq + (1 - mu^t) * alpha^2 C / (1 - mu)` form.
pub fn surrogate_expected_sq_dist(
    rho_bias: f64,
    rho_var: f64,
    alpha: f64,
    noise: f64,
    x0_sq_dist: f64,
    steps: usize,
) -> Result<f64> {
    for (name, rho) in [("bias", rho_bias), ("variance", rho_var)] {
        if !(0.0..1.0).contains(&rho) {
            return Err(Error::domain(format!(
                "surrogate diverges: {name} radius must lie in [0, 1), got {rho}"
            )));
        }
    }
    if alpha <= 0.0 || noise < 0.0 || x0_sq_dist < 0.0 {
        return Err(Error::domain(
            "surrogate requires alpha > 0, noise >= 0, x0_sq_dist >= 0",
        ));
    }
    let t = steps as i32;
    let bias = rho_bias.powi(2 * t) * x0_sq_dist;
    let variance = (1.0 - rho_var.powi(t)) * alpha * alpha * noise / (1.0 - rho_var);
    Ok(bias + variance)
}

/// Monte Carlo mean and standard error of `(x_{steps+1} - x*)^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
}

fn simulate_trajectory(
    model: &NoisyQuadratic,
    hp: &Hyperparams,
    x0: f64,
    steps: usize,
    rng: &mut ChaCha8Rng,
    mut record: impl FnMut(usize, f64),
) {
    let alpha = hp.learning_rate();
    let mu = hp.momentum();
    let n = model.component_count();
    let mut prev = x0;
    let mut current = x0; // x_1 = x_0
    for t in 1..=steps {
        let index = rng.random_range(0..n);
        let grad = model.component_gradient(current, index);
        let next = current - alpha * grad + mu * (current - prev);
        prev = current;
        current = next;
        record(t, current);
    }
}

/// Mean over `runs` seeded trajectories of the final squared distance.
pub fn monte_carlo_sq_dist(
    model: &NoisyQuadratic,
    hp: &Hyperparams,
    x0: f64,
    steps: usize,
    runs: usize,
    seed: u64,
) -> f64 {
    monte_carlo_sq_dist_with_stderr(model, hp, x0, steps, runs, seed).mean
}

/// Same as [`monte_carlo_sq_dist`] but also reports the standard error of
/// the mean.
pub fn monte_carlo_sq_dist_with_stderr(
    model: &NoisyQuadratic,
    hp: &Hyperparams,
    x0: f64,
    steps: usize,
    runs: usize,
    seed: u64,
) -> McEstimate {
    let per_step = monte_carlo_sq_dist_per_step(model, hp, x0, steps, runs, seed);
    *per_step.last().unwrap_or(&McEstimate {
        mean: x0 * x0,
        stderr: 0.0,
    })
}

/// One Monte Carlo sweep recording mean and standard error of the squared
/// distance after every step `t = 1..=steps`.
pub fn monte_carlo_sq_dist_per_step(
    model: &NoisyQuadratic,
    hp: &Hyperparams,
    x0: f64,
    steps: usize,
    runs: usize,
    seed: u64,
) -> Vec<McEstimate> {
    assert!(runs >= 1, "at least one Monte Carlo run is required");
    let mut sums = vec![0.0f64; steps];
    let mut sq_sums = vec![0.0f64; steps];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..runs {
        simulate_trajectory(model, hp, x0, steps, &mut rng, |t, x| {
            let d = x * x;
            sums[t - 1] += d;
            sq_sums[t - 1] += d * d;
        });
    }
    let n = runs as f64;
    (0..steps)
        .map(|i| {
            let mean = sums[i] / n;
            let var = (sq_sums[i] / n - mean * mean).max(0.0);
            let stderr = if runs > 1 {
                (var / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            McEstimate { mean, stderr }
        })
        .collect()
}
