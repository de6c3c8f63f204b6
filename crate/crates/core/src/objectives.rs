//! Stochastic gradient oracles the optimizer and tuner run against:
//! diagonal noisy quadratics and a two-curvature piecewise toy whose
//! gradient-to-displacement ratio switches at a breakpoint.

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// A differentiable objective observed through noisy gradients. The sampling
/// distribution is unbiased: averaging `sample_gradient` over its randomness
/// recovers `full_gradient`. All built-ins place the optimum at the origin.
pub trait StochasticObjective: Send + Sync {
    fn dimension(&self) -> usize;

    /// One stochastic gradient at `x`, driven by the caller's generator.
    fn sample_gradient(&self, x: &[f64], rng: &mut dyn RngCore) -> Vec<f64>;

    /// The exact gradient at `x`.
    fn full_gradient(&self, x: &[f64]) -> Vec<f64>;

    /// Objective value at `x`, when the oracle defines one.
    fn loss(&self, x: &[f64]) -> Option<f64>;

    fn optimum(&self) -> Vec<f64> {
        vec![0.0; self.dimension()]
    }
}

/// Diagonal quadratic `f(x) = mean_j sum_i (h_i/2)(x_i - c_{i,j})^2` with
/// per-dimension curvatures and centered component offsets. Sampling picks
/// one component index per step, shared across dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalNoisyQuadratic {
    curvatures: Vec<f64>,
    /// offsets[i][j] = offset of component j in dimension i; rows centered.
    offsets: Vec<Vec<f64>>,
    component_count: usize,
}

impl DiagonalNoisyQuadratic {
    pub fn new(curvatures: Vec<f64>, offsets_per_dim: Vec<Vec<f64>>) -> Result<Self> {
        if curvatures.is_empty() {
            return Err(Error::domain("at least one curvature is required"));
        }
        if curvatures.iter().any(|h| !h.is_finite() || *h <= 0.0) {
            return Err(Error::domain("curvatures must be positive reals"));
        }
        let offsets = if offsets_per_dim.is_empty() {
            vec![vec![0.0]; curvatures.len()]
        } else {
            if offsets_per_dim.len() != curvatures.len() {
                return Err(Error::DimensionMismatch {
                    expected: curvatures.len(),
                    got: offsets_per_dim.len(),
                });
            }
            let n = offsets_per_dim[0].len();
            if n == 0 {
                return Err(Error::domain("offset lists must be non-empty"));
            }
            if offsets_per_dim.iter().any(|row| row.len() != n) {
                return Err(Error::domain(
                    "all dimensions must have the same number of component offsets",
                ));
            }
            if offsets_per_dim
                .iter()
                .any(|row| row.iter().any(|c| !c.is_finite()))
            {
                return Err(Error::domain("offsets must be finite"));
            }
            offsets_per_dim
                .into_iter()
                .map(|row| {
                    let mean = row.iter().sum::<f64>() / row.len() as f64;
                    row.iter().map(|c| c - mean).collect()
                })
                .collect()
        };
        let component_count = offsets[0].len();
        Ok(Self {
            curvatures,
            offsets,
            component_count,
        })
    }

    pub fn curvatures(&self) -> &[f64] {
        &self.curvatures
    }

    pub fn component_count(&self) -> usize {
        self.component_count
    }

    /// Total single-sample gradient variance, summed over dimensions:
    /// `sum_i h_i^2 mean_j c_{i,j}^2`.
    pub fn gradient_variance(&self) -> f64 {
        self.curvatures
            .iter()
            .zip(&self.offsets)
            .map(|(h, row)| {
                let mean_sq = row.iter().map(|c| c * c).sum::<f64>() / row.len() as f64;
                h * h * mean_sq
            })
            .sum()
    }
}

impl StochasticObjective for DiagonalNoisyQuadratic {
    fn dimension(&self) -> usize {
        self.curvatures.len()
    }

    fn sample_gradient(&self, x: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
        let j = rng.random_range(0..self.component_count);
        self.curvatures
            .iter()
            .zip(&self.offsets)
            .zip(x)
            .map(|((h, row), xi)| h * (xi - row[j]))
            .collect()
    }

    fn full_gradient(&self, x: &[f64]) -> Vec<f64> {
        self.curvatures.iter().zip(x).map(|(h, xi)| h * xi).collect()
    }

    fn loss(&self, x: &[f64]) -> Option<f64> {
        let n = self.component_count as f64;
        let value = self
            .curvatures
            .iter()
            .zip(&self.offsets)
            .zip(x)
            .map(|((h, row), xi)| {
                let offset_constant = h / (2.0 * n) * row.iter().map(|c| c * c).sum::<f64>();
                h / 2.0 * xi * xi + offset_constant
            })
            .sum();
        Some(value)
    }
}

/// One-dimensional objective whose gradient is `h(x) * x` with
/// `h(x) = inner_curvature` for `|x| <= breakpoint` (ties included) and
/// `outer_curvature` beyond it, plus optional additive Gaussian noise.
/// The gradient-to-displacement ratio relative to the origin is exactly
/// `h(x)`, so the curvature range of the tuning rule is known in closed
/// form.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseCurvatureObjective {
    breakpoint: f64,
    inner_curvature: f64,
    outer_curvature: f64,
    additive_noise_std: f64,
}

impl PiecewiseCurvatureObjective {
    pub fn new(
        inner_curvature: f64,
        outer_curvature: f64,
        breakpoint: f64,
        additive_noise_std: f64,
    ) -> Result<Self> {
        for (name, v) in [
            ("inner curvature", inner_curvature),
            ("outer curvature", outer_curvature),
            ("breakpoint", breakpoint),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::domain(format!("{name} must be positive, got {v}")));
            }
        }
        if !additive_noise_std.is_finite() || additive_noise_std < 0.0 {
            return Err(Error::domain(format!(
                "noise level must be nonnegative, got {additive_noise_std}"
            )));
        }
        Ok(Self {
            breakpoint,
            inner_curvature,
            outer_curvature,
            additive_noise_std,
        })
    }

    pub fn breakpoint(&self) -> f64 {
        self.breakpoint
    }

    pub fn inner_curvature(&self) -> f64 {
        self.inner_curvature
    }

    pub fn outer_curvature(&self) -> f64 {
        self.outer_curvature
    }

    /// Local gradient-to-displacement ratio at `x`.
    pub fn curvature_at(&self, x: f64) -> f64 {
        if x.abs() <= self.breakpoint {
            self.inner_curvature
        } else {
            self.outer_curvature
        }
    }

    /// Dynamic range of the curvature, `max(h) / min(h)`.
    pub fn condition_number(&self) -> f64 {
        let hi = self.inner_curvature.max(self.outer_curvature);
        let lo = self.inner_curvature.min(self.outer_curvature);
        hi / lo
    }

    pub fn curvature_min(&self) -> f64 {
        self.inner_curvature.min(self.outer_curvature)
    }

    pub fn curvature_max(&self) -> f64 {
        self.inner_curvature.max(self.outer_curvature)
    }
}

impl StochasticObjective for PiecewiseCurvatureObjective {
    fn dimension(&self) -> usize {
        1
    }

    fn sample_gradient(&self, x: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
        let mut g = self.full_gradient(x);
        if self.additive_noise_std > 0.0 {
            let normal = Normal::new(0.0, self.additive_noise_std)
                .expect("noise level validated at construction");
            g[0] += normal.sample(rng);
        }
        g
    }

    fn full_gradient(&self, x: &[f64]) -> Vec<f64> {
        vec![self.curvature_at(x[0]) * x[0]]
    }

    fn loss(&self, x: &[f64]) -> Option<f64> {
        // Piecewise integral of the gradient field, continuous at the
        // breakpoint.
        let a = x[0].abs();
        let bp = self.breakpoint;
        let value = if a <= bp {
            self.inner_curvature / 2.0 * a * a
        } else {
            self.inner_curvature / 2.0 * bp * bp + self.outer_curvature / 2.0 * (a * a - bp * bp)
        };
        Some(value)
    }
}

/// Builds a diagonal noisy quadratic. An empty `offsets_per_dim` yields the
/// deterministic quadratic.
pub fn make_noisy_quadratic(
    curvatures: Vec<f64>,
    offsets_per_dim: Vec<Vec<f64>>,
) -> Result<DiagonalNoisyQuadratic> {
    DiagonalNoisyQuadratic::new(curvatures, offsets_per_dim)
}

/// Builds the noiseless two-curvature toy objective.
pub fn make_two_curvature_toy(
    inner: f64,
    outer: f64,
    breakpoint: f64,
) -> Result<PiecewiseCurvatureObjective> {
    PiecewiseCurvatureObjective::new(inner, outer, breakpoint, 0.0)
}

/// Ratio `full_gradient(x)_i / (x_i - optimum_i)` realized by the objective
/// at a given coordinate.
pub fn generalized_curvature(
    objective: &dyn StochasticObjective,
    x: &[f64],
    coordinate: usize,
) -> Result<f64> {
    if coordinate >= objective.dimension() {
        return Err(Error::DimensionMismatch {
            expected: objective.dimension(),
            got: coordinate,
        });
    }
    let displacement = x[coordinate] - objective.optimum()[coordinate];
    if displacement == 0.0 {
        return Err(Error::domain(
            "generalized curvature is undefined at the optimum",
        ));
    }
    Ok(objective.full_gradient(x)[coordinate] / displacement)
}
