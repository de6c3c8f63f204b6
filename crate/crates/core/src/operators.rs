//! Momentum bias and variance operators on a scalar quadratic, their spectral
//! radii in closed form, and the classical noiseless tuning rule.
//!
//! For learning rate `alpha`, momentum `mu` and curvature `h`, one momentum
//! step acts on the pair `(x_t - x*, x_{t-1} - x*)` through the 2x2 companion
//! matrix `A` with top row `[1 - alpha*h + mu, -mu]`, and on the second-moment
//! triple through a 3x3 matrix `B`. Both characteristic polynomials factor
//! through the scalar `m = 1 - alpha*h + mu`:
//!
//! * eigenvalues of `A` solve `lambda^2 - m*lambda + mu = 0`,
//! * eigenvalues of `B` are `mu` plus the two roots of `(lambda + mu)^2 = lambda*m^2`.
//!
//! Whenever `(1 - sqrt(mu))^2 <= alpha*h <= (1 + sqrt(mu))^2` (the *robust
//! region*) the roots are conjugate pairs and the radii collapse to `sqrt(mu)`
//! and `mu` exactly, independent of `alpha` and `h`.

use crate::error::{Error, Result};

/// Relative slack used when testing robust-region membership. The tuning
/// rules place outputs exactly on the region boundary, where a one-ulp
/// rounding of `alpha * h` must not flip the verdict.
const REGION_SLACK: f64 = 1e-12;

/// A (learning rate, momentum) pair. `learning_rate > 0`, `0 <= momentum < 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparams {
    learning_rate: f64,
    momentum: f64,
}

impl Hyperparams {
    pub fn new(learning_rate: f64, momentum: f64) -> Result<Self> {
        if !learning_rate.is_finite() || learning_rate <= 0.0 {
            return Err(Error::domain(format!(
                "learning rate must be a positive real, got {learning_rate}"
            )));
        }
        if !momentum.is_finite() || !(0.0..1.0).contains(&momentum) {
            return Err(Error::domain(format!(
                "momentum must lie in [0, 1), got {momentum}"
            )));
        }
        Ok(Self {
            learning_rate,
            momentum,
        })
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }
}

/// The 2x2 operator driving the mean iterate pair; row 2 is `[1, 0]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasOperator {
    entries: [[f64; 2]; 2],
    coefficient: f64,
    momentum: f64,
}

impl BiasOperator {
    pub fn entries(&self) -> &[[f64; 2]; 2] {
        &self.entries
    }

    /// The scalar `m = 1 - alpha*h + mu` this operator was built from.
    pub fn coefficient(&self) -> f64 {
        self.coefficient
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn apply(&self, pair: [f64; 2]) -> [f64; 2] {
        [
            self.entries[0][0] * pair[0] + self.entries[0][1] * pair[1],
            pair[0],
        ]
    }
}

/// The 3x3 operator driving `(U_{t+1}, U_t, V_{t+1})`; row 2 is `[1, 0, 0]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceOperator {
    entries: [[f64; 3]; 3],
    coefficient: f64,
    momentum: f64,
}

impl VarianceOperator {
    pub fn entries(&self) -> &[[f64; 3]; 3] {
        &self.entries
    }

    pub fn coefficient(&self) -> f64 {
        self.coefficient
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn apply(&self, triple: [f64; 3]) -> [f64; 3] {
        let m = &self.entries;
        [
            m[0][0] * triple[0] + m[0][1] * triple[1] + m[0][2] * triple[2],
            triple[0],
            m[2][0] * triple[0] + m[2][2] * triple[2],
        ]
    }
}

/// Membership query for the robust region of a curvature range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustRegionQuery {
    hyperparams: Hyperparams,
    curvature_min: f64,
    curvature_max: f64,
}

impl RobustRegionQuery {
    pub fn new(hyperparams: Hyperparams, curvature_min: f64, curvature_max: f64) -> Result<Self> {
        check_curvature_range(curvature_min, curvature_max)?;
        Ok(Self {
            hyperparams,
            curvature_min,
            curvature_max,
        })
    }

    pub fn hyperparams(&self) -> &Hyperparams {
        &self.hyperparams
    }

    pub fn curvature_min(&self) -> f64 {
        self.curvature_min
    }

    pub fn curvature_max(&self) -> f64 {
        self.curvature_max
    }

    /// Generalized condition number `curvature_max / curvature_min`.
    pub fn condition_number(&self) -> f64 {
        self.curvature_max / self.curvature_min
    }
}

fn check_curvature(curvature: f64) -> Result<()> {
    if !curvature.is_finite() || curvature <= 0.0 {
        return Err(Error::domain(format!(
            "curvature must be a positive real, got {curvature}"
        )));
    }
    Ok(())
}

fn check_curvature_range(curvature_min: f64, curvature_max: f64) -> Result<()> {
    check_curvature(curvature_min)?;
    check_curvature(curvature_max)?;
    if curvature_min > curvature_max {
        return Err(Error::domain(format!(
            "curvature range requires min <= max, got [{curvature_min}, {curvature_max}]"
        )));
    }
    Ok(())
}

/// The scalar `m = 1 - alpha*h + mu` that both characteristic polynomials
/// factor through.
pub fn momentum_coefficient(alpha: f64, mu: f64, curvature: f64) -> f64 {
    1.0 - alpha * curvature + mu
}

pub fn build_bias_operator(hp: &Hyperparams, curvature: f64) -> Result<BiasOperator> {
    check_curvature(curvature)?;
    let m = momentum_coefficient(hp.learning_rate, hp.momentum, curvature);
    Ok(BiasOperator {
        entries: [[m, -hp.momentum], [1.0, 0.0]],
        coefficient: m,
        momentum: hp.momentum,
    })
}

pub fn build_variance_operator(hp: &Hyperparams, curvature: f64) -> Result<VarianceOperator> {
    check_curvature(curvature)?;
    let m = momentum_coefficient(hp.learning_rate, hp.momentum, curvature);
    let mu = hp.momentum;
    Ok(VarianceOperator {
        entries: [
            [m * m, mu * mu, -2.0 * mu * m],
            [1.0, 0.0, 0.0],
            [m, 0.0, -mu],
        ],
        coefficient: m,
        momentum: mu,
    })
}

/// Spectral radius of the bias operator from the factored characteristic
/// polynomial `lambda^2 - m*lambda + mu = 0`.
///
/// Returns exactly `mu.sqrt()` when `m^2 <= 4*mu` (conjugate roots of
/// modulus `sqrt(mu)`), and the dominant real root `(|m| + sqrt(m^2-4mu))/2`
/// otherwise.
pub fn bias_radius_from_coefficient(m: f64, mu: f64) -> f64 {
    let discriminant = m * m - 4.0 * mu;
    if discriminant <= 0.0 {
        mu.sqrt()
    } else {
        (m.abs() + discriminant.sqrt()) / 2.0
    }
}

/// Spectral radius of the variance operator. Its eigenvalues are `mu` plus
/// the roots of `(lambda + mu)^2 = lambda*m^2`; the quadratic discriminant
/// `m^2 (m^2 - 4mu)` shares its sign with the bias discriminant, so inside
/// the robust region the radius is exactly `mu` and outside it equals the
/// squared dominant bias root.
pub fn variance_radius_from_coefficient(m: f64, mu: f64) -> f64 {
    let discriminant = m * m - 4.0 * mu;
    if discriminant <= 0.0 {
        mu
    } else {
        let dominant = (m * m - 2.0 * mu + m.abs() * discriminant.sqrt()) / 2.0;
        dominant.max(mu)
    }
}

/// Max |eigenvalue| of `A` over the two roots of `lambda^2 - m*lambda + mu`.
pub fn spectral_radius_bias(op: &BiasOperator) -> f64 {
    bias_radius_from_coefficient(op.coefficient, op.momentum)
}

/// Max |eigenvalue| of `B` over `mu` and the roots of `(lambda+mu)^2 = lambda*m^2`.
pub fn spectral_radius_variance(op: &VarianceOperator) -> f64 {
    variance_radius_from_coefficient(op.coefficient, op.momentum)
}

/// Raw robust-region membership test
/// `(1-sqrt(mu))^2 <= alpha*h_min` and `alpha*h_max <= (1+sqrt(mu))^2`,
/// with a relative slack of [`REGION_SLACK`] on both comparisons so that
/// boundary-tight hyperparameters (the tuning rules produce these) are not
/// rejected over the last ulp of `alpha * h`.
pub fn robust_region_contains(alpha: f64, mu: f64, curvature_min: f64, curvature_max: f64) -> bool {
    let root = mu.sqrt();
    let lower = (1.0 - root) * (1.0 - root);
    let upper = (1.0 + root) * (1.0 + root);
    lower <= alpha * curvature_min * (1.0 + REGION_SLACK)
        && alpha * curvature_max <= upper * (1.0 + REGION_SLACK)
}

pub fn in_robust_region(query: &RobustRegionQuery) -> bool {
    robust_region_contains(
        query.hyperparams.learning_rate,
        query.hyperparams.momentum,
        query.curvature_min,
        query.curvature_max,
    )
}

/// Noiseless tuning rule for a curvature range `[h_min, h_max]`:
/// `mu = ((sqrt(nu)-1)/(sqrt(nu)+1))^2` with `nu = h_max/h_min`, and the
/// learning rate at the lower end of the admissible interval,
/// `alpha = (1-sqrt(mu))^2 / h_min`. At this choice both robust-region
/// inequalities hold with equality.
pub fn noiseless_tune(curvature_min: f64, curvature_max: f64) -> Result<Hyperparams> {
    check_curvature_range(curvature_min, curvature_max)?;
    let nu_sqrt = (curvature_max / curvature_min).sqrt();
    let mu_root = (nu_sqrt - 1.0) / (nu_sqrt + 1.0);
    let mu = mu_root * mu_root;
    let alpha = (1.0 - mu_root) * (1.0 - mu_root) / curvature_min;
    Hyperparams::new(alpha, mu)
}

/// Worst-case bias and variance radii over the eigendirections of a
/// diagonalizable Hessian. Both block operators decompose along the
/// eigendirections, so the multidimensional radii are the maxima of the
/// per-eigenvalue scalar radii.
pub fn spectral_radius_multidim(
    hessian_eigenvalues: &[f64],
    hp: &Hyperparams,
) -> Result<(f64, f64)> {
    if hessian_eigenvalues.is_empty() {
        return Err(Error::domain(
            "spectral_radius_multidim requires at least one Hessian eigenvalue",
        ));
    }
    let mut bias: f64 = 0.0;
    let mut variance: f64 = 0.0;
    for &h in hessian_eigenvalues {
        check_curvature(h)?;
        let m = momentum_coefficient(hp.learning_rate, hp.momentum, h);
        bias = bias.max(bias_radius_from_coefficient(m, hp.momentum));
        variance = variance.max(variance_radius_from_coefficient(m, hp.momentum));
    }
    Ok((bias, variance))
}
