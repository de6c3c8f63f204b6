//! The closed-form hyperparameter rule and its composition over the
//! measurement estimators, plus adaptive gradient clipping.
//!
//! Substituting the learning-rate constraint `alpha = (1 - x)^2 / h_min`
//! (with `x = sqrt(mu)`) into the one-step objective `mu D^2 + alpha^2 C`
//! gives `p(x) = x^2 D^2 + (1 - x)^4 C / h_min^2`, uni-modal on `[0, 1)`.
//! Its stationary point solves `x D^2 = 2 (1 - x)^3 C / h_min^2`, a cubic
//! in `y = 1 - x` solved in closed form by Vieta's substitution, with a
//! bisection fallback when the coefficient ratio is extreme enough to make
//! the substitution cancel catastrophically. The momentum actually used is
//! the maximum of that root's square and the condition-number bound
//! `((sqrt(h_max/h_min) - 1)/(sqrt(h_max/h_min) + 1))^2`.

use crate::error::{Error, Result};
use crate::measurements::{MeasurementSnapshot, TunerConfig, TunerState};
use crate::operators::Hyperparams;

/// Hyperparameters applied before any measurement exists.
pub const INITIAL_LEARNING_RATE: f64 = 1e-4;
pub const INITIAL_MOMENTUM: f64 = 0.0;

/// Coefficient-ratio window `C / (h_min^2 D^2)` within which the closed-form
/// cubic solution is trusted; outside it the bisection fallback runs.
const CLOSED_FORM_RATIO_RANGE: (f64, f64) = (1e-12, 1e12);

/// Relative slack in the clipping trigger so a freshly clipped gradient
/// (whose norm may land one ulp above the threshold) is a fixed point.
const CLIP_SLACK: f64 = 4.0 * f64::EPSILON;

/// Validated inputs of the one-step rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingleStepInputs {
    variance: f64,
    distance: f64,
    h_max: f64,
    h_min: f64,
}

impl SingleStepInputs {
    pub fn new(variance: f64, distance: f64, h_max: f64, h_min: f64) -> Result<Self> {
        if !variance.is_finite() || variance < 0.0 {
            return Err(Error::domain(format!(
                "gradient variance must be nonnegative, got {variance}"
            )));
        }
        if !distance.is_finite() || distance <= 0.0 {
            return Err(Error::domain(format!(
                "distance must be positive, got {distance}"
            )));
        }
        if !h_min.is_finite() || !h_max.is_finite() || h_min <= 0.0 || h_max < h_min {
            return Err(Error::domain(format!(
                "curvature range requires 0 < h_min <= h_max, got [{h_min}, {h_max}]"
            )));
        }
        Ok(Self {
            variance,
            distance,
            h_max,
            h_min,
        })
    }

    pub fn from_snapshot(snapshot: &MeasurementSnapshot) -> Result<Self> {
        Self::new(
            snapshot.variance,
            snapshot.distance,
            snapshot.h_max,
            snapshot.h_min,
        )
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn distance(&self) -> f64 {
        self.distance
    }

    pub fn h_max(&self) -> f64 {
        self.h_max
    }

    pub fn h_min(&self) -> f64 {
        self.h_min
    }
}

/// Outcome of one tuning decision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TuneDecision {
    pub hyperparams: Hyperparams,
    /// Unconstrained root `x = sqrt(mu_p)` of the one-step objective.
    pub cubic_root: f64,
    /// Whether the condition-number bound overrode the unconstrained root.
    pub constrained: bool,
    /// Gradient-norm threshold `sqrt(h_max)`, present when clipping is on.
    pub clip_threshold: Option<f64>,
}

/// Objective after substituting the learning-rate constraint.
fn objective(x: f64, d_sq: f64, noise_over_hmin_sq: f64) -> f64 {
    let y = 1.0 - x;
    x * x * d_sq + y * y * y * y * noise_over_hmin_sq
}

/// Stationarity residual `x D^2 - 2 (1-x)^3 C / h_min^2`, increasing in `x`.
fn stationarity(x: f64, d_sq: f64, noise_over_hmin_sq: f64) -> f64 {
    let y = 1.0 - x;
    x * d_sq - 2.0 * y * y * y * noise_over_hmin_sq
}

/// Closed-form positive root of `r y^3 + y - 1 = 0` (with `y = 1 - x` and
/// `r = 2C/(D^2 h_min^2)`) via Vieta's substitution on the depressed cubic
/// `y^3 + y/r - 1/r = 0`.
fn cubic_root_vieta(r: f64) -> f64 {
    let p = 1.0 / r;
    let w3 = p / 2.0 + (p * p / 4.0 + p * p * p / 27.0).sqrt();
    let w = w3.cbrt();
    let y = w - p / (3.0 * w);
    1.0 - y
}

/// Monotone bisection on the stationarity residual over [0, 1].
fn cubic_root_bisect(d_sq: f64, noise_over_hmin_sq: f64) -> f64 {
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if stationarity(mid, d_sq, noise_over_hmin_sq) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Solves the one-step rule in closed form.
pub fn single_step(inputs: &SingleStepInputs) -> TuneDecision {
    let d_sq = inputs.distance * inputs.distance;
    let h_min_sq = inputs.h_min * inputs.h_min;
    let noise_over_hmin_sq = inputs.variance / h_min_sq;

    let root = if inputs.variance == 0.0 {
        0.0
    } else {
        let ratio = inputs.variance / (h_min_sq * d_sq);
        let (lo, hi) = CLOSED_FORM_RATIO_RANGE;
        let candidate = if (lo..=hi).contains(&ratio) {
            cubic_root_vieta(2.0 * ratio)
        } else {
            f64::NAN
        };
        if candidate.is_finite() && (0.0..1.0).contains(&candidate) {
            candidate
        } else {
            cubic_root_bisect(d_sq, noise_over_hmin_sq)
        }
    };
    let root = root.clamp(0.0, 1.0 - f64::EPSILON);

    let gcn_sqrt = (inputs.h_max / inputs.h_min).sqrt();
    // Clamp keeps mu < 1 when the measured condition number is so extreme
    // that the bound rounds up to one.
    let gcn_bound_root = ((gcn_sqrt - 1.0) / (gcn_sqrt + 1.0)).min(1.0 - f64::EPSILON);
    let constrained = gcn_bound_root > root;
    let mu_root = if constrained { gcn_bound_root } else { root };
    let mu = mu_root * mu_root;
    let alpha = (1.0 - mu_root) * (1.0 - mu_root) / inputs.h_min;

    TuneDecision {
        hyperparams: Hyperparams::new(alpha, mu)
            .expect("constraint substitution keeps (alpha, mu) in domain"),
        cubic_root: root,
        constrained,
        clip_threshold: None,
    }
}

/// Objective value `p(x)` realized by a candidate root; exposed for
/// optimality checks against grid search.
pub fn single_step_objective(inputs: &SingleStepInputs, x: f64) -> f64 {
    objective(
        x,
        inputs.distance * inputs.distance,
        inputs.variance / (inputs.h_min * inputs.h_min),
    )
}

/// Rescales the gradient to norm `sqrt(h_max)` when it exceeds that
/// threshold; below the threshold the gradient is returned unchanged.
pub fn adaptive_clip(gradient: &[f64], h_max: f64) -> Vec<f64> {
    let mut out = gradient.to_vec();
    adaptive_clip_in_place(&mut out, h_max);
    out
}

/// In-place form of [`adaptive_clip`]; reports whether rescaling happened.
pub fn adaptive_clip_in_place(gradient: &mut [f64], h_max: f64) -> bool {
    debug_assert!(h_max > 0.0);
    let norm_sq: f64 = gradient.iter().map(|g| g * g).sum();
    let threshold = h_max.sqrt();
    if norm_sq.sqrt() <= threshold * (1.0 + CLIP_SLACK) {
        return false;
    }
    let scale = threshold / norm_sq.sqrt();
    for g in gradient.iter_mut() {
        *g *= scale;
    }
    true
}

/// One full tuner: measurement state plus the decision schedule. The first
/// observed gradient yields the fixed initialization `(mu, alpha) =
/// (0, 1e-4)`; every later call solves the one-step rule on the updated
/// measurements, then applies slow start and the learning-rate factor.
#[derive(Debug, Clone)]
pub struct YellowFinTuner {
    state: TunerState,
    lr_factor: f64,
    last: Option<TuneDecision>,
}

impl YellowFinTuner {
    pub fn new(config: TunerConfig, lr_factor: f64) -> Result<Self> {
        if !lr_factor.is_finite() || lr_factor <= 0.0 {
            return Err(Error::domain(format!(
                "learning-rate factor must be positive, got {lr_factor}"
            )));
        }
        Ok(Self {
            state: TunerState::new(config),
            lr_factor,
            last: None,
        })
    }

    pub fn state(&self) -> &TunerState {
        &self.state
    }

    /// The decision most recently produced by [`Self::update`].
    pub fn last_decision(&self) -> Option<&TuneDecision> {
        self.last.as_ref()
    }

    /// Folds one gradient into the estimators and returns the decision for
    /// this step. Zero-norm gradients yield [`Error::ZeroGradient`] and
    /// leave the state untouched; the caller reuses the previous decision.
    pub fn update(&mut self, gradient: &[f64]) -> Result<TuneDecision> {
        let snapshot = self.state.observe(gradient)?;
        let decision = tune_from_snapshot(
            &snapshot,
            self.state.step(),
            self.state.config(),
            self.lr_factor,
        )?;
        self.last = Some(decision);
        Ok(decision)
    }
}

fn tune_from_snapshot(
    snapshot: &MeasurementSnapshot,
    step: usize,
    config: &TunerConfig,
    lr_factor: f64,
) -> Result<TuneDecision> {
    let mut decision = if step <= 1 {
        TuneDecision {
            hyperparams: Hyperparams::new(INITIAL_LEARNING_RATE, INITIAL_MOMENTUM)?,
            cubic_root: 0.0,
            constrained: false,
            clip_threshold: None,
        }
    } else {
        let inputs = SingleStepInputs::from_snapshot(snapshot)?;
        let mut tuned = single_step(&inputs);
        let mut alpha = tuned.hyperparams.learning_rate();
        if config.slow_start_enabled() {
            let ramp = (step as f64) / (10.0 * config.window_width() as f64);
            alpha *= ramp.min(1.0);
        }
        alpha *= lr_factor;
        tuned.hyperparams = Hyperparams::new(alpha, tuned.hyperparams.momentum())?;
        tuned
    };
    if config.clipping_enabled() {
        decision.clip_threshold = Some(snapshot.h_max.sqrt());
    }
    Ok(decision)
}

/// Runs all three estimators on `gradient` and solves the one-step rule,
/// with slow start and the learning-rate factor applied.
pub fn tune(state: &mut TunerState, gradient: &[f64], lr_factor: f64) -> Result<TuneDecision> {
    let snapshot = state.observe(gradient)?;
    let config = *state.config();
    tune_from_snapshot(&snapshot, state.step(), &config, lr_factor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn inputs(c: f64, d: f64, h_max: f64, h_min: f64) -> SingleStepInputs {
        SingleStepInputs::new(c, d, h_max, h_min).unwrap()
    }

    #[test]
    fn input_validation() {
        assert!(SingleStepInputs::new(-1.0, 1.0, 1.0, 1.0).is_err());
        assert!(SingleStepInputs::new(0.0, 0.0, 1.0, 1.0).is_err());
        assert!(SingleStepInputs::new(0.0, 1.0, 1.0, 2.0).is_err());
        assert!(SingleStepInputs::new(0.0, 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn noiseless_flat_curvature_is_plain_gradient_descent() {
        let decision = single_step(&inputs(0.0, 1.0, 1.0, 1.0));
        assert_eq!(decision.hyperparams.momentum(), 0.0);
        assert_eq!(decision.hyperparams.learning_rate(), 1.0);
        assert!(!decision.constrained);
    }

    #[test]
    fn noiseless_conditioned_case_binds_the_constraint() {
        let decision = single_step(&inputs(0.0, 1.0, 100.0, 1.0));
        assert!(decision.constrained);
        assert_relative_eq!(
            decision.hyperparams.momentum(),
            (9.0f64 / 11.0).powi(2),
            max_relative = 1e-14
        );
        assert_relative_eq!(
            decision.hyperparams.learning_rate(),
            (2.0f64 / 11.0).powi(2),
            max_relative = 1e-14
        );
    }

    #[test]
    fn unit_noise_case_matches_stationarity_root() {
        // Root of 2x = 4 (1 - x)^3, bisected to full precision as oracle.
        let decision = single_step(&inputs(1.0, 1.0, 1.0, 1.0));
        let oracle = cubic_root_bisect(1.0, 1.0);
        assert_relative_eq!(decision.cubic_root, oracle, epsilon = 1e-12);
        assert_relative_eq!(decision.cubic_root, 0.410245, epsilon = 1e-5);
        assert_relative_eq!(decision.hyperparams.momentum(), 0.16830, epsilon = 1e-5);
        assert_relative_eq!(decision.hyperparams.learning_rate(), 0.34781, epsilon = 1e-5);
        assert!(!decision.constrained);
    }

    #[test]
    fn vieta_and_bisection_agree_across_ratios() {
        for exp in -11..=11 {
            let ratio = 10.0f64.powi(exp);
            let x_vieta = cubic_root_vieta(2.0 * ratio);
            let x_bisect = cubic_root_bisect(1.0, ratio);
            assert!(
                (x_vieta - x_bisect).abs() < 1e-9,
                "ratio 1e{exp}: vieta {x_vieta} vs bisect {x_bisect}"
            );
        }
    }

    #[test]
    fn constraints_hold_exactly() {
        for &(c, d, h_max, h_min) in &[
            (0.0, 1.0, 1.0, 1.0),
            (1.0, 1.0, 1.0, 1.0),
            (5.0, 0.2, 400.0, 2.0),
            (1e-9, 10.0, 1e3, 1e-2),
        ] {
            let input = inputs(c, d, h_max, h_min);
            let decision = single_step(&input);
            let mu = decision.hyperparams.momentum();
            let alpha = decision.hyperparams.learning_rate();
            let gcn_sqrt = (h_max / h_min).sqrt();
            let bound = ((gcn_sqrt - 1.0) / (gcn_sqrt + 1.0)).powi(2);
            assert!(mu >= bound - 1e-12);
            assert_relative_eq!(
                alpha * h_min,
                (1.0 - mu.sqrt()).powi(2),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn momentum_monotone_in_noise() {
        let mut prev = -1.0;
        for i in 0..60 {
            let c = 0.05 * i as f64;
            let decision = single_step(&inputs(c, 1.0, 3.0, 1.0));
            let mu = decision.hyperparams.momentum();
            assert!(
                mu >= prev - 1e-12,
                "momentum decreased from {prev} to {mu} at C = {c}"
            );
            prev = mu;
        }
    }

    #[test]
    fn objective_scale_invariance_of_the_root() {
        // Multiplying both D^2 and C/h_min^2 by s scales p uniformly and
        // leaves the unconstrained root unchanged.
        let base = single_step(&inputs(1.0, 1.0, 1.0, 1.0));
        for &s in &[1e-3, 0.5, 7.0, 1e4] {
            let scaled = single_step(&inputs(s, s.sqrt(), 1.0, 1.0));
            assert_relative_eq!(scaled.cubic_root, base.cubic_root, epsilon = 1e-12);
        }
    }

    #[test]
    fn clip_examples() {
        let clipped = adaptive_clip(&[6.0, 8.0], 25.0);
        let norm = (clipped[0] * clipped[0] + clipped[1] * clipped[1]).sqrt();
        assert_relative_eq!(norm, 5.0, max_relative = 1e-15);
        assert_relative_eq!(clipped[1] / clipped[0], 8.0 / 6.0, max_relative = 1e-15);

        assert_eq!(adaptive_clip(&[1.0, 2.0], 25.0), vec![1.0, 2.0]);
        assert_eq!(adaptive_clip(&[0.0, 0.0], 25.0), vec![0.0, 0.0]);
    }

    #[test]
    fn clip_is_idempotent_bitwise() {
        for h_max in [0.04, 1.0, 25.0, 3e4] {
            let g: Vec<f64> = (1..=7).map(|i| (i as f64) * 1.37 - 4.0).collect();
            let once = adaptive_clip(&g, h_max);
            let twice = adaptive_clip(&once, h_max);
            assert_eq!(once, twice);
        }
    }

    #[test]
    fn first_update_returns_initialization() {
        let mut tuner = YellowFinTuner::new(TunerConfig::default(), 1.0).unwrap();
        let decision = tuner.update(&[0.3, -0.4]).unwrap();
        assert_eq!(decision.hyperparams.momentum(), 0.0);
        assert_eq!(decision.hyperparams.learning_rate(), 1e-4);
    }

    #[test]
    fn slow_start_ramps_the_learning_rate() {
        // Constant unit gradients: the tuned rate is exactly 1, so the ramp
        // factor t / (10 w) is read off directly.
        let config = TunerConfig::new(0.999, 20, 100.0, false, true).unwrap();
        let mut tuner = YellowFinTuner::new(config, 1.0).unwrap();
        let mut last = tuner.update(&[1.0]).unwrap();
        for _ in 0..4 {
            last = tuner.update(&[1.0]).unwrap();
        }
        // Step 5 of a 20-wide window: alpha = min(1, 5/200) * 1.
        assert_relative_eq!(
            last.hyperparams.learning_rate(),
            5.0 / 200.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn lr_factor_scales_the_tuned_rate() {
        let config = TunerConfig::new(0.999, 20, 100.0, false, false).unwrap();
        let mut unscaled = YellowFinTuner::new(config, 1.0).unwrap();
        let mut scaled = YellowFinTuner::new(config, 3.0).unwrap();
        let mut a = unscaled.update(&[1.0]).unwrap();
        let mut b = scaled.update(&[1.0]).unwrap();
        for _ in 0..5 {
            a = unscaled.update(&[1.0]).unwrap();
            b = scaled.update(&[1.0]).unwrap();
        }
        assert_relative_eq!(
            b.hyperparams.learning_rate(),
            3.0 * a.hyperparams.learning_rate(),
            max_relative = 1e-12
        );
        assert_eq!(a.hyperparams.momentum(), b.hyperparams.momentum());
    }

    #[test]
    fn stationary_stream_recovers_flat_tuning() {
        // Constant gradients: h_max = h_min, C = 0, so mu -> 0 and
        // alpha -> 1 / h once the slow-start ramp has passed.
        let config = TunerConfig::new(0.99, 20, 100.0, false, true).unwrap();
        let mut tuner = YellowFinTuner::new(config, 1.0).unwrap();
        let mut last = tuner.update(&[2.0]).unwrap();
        for _ in 0..1000 {
            last = tuner.update(&[2.0]).unwrap();
        }
        assert_eq!(last.hyperparams.momentum(), 0.0);
        assert_relative_eq!(last.hyperparams.learning_rate(), 0.25, epsilon = 1e-9);
    }

    #[test]
    fn clip_threshold_present_only_when_enabled() {
        let base = TunerConfig::default();
        let mut plain = YellowFinTuner::new(base, 1.0).unwrap();
        assert_eq!(plain.update(&[3.0, 4.0]).unwrap().clip_threshold, None);

        let mut clipping = YellowFinTuner::new(base.with_clipping(true), 1.0).unwrap();
        let decision = clipping.update(&[3.0, 4.0]).unwrap();
        assert_relative_eq!(decision.clip_threshold.unwrap(), 5.0, max_relative = 1e-15);
    }

    #[test]
    fn zero_gradient_is_skippable() {
        let mut tuner = YellowFinTuner::new(TunerConfig::default(), 1.0).unwrap();
        tuner.update(&[1.0]).unwrap();
        let before = *tuner.last_decision().unwrap();
        assert!(matches!(tuner.update(&[0.0]), Err(Error::ZeroGradient)));
        assert_eq!(tuner.last_decision(), Some(&before));
        assert_eq!(tuner.state().step(), 1);
    }
}
