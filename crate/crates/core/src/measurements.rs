//! Gradient-based measurement estimators feeding the tuning rule: extremal
//! curvature range from a sliding window, gradient variance from first and
//! second moments, and distance to the optimum of the local quadratic.
//!
//! All exponential averages are zero-debiased. The extremal curvatures are
//! smoothed in log space so fast-decaying curvature levels are tracked
//! without the average trailing hopelessly behind, and the max-side window
//! candidate is clamped to a bounded growth multiple of the current
//! estimate before smoothing so a single gradient spike cannot blow up the
//! envelope.

use std::collections::VecDeque;

use crate::error::{Error, Result};

/// Default smoothing factor for all exponential averages.
pub const DEFAULT_SMOOTHING: f64 = 0.999;
/// Default sliding-window width for the extremal curvature estimates.
pub const DEFAULT_WINDOW_WIDTH: usize = 20;
/// Default growth cap for the curvature envelope.
pub const DEFAULT_ENVELOPE_GROWTH_CAP: f64 = 100.0;

/// Static configuration of the estimators and the tuner built on them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TunerConfig {
    smoothing: f64,
    window_width: usize,
    envelope_growth_cap: f64,
    clipping_enabled: bool,
    slow_start_enabled: bool,
}

impl Default for TunerConfig {
    fn default() -> Self {
        Self {
            smoothing: DEFAULT_SMOOTHING,
            window_width: DEFAULT_WINDOW_WIDTH,
            envelope_growth_cap: DEFAULT_ENVELOPE_GROWTH_CAP,
            clipping_enabled: false,
            slow_start_enabled: true,
        }
    }
}

impl TunerConfig {
    pub fn new(
        smoothing: f64,
        window_width: usize,
        envelope_growth_cap: f64,
        clipping_enabled: bool,
        slow_start_enabled: bool,
    ) -> Result<Self> {
        if !smoothing.is_finite() || !(0.0..1.0).contains(&smoothing) || smoothing == 0.0 {
            return Err(Error::domain(format!(
                "smoothing must lie in (0, 1), got {smoothing}"
            )));
        }
        if window_width == 0 {
            return Err(Error::domain("window width must be at least 1"));
        }
        if !envelope_growth_cap.is_finite() || envelope_growth_cap <= 1.0 {
            return Err(Error::domain(format!(
                "envelope growth cap must exceed 1, got {envelope_growth_cap}"
            )));
        }
        Ok(Self {
            smoothing,
            window_width,
            envelope_growth_cap,
            clipping_enabled,
            slow_start_enabled,
        })
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    pub fn window_width(&self) -> usize {
        self.window_width
    }

    pub fn envelope_growth_cap(&self) -> f64 {
        self.envelope_growth_cap
    }

    pub fn clipping_enabled(&self) -> bool {
        self.clipping_enabled
    }

    pub fn slow_start_enabled(&self) -> bool {
        self.slow_start_enabled
    }

    pub fn with_clipping(mut self, enabled: bool) -> Self {
        self.clipping_enabled = enabled;
        self
    }

    pub fn with_slow_start(mut self, enabled: bool) -> Self {
        self.slow_start_enabled = enabled;
        self
    }
}

/// Removes initialization bias from a raw exponential average:
/// `ema / (1 - beta^step)`.
pub fn zero_debias(ema_value: f64, beta: f64, step: usize) -> Result<f64> {
    if step == 0 {
        return Err(Error::domain("zero-debias is undefined at step 0"));
    }
    Ok(ema_value / (1.0 - beta.powi(step as i32)))
}

/// An exponential average stored directly in zero-debiased form via the
/// gain recurrence `d += k_t (v - d)` with `k_t = (1-beta)/(1-beta^t)`.
/// Algebraically identical to debiasing the raw average, and exact at the
/// first observation because `k_1 = 1`.
#[derive(Debug, Clone, PartialEq)]
struct DebiasedEma {
    beta: f64,
    value: f64,
    count: usize,
}

impl DebiasedEma {
    fn new(beta: f64) -> Self {
        Self {
            beta,
            value: 0.0,
            count: 0,
        }
    }

    fn observe(&mut self, v: f64) {
        self.count += 1;
        let gain = (1.0 - self.beta) / (1.0 - self.beta.powi(self.count as i32));
        self.value += gain * (v - self.value);
    }

    fn value(&self) -> f64 {
        self.value
    }

    fn count(&self) -> usize {
        self.count
    }
}

/// Clamps a windowed-max curvature candidate to at most `cap` times the
/// current envelope estimate.
pub fn clamp_envelope_candidate(candidate: f64, current_hmax: f64, cap: f64) -> f64 {
    candidate.min(cap * current_hmax)
}

/// One linear-space envelope update with bounded growth:
/// `beta * h_max + (1 - beta) * min(candidate, cap * h_max)`.
pub fn envelope_growth_update(h_max: f64, candidate: f64, beta: f64, cap: f64) -> f64 {
    beta * h_max + (1.0 - beta) * clamp_envelope_candidate(candidate, h_max, cap)
}

/// Extremal-curvature estimator: per-step curvature proxy `h_t = ||g_t||^2`,
/// windowed max/min, growth clamp on the max path, log-space debiased
/// smoothing of both extremes.
#[derive(Debug, Clone)]
pub struct CurvatureEstimator {
    window: VecDeque<f64>,
    width: usize,
    cap: f64,
    log_max: DebiasedEma,
    log_min: DebiasedEma,
    current: Option<(f64, f64)>,
}

impl CurvatureEstimator {
    pub fn new(config: &TunerConfig) -> Self {
        Self {
            window: VecDeque::with_capacity(config.window_width),
            width: config.window_width,
            cap: config.envelope_growth_cap,
            log_max: DebiasedEma::new(config.smoothing),
            log_min: DebiasedEma::new(config.smoothing),
            current: None,
        }
    }

    pub fn count(&self) -> usize {
        self.log_max.count()
    }

    /// Debiased `(h_max, h_min)` after the latest observation.
    pub fn current(&self) -> Option<(f64, f64)> {
        self.current
    }

    pub fn observe(&mut self, h_t: f64) -> (f64, f64) {
        debug_assert!(h_t.is_finite() && h_t > 0.0);
        if self.window.len() == self.width {
            self.window.pop_front();
        }
        self.window.push_back(h_t);
        let window_max = self.window.iter().cloned().fold(f64::MIN, f64::max);
        let window_min = self.window.iter().cloned().fold(f64::MAX, f64::min);

        // The clamp needs an existing envelope estimate, so the very first
        // observation passes through unclamped.
        let max_candidate = match self.current {
            Some((h_max, _)) => clamp_envelope_candidate(window_max, h_max, self.cap),
            None => window_max,
        };

        self.log_max.observe(max_candidate.ln());
        self.log_min.observe(window_min.ln());

        let estimates = if self.log_max.count() == 1 {
            // exp(ln h) in exact arithmetic; return h itself so the first
            // output reproduces the observation bit for bit.
            (h_t, h_t)
        } else {
            (self.log_max.value().exp(), self.log_min.value().exp())
        };
        self.current = Some(estimates);
        estimates
    }
}

/// Gradient-variance estimator from debiased first and second moments.
#[derive(Debug, Clone)]
pub struct VarianceEstimator {
    beta: f64,
    grad_ema: Vec<f64>,
    grad_sq_ema: Vec<f64>,
    count: usize,
}

impl VarianceEstimator {
    pub fn new(config: &TunerConfig) -> Self {
        Self {
            beta: config.smoothing,
            grad_ema: Vec::new(),
            grad_sq_ema: Vec::new(),
            count: 0,
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn observe(&mut self, gradient: &[f64]) -> Result<f64> {
        if self.count == 0 {
            self.grad_ema = vec![0.0; gradient.len()];
            self.grad_sq_ema = vec![0.0; gradient.len()];
        } else if gradient.len() != self.grad_ema.len() {
            return Err(Error::DimensionMismatch {
                expected: self.grad_ema.len(),
                got: gradient.len(),
            });
        }
        self.count += 1;
        let gain = (1.0 - self.beta) / (1.0 - self.beta.powi(self.count as i32));
        let mut variance = 0.0;
        for (i, &g) in gradient.iter().enumerate() {
            self.grad_ema[i] += gain * (g - self.grad_ema[i]);
            self.grad_sq_ema[i] += gain * (g * g - self.grad_sq_ema[i]);
            let mean = self.grad_ema[i];
            // Finite-sample differences can dip below zero; floor per
            // coordinate before summing.
            variance += (self.grad_sq_ema[i] - mean * mean).max(0.0);
        }
        Ok(variance)
    }
}

/// Distance-to-optimum estimator `D` from debiased averages of the gradient
/// norm and the curvature proxy; the inner ratio feeds a debiased average of
/// its own.
#[derive(Debug, Clone)]
pub struct DistanceEstimator {
    norm_ema: DebiasedEma,
    curvature_ema: DebiasedEma,
    distance_ema: DebiasedEma,
}

impl DistanceEstimator {
    pub fn new(config: &TunerConfig) -> Self {
        Self {
            norm_ema: DebiasedEma::new(config.smoothing),
            curvature_ema: DebiasedEma::new(config.smoothing),
            distance_ema: DebiasedEma::new(config.smoothing),
        }
    }

    pub fn count(&self) -> usize {
        self.distance_ema.count()
    }

    pub fn observe(&mut self, norm: f64, h_t: f64) -> f64 {
        debug_assert!(norm > 0.0 && h_t > 0.0);
        self.norm_ema.observe(norm);
        self.curvature_ema.observe(h_t);
        self.distance_ema
            .observe(self.norm_ema.value() / self.curvature_ema.value());
        self.distance_ema.value()
    }
}

/// Snapshot of all measurements as consumed by the tuning rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementSnapshot {
    pub h_max: f64,
    pub h_min: f64,
    pub variance: f64,
    pub distance: f64,
}

/// Running estimator state for one optimizer instance. A state is driven
/// sequentially by a single owner; distinct states are independent.
#[derive(Debug, Clone)]
pub struct TunerState {
    config: TunerConfig,
    curvature: CurvatureEstimator,
    variance: VarianceEstimator,
    distance: DistanceEstimator,
    step: usize,
    latest: Option<MeasurementSnapshot>,
}

fn gradient_norm_sq(gradient: &[f64]) -> Result<f64> {
    let mut sum = 0.0;
    for &g in gradient {
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient { step: 0 });
        }
        sum += g * g;
    }
    if sum == 0.0 {
        return Err(Error::ZeroGradient);
    }
    Ok(sum)
}

impl TunerState {
    pub fn new(config: TunerConfig) -> Self {
        Self {
            curvature: CurvatureEstimator::new(&config),
            variance: VarianceEstimator::new(&config),
            distance: DistanceEstimator::new(&config),
            config,
            step: 0,
            latest: None,
        }
    }

    pub fn config(&self) -> &TunerConfig {
        &self.config
    }

    /// Number of gradients folded into all three estimators together.
    pub fn step(&self) -> usize {
        self.step
    }

    pub fn latest(&self) -> Option<MeasurementSnapshot> {
        self.latest
    }

    /// Extremal-curvature update alone; returns debiased `(h_max, h_min)`.
    pub fn observe_curvature(&mut self, gradient: &[f64]) -> Result<(f64, f64)> {
        let h_t = gradient_norm_sq(gradient)?;
        Ok(self.curvature.observe(h_t))
    }

    /// Gradient-variance update alone; returns the debiased variance sum.
    pub fn observe_variance(&mut self, gradient: &[f64]) -> Result<f64> {
        for &g in gradient {
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient { step: 0 });
            }
        }
        self.variance.observe(gradient)
    }

    /// Distance update alone; returns the debiased distance estimate.
    pub fn observe_distance(&mut self, gradient: &[f64]) -> Result<f64> {
        let h_t = gradient_norm_sq(gradient)?;
        Ok(self.distance.observe(h_t.sqrt(), h_t))
    }

    /// Feeds one gradient to all three estimators and snapshots the result.
    pub fn observe(&mut self, gradient: &[f64]) -> Result<MeasurementSnapshot> {
        let h_t = gradient_norm_sq(gradient)?;
        let variance = self.variance.observe(gradient)?;
        let (h_max, h_min) = self.curvature.observe(h_t);
        let distance = self.distance.observe(h_t.sqrt(), h_t);
        self.step += 1;
        let snapshot = MeasurementSnapshot {
            h_max,
            h_min,
            variance,
            distance,
        };
        self.latest = Some(snapshot);
        Ok(snapshot)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn config(beta: f64) -> TunerConfig {
        TunerConfig::new(beta, 20, 100.0, false, true).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(TunerConfig::new(0.0, 20, 100.0, false, true).is_err());
        assert!(TunerConfig::new(1.0, 20, 100.0, false, true).is_err());
        assert!(TunerConfig::new(0.9, 0, 100.0, false, true).is_err());
        assert!(TunerConfig::new(0.9, 20, 1.0, false, true).is_err());
        assert!(TunerConfig::new(0.9, 1, 1.5, true, false).is_ok());
    }

    #[test]
    fn zero_debias_examples() {
        // First-step debias recovers the observation.
        let raw = (1.0 - 0.999) * 25.0;
        assert_relative_eq!(zero_debias(raw, 0.999, 1).unwrap(), 25.0, max_relative = 1e-15);
        // Correction factor tends to one.
        assert_relative_eq!(zero_debias(0.7, 0.5, 200).unwrap(), 0.7, max_relative = 1e-12);
        // Two-step EMA of observations 1, 1 at beta = 0.9: raw = 0.19.
        assert_relative_eq!(zero_debias(0.19, 0.9, 2).unwrap(), 1.0, max_relative = 1e-12);
        assert!(zero_debias(0.19, 0.9, 0).is_err());
    }

    #[test]
    fn debiased_ema_matches_raw_form() {
        let beta = 0.9;
        let mut ema = DebiasedEma::new(beta);
        let mut raw = 0.0;
        for (t, v) in [3.0, -1.0, 4.0, 1.0, 5.0].iter().enumerate() {
            ema.observe(*v);
            raw = beta * raw + (1.0 - beta) * v;
            let debiased = zero_debias(raw, beta, t + 1).unwrap();
            assert_relative_eq!(ema.value(), debiased, max_relative = 1e-13);
        }
    }

    #[test]
    fn first_curvature_observation_is_bit_exact() {
        let mut state = TunerState::new(config(0.999));
        let (h_max, h_min) = state.observe_curvature(&[3.0, 4.0]).unwrap();
        assert_eq!(h_max, 25.0);
        assert_eq!(h_min, 25.0);
    }

    #[test]
    fn constant_stream_pins_both_extremes() {
        let mut state = TunerState::new(config(0.999));
        let mut out = (0.0, 0.0);
        for _ in 0..100 {
            out = state.observe_curvature(&[2.0]).unwrap();
        }
        assert_relative_eq!(out.0, 4.0, epsilon = 1e-9);
        assert_relative_eq!(out.1, 4.0, epsilon = 1e-9);
    }

    #[test]
    fn envelope_clamp_limits_spikes() {
        let cfg = config(0.999);
        let mut est = CurvatureEstimator::new(&cfg);
        est.observe(1.0);
        let before = est.current().unwrap().0;
        assert_eq!(before, 1.0);
        // Incoming h_t = 1000 must enter the log average as 100, the capped
        // candidate relative to the current envelope of 1.
        let (h_max, _) = est.observe(1000.0);
        let expected_log = {
            let mut ema = DebiasedEma::new(0.999);
            ema.observe(1.0f64.ln());
            ema.observe(100.0f64.ln());
            ema.value().exp()
        };
        assert_eq!(h_max, expected_log);
        // And never exceeds the unclamped-at-cap alternative.
        let unclamped_at_cap = {
            let mut ema = DebiasedEma::new(0.999);
            ema.observe(1.0f64.ln());
            ema.observe((100.0f64 * before).ln());
            ema.value().exp()
        };
        assert!(h_max <= unclamped_at_cap * (1.0 + 1e-15));
    }

    #[test]
    fn envelope_growth_update_formula() {
        let updated = envelope_growth_update(1.0, 1000.0, 0.999, 100.0);
        assert_eq!(updated, 0.999 * 1.0 + (1.0 - 0.999) * 100.0);
        assert_relative_eq!(updated, 1.099, epsilon = 1e-12);
        // Below the cap the candidate passes through untouched.
        assert_eq!(
            envelope_growth_update(1.0, 50.0, 0.999, 100.0),
            0.999 * 1.0 + (1.0 - 0.999) * 50.0
        );
    }

    #[test]
    fn variance_of_constant_stream_is_zero() {
        let mut state = TunerState::new(config(0.999));
        for _ in 0..50 {
            let c = state.observe_variance(&[0.7, -0.3]).unwrap();
            assert_eq!(c, 0.0);
        }
    }

    #[test]
    fn variance_first_step_is_exactly_zero() {
        let mut state = TunerState::new(config(0.999));
        let c = state.observe_variance(&[1.7, -2.4, 0.1]).unwrap();
        assert_eq!(c, 0.0);
    }

    #[test]
    fn variance_of_alternating_stream() {
        // Alternating +1/-1 at beta = 0.9. The debiased second moment is
        // exactly 1; the debiased mean oscillates around +/-(1-b)/(1+b) in
        // the stationary limit, so the estimator settles at
        // 1 - ((1-b)/(1+b))^2. Oracle: direct recurrence simulation.
        let beta: f64 = 0.9;
        let mut state = TunerState::new(config(beta));
        let mut c = 0.0;
        let mut raw_mean = 0.0;
        let mut raw_sq = 0.0;
        for t in 0..200 {
            let g = if t % 2 == 0 { 1.0 } else { -1.0 };
            c = state.observe_variance(&[g]).unwrap();
            raw_mean = beta * raw_mean + (1.0 - beta) * g;
            raw_sq = beta * raw_sq + (1.0 - beta) * g * g;
            let debias = 1.0 - beta.powi(t as i32 + 1);
            let oracle = (raw_sq / debias - (raw_mean / debias).powi(2)).max(0.0);
            assert_relative_eq!(c, oracle, max_relative = 1e-12);
        }
        let residual = ((1.0 - beta) / (1.0 + beta)).powi(2);
        assert_relative_eq!(c, 1.0 - residual, epsilon = 1e-3);
        assert!((c - 1.0).abs() < 3e-3);
    }

    #[test]
    fn variance_rejects_dimension_change() {
        let mut state = TunerState::new(config(0.999));
        state.observe_variance(&[1.0, 2.0]).unwrap();
        assert!(matches!(
            state.observe_variance(&[1.0]),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn distance_first_step_is_plain_ratio() {
        let mut state = TunerState::new(config(0.999));
        let d = state.observe_distance(&[10.0]).unwrap();
        assert_eq!(d, 10.0 / 100.0);
    }

    #[test]
    fn distance_constant_stream() {
        let mut state = TunerState::new(config(0.99));
        let mut d = 0.0;
        for _ in 0..2000 {
            d = state.observe_distance(&[2.0]).unwrap();
        }
        assert_relative_eq!(d, 0.5, epsilon = 1e-9);
    }

    #[test]
    fn distance_alternating_norms() {
        // Norms alternate between 1 and 3: norm average -> 2, curvature
        // average -> (1+9)/2 = 5, so D -> 0.4.
        let mut state = TunerState::new(config(0.999));
        let mut d = 0.0;
        for t in 0..10_000 {
            let g = if t % 2 == 0 { 1.0 } else { 3.0 };
            d = state.observe_distance(&[g]).unwrap();
        }
        assert_relative_eq!(d, 0.4, epsilon = 1e-2);
    }

    #[test]
    fn zero_and_nonfinite_gradients_are_rejected() {
        let mut state = TunerState::new(config(0.999));
        assert!(matches!(
            state.observe(&[0.0, 0.0]),
            Err(Error::ZeroGradient)
        ));
        assert!(matches!(
            state.observe(&[f64::NAN]),
            Err(Error::NonFiniteGradient { .. })
        ));
        assert!(matches!(
            state.observe_distance(&[0.0]),
            Err(Error::ZeroGradient)
        ));
        // Rejected updates leave the step count untouched.
        assert_eq!(state.step(), 0);
    }

    #[test]
    fn combined_observe_matches_individual_estimators() {
        let grads = [[3.0, 4.0], [1.0, -2.0], [0.5, 0.5], [2.0, 1.0]];
        let mut combined = TunerState::new(config(0.9));
        let mut separate = TunerState::new(config(0.9));
        for g in &grads {
            let snap = combined.observe(g).unwrap();
            let (h_max, h_min) = separate.observe_curvature(g).unwrap();
            let c = separate.observe_variance(g).unwrap();
            let d = separate.observe_distance(g).unwrap();
            assert_eq!(snap.h_max, h_max);
            assert_eq!(snap.h_min, h_min);
            assert_eq!(snap.variance, c);
            assert_eq!(snap.distance, d);
        }
        assert_eq!(combined.step(), grads.len());
    }
}
