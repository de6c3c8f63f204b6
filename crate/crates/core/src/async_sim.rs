//! Deterministic simulation of asynchronous training with round-robin
//! staleness, the total-momentum estimator, and closed-loop momentum
//! control.
//!
//! Asynchrony is simulated logically: one sequential loop applies gradients
//! evaluated at the iterate from `staleness` updates ago, which reproduces
//! the round-robin protocol of `workers` concurrent updaters exactly and
//! keeps every run bit-reproducible. The estimator reconstructs the total
//! momentum (algorithmic plus asynchrony-induced) of the running system
//! from stale iterate differences; a negative feedback loop then steers the
//! algorithmic momentum so the measured total matches the tuner's target.

use std::collections::VecDeque;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::objectives::StochasticObjective;
use crate::operators::Hyperparams;
use crate::optimizer::{momentum_step, sq_dist_to, OptimizerState, RunMode, TraceRow};
use crate::seeding::step_rng;
use crate::tuner::{adaptive_clip_in_place, YellowFinTuner, INITIAL_LEARNING_RATE};

/// Ceiling applied to the algorithmic momentum after every feedback update.
pub const MOMENTUM_CEILING: f64 = 1.0 - 1e-6;
/// Number of recent estimates the controller averages over.
pub const MEASUREMENT_WINDOW: usize = 20;
/// Relative floor below which a denominator coordinate is screened out of
/// the total-momentum estimate.
const DENOMINATOR_FLOOR: f64 = 1e-12;

/// Configuration of the simulated asynchronous pool.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AsyncConfig {
    workers: usize,
    staleness: usize,
    feedback_gain: f64,
    closed_loop: bool,
}

impl AsyncConfig {
    /// Round-robin pool of `workers`, staleness `workers - 1`, gain 0.01,
    /// open loop.
    pub fn new(workers: usize) -> Result<Self> {
        if workers == 0 {
            return Err(Error::domain("at least one worker is required"));
        }
        Ok(Self {
            workers,
            staleness: workers - 1,
            feedback_gain: 0.01,
            closed_loop: false,
        })
    }

    pub fn with_staleness(mut self, staleness: usize) -> Self {
        self.staleness = staleness;
        self
    }

    pub fn with_feedback_gain(mut self, gain: f64) -> Result<Self> {
        if !gain.is_finite() || gain <= 0.0 {
            return Err(Error::domain(format!(
                "feedback gain must be positive, got {gain}"
            )));
        }
        self.feedback_gain = gain;
        Ok(self)
    }

    pub fn with_closed_loop(mut self, closed_loop: bool) -> Self {
        self.closed_loop = closed_loop;
        self
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn staleness(&self) -> usize {
        self.staleness
    }

    pub fn feedback_gain(&self) -> f64 {
        self.feedback_gain
    }

    pub fn closed_loop(&self) -> bool {
        self.closed_loop
    }
}

#[derive(Debug, Clone)]
struct HistoryEntry {
    x: Vec<f64>,
    /// Stochastic gradient of this entry's own step evaluated at this
    /// iterate (same sample as the step's update draw). Priming entries
    /// carry none.
    own_gradient: Option<Vec<f64>>,
}

/// Iterate and gradient history of one asynchronous run plus the controller
/// state.
#[derive(Debug, Clone)]
pub struct AsyncState {
    history: VecDeque<HistoryEntry>,
    staleness: usize,
    /// Step index of the newest history entry; priming ends at step 0.
    newest_step: i64,
    algorithmic_momentum: f64,
    mu_hat_window: VecDeque<f64>,
}

impl AsyncState {
    /// Primes the history with `staleness + 2` copies of `x0`, the reads an
    /// idle round-robin pool would all make of the initial model.
    pub fn new(x0: Vec<f64>, staleness: usize) -> Self {
        let mut history = VecDeque::with_capacity(staleness + 3);
        for _ in 0..staleness + 2 {
            history.push_back(HistoryEntry {
                x: x0.clone(),
                own_gradient: None,
            });
        }
        Self {
            history,
            staleness,
            newest_step: 0,
            algorithmic_momentum: 0.0,
            mu_hat_window: VecDeque::with_capacity(MEASUREMENT_WINDOW),
        }
    }

    pub fn staleness(&self) -> usize {
        self.staleness
    }

    /// Index of the most recently produced iterate (0 before any step).
    pub fn step(&self) -> i64 {
        self.newest_step
    }

    pub fn algorithmic_momentum(&self) -> f64 {
        self.algorithmic_momentum
    }

    pub fn set_algorithmic_momentum(&mut self, mu: f64) {
        self.algorithmic_momentum = mu;
    }

    /// Mean of the recent total-momentum estimates, if any were recorded.
    pub fn mu_hat_running_mean(&self) -> Option<f64> {
        if self.mu_hat_window.is_empty() {
            None
        } else {
            Some(self.mu_hat_window.iter().sum::<f64>() / self.mu_hat_window.len() as f64)
        }
    }

    pub fn record_mu_hat(&mut self, mu_hat: f64) {
        if self.mu_hat_window.len() == MEASUREMENT_WINDOW {
            self.mu_hat_window.pop_front();
        }
        self.mu_hat_window.push_back(mu_hat);
    }

    fn entry_at(&self, step: i64) -> Option<&HistoryEntry> {
        let offset = self.newest_step - step;
        if offset < 0 || offset as usize >= self.history.len() {
            return None;
        }
        self.history.get(self.history.len() - 1 - offset as usize)
    }

    pub fn iterate_at(&self, step: i64) -> Option<&[f64]> {
        self.entry_at(step).map(|e| e.x.as_slice())
    }

    pub fn current(&self) -> &[f64] {
        &self.history.back().expect("history is primed nonempty").x
    }

    fn push(&mut self, x: Vec<f64>, own_gradient: Vec<f64>) {
        if self.history.len() == self.staleness + 3 {
            self.history.pop_front();
        }
        self.history.push_back(HistoryEntry {
            x,
            own_gradient: Some(own_gradient),
        });
        self.newest_step += 1;
    }

    fn is_primed(&self) -> bool {
        self.history.len() >= self.staleness + 2
    }
}

/// One asynchronous update: the new iterate applies the stochastic gradient
/// evaluated at the model from `staleness` updates ago,
/// `x_t = x_{t-1} + mu (x_{t-1} - x_{t-2}) - alpha * grad(x_{t-tau-1})`.
///
/// The generator is the step's sample; it is replayed at the new iterate so
/// the estimator can later reconstruct this step's gradient at its own
/// model value.
pub fn async_step(
    state: &mut AsyncState,
    objective: &dyn StochasticObjective,
    hp: &Hyperparams,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    if !state.is_primed() {
        return Err(Error::domain(
            "async history must be primed with staleness + 2 iterates",
        ));
    }
    let t = state.newest_step + 1;
    let stale = state
        .iterate_at(t - state.staleness as i64 - 1)
        .ok_or_else(|| Error::domain("stale iterate out of history window"))?
        .to_vec();
    let mut own_rng = rng.clone();
    let gradient = objective.sample_gradient(&stale, rng);
    advance_with_gradient(state, objective, hp, &gradient, &mut own_rng)
}

/// Applies an already sampled (possibly clipped) stale gradient and records
/// the measurement gradient with the same sample at the new iterate.
fn advance_with_gradient(
    state: &mut AsyncState,
    objective: &dyn StochasticObjective,
    hp: &Hyperparams,
    gradient: &[f64],
    own_rng: &mut ChaCha8Rng,
) -> Result<()> {
    let current = state.current().to_vec();
    let previous = state
        .iterate_at(state.newest_step - 1)
        .expect("primed history holds at least two iterates")
        .to_vec();
    let pair = OptimizerState::from_pair(current, previous);
    let next = momentum_step(&pair, gradient, hp)?;
    let own_gradient = objective.sample_gradient(next.current(), own_rng);
    state.push(next.current().to_vec(), own_gradient);
    Ok(())
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.partial_cmp(b).expect("screened quotients are finite"));
    let n = values.len();
    if n % 2 == 1 {
        Some(values[n / 2])
    } else {
        Some(0.5 * (values[n / 2 - 1] + values[n / 2]))
    }
}

/// Per-coordinate total-momentum estimate at the newest step `t`:
/// `(x_{t-tau} - x_{t-tau-1} + alpha * grad_{t-tau-1}(x_{t-tau-1})) /
///  (x_{t-tau-1} - x_{t-tau-2})`,
/// combined across surviving coordinates by the median. Coordinates whose
/// denominator is below `1e-12 * (1 + |x_{t-tau-1}|)` are screened out;
/// `None` signals that no coordinate survived (the controller skips the
/// step) or that the measurement window is not yet populated.
pub fn measure_total_momentum(state: &AsyncState, alpha: f64) -> Option<f64> {
    let t = state.newest_step;
    let tau = state.staleness as i64;
    if t < tau + 3 {
        return None;
    }
    let newer = state.iterate_at(t - tau)?;
    let entry = state.entry_at(t - tau - 1)?;
    let anchor = &entry.x;
    let gradient = entry.own_gradient.as_ref()?;
    let older = state.iterate_at(t - tau - 2)?;

    let mut quotients: Vec<f64> = Vec::with_capacity(anchor.len());
    for i in 0..anchor.len() {
        let denominator = anchor[i] - older[i];
        if denominator.abs() < DENOMINATOR_FLOOR * (1.0 + anchor[i].abs()) {
            continue;
        }
        let numerator = newer[i] - anchor[i] + alpha * gradient[i];
        quotients.push(numerator / denominator);
    }
    median(&mut quotients)
}

/// Negative-feedback momentum update
/// `clamp(mu + gain * (target - measured), 0, 1 - 1e-6)`.
pub fn closed_loop_update(mu: f64, mu_target: f64, mu_hat: f64, gamma: f64) -> f64 {
    (mu + gamma * (mu_target - mu_hat)).clamp(0.0, MOMENTUM_CEILING)
}

/// Runs `steps` asynchronous updates. Per step: sample the stale gradient,
/// clip if the tuner published a threshold, fold it into the tuner, apply
/// the update with the tuned learning rate and either the tuned momentum
/// (open loop) or the feedback-controlled momentum (closed loop), then
/// measure total momentum and, in closed loop, steer toward the target.
pub fn run_async_experiment(
    objective: &dyn StochasticObjective,
    mode: &RunMode,
    config: &AsyncConfig,
    x0: &[f64],
    steps: usize,
    seed: u64,
) -> Result<Vec<TraceRow>> {
    let tau = config.staleness;
    if steps < tau + 3 {
        return Err(Error::domain(format!(
            "async runs need at least staleness + 3 = {} steps, got {steps}",
            tau + 3
        )));
    }
    if x0.len() != objective.dimension() {
        return Err(Error::DimensionMismatch {
            expected: objective.dimension(),
            got: x0.len(),
        });
    }
    if let RunMode::Schedule(entries) = mode {
        if entries.is_empty() {
            return Err(Error::domain("schedule mode requires at least one entry"));
        }
    }

    let mut tuner = match mode {
        RunMode::YellowFin { config, lr_factor } => Some(YellowFinTuner::new(*config, *lr_factor)?),
        _ => None,
    };
    let optimum = objective.optimum();
    let mut state = AsyncState::new(x0.to_vec(), tau);
    let mut trace = Vec::with_capacity(steps);

    for t in 1..=steps {
        let mut rng = step_rng(seed, t);
        let mut own_rng = rng.clone();
        let stale = state
            .iterate_at(t as i64 - tau as i64 - 1)
            .expect("primed history covers the staleness window")
            .to_vec();
        let mut gradient = objective.sample_gradient(&stale, &mut rng);
        if gradient.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { step: t });
        }

        let mut clipped = false;
        let decision_hp = match (&mode, tuner.as_mut()) {
            (RunMode::Fixed(hp), _) => *hp,
            (RunMode::Schedule(entries), _) => {
                let index = (t - 1).min(entries.len() - 1);
                entries[index]
            }
            (RunMode::YellowFin { .. }, Some(tuner)) => {
                if let Some(threshold) = tuner.last_decision().and_then(|d| d.clip_threshold) {
                    clipped = adaptive_clip_in_place(&mut gradient, threshold * threshold);
                }
                match tuner.update(&gradient) {
                    Ok(decision) => decision.hyperparams,
                    Err(Error::ZeroGradient) => match tuner.last_decision() {
                        Some(prev) => prev.hyperparams,
                        None => Hyperparams::new(INITIAL_LEARNING_RATE, 0.0)?,
                    },
                    Err(e) => return Err(e),
                }
            }
            (RunMode::YellowFin { .. }, None) => unreachable!(),
        };

        let applied = if config.closed_loop {
            Hyperparams::new(decision_hp.learning_rate(), state.algorithmic_momentum())?
        } else {
            decision_hp
        };

        advance_with_gradient(&mut state, objective, &applied, &gradient, &mut own_rng)?;

        let mu_hat = measure_total_momentum(&state, applied.learning_rate());
        if let Some(measured) = mu_hat {
            state.record_mu_hat(measured);
            if config.closed_loop {
                let target = decision_hp.momentum();
                let running_mean = state
                    .mu_hat_running_mean()
                    .expect("a measurement was just recorded");
                let next_mu = closed_loop_update(
                    state.algorithmic_momentum(),
                    target,
                    running_mean,
                    config.feedback_gain,
                );
                state.set_algorithmic_momentum(next_mu);
            }
        }

        let snapshot = tuner.as_ref().and_then(|t| t.state().latest());
        trace.push(TraceRow {
            step: t,
            loss: objective.loss(state.current()),
            sq_dist: sq_dist_to(state.current(), &optimum),
            mu: applied.momentum(),
            lr: applied.learning_rate(),
            h_min: snapshot.map(|s| s.h_min),
            h_max: snapshot.map(|s| s.h_max),
            variance: snapshot.map(|s| s.variance),
            distance: snapshot.map(|s| s.distance),
            mu_hat,
            clipped,
        });
    }
    Ok(trace)
}
