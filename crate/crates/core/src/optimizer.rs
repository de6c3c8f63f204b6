//! The momentum-SGD update loop wiring objectives, the tuner, and trace
//! emission. Supports fixed hyperparameters, auto-tuned, and externally
//! scheduled modes.

use crate::error::{Error, Result};
use crate::measurements::TunerConfig;
use crate::objectives::StochasticObjective;
use crate::operators::Hyperparams;
use crate::seeding::step_rng;
use crate::tuner::{adaptive_clip_in_place, YellowFinTuner};

/// Current and previous iterates plus the step count. New states start with
/// `current == previous`.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    current: Vec<f64>,
    previous: Vec<f64>,
    step: usize,
}

impl OptimizerState {
    pub fn new(x0: Vec<f64>) -> Self {
        Self {
            previous: x0.clone(),
            current: x0,
            step: 0,
        }
    }

    /// State with distinct current and previous iterates, for resuming
    /// mid-trajectory.
    pub fn from_pair(current: Vec<f64>, previous: Vec<f64>) -> Self {
        Self {
            current,
            previous,
            step: 0,
        }
    }

    pub fn current(&self) -> &[f64] {
        &self.current
    }

    pub fn previous(&self) -> &[f64] {
        &self.previous
    }

    pub fn step(&self) -> usize {
        self.step
    }
}

/// One momentum update `x_{t+1} = x_t - alpha g + mu (x_t - x_{t-1})`.
pub fn momentum_step(
    state: &OptimizerState,
    gradient: &[f64],
    hp: &Hyperparams,
) -> Result<OptimizerState> {
    if gradient.len() != state.current.len() {
        return Err(Error::DimensionMismatch {
            expected: state.current.len(),
            got: gradient.len(),
        });
    }
    if gradient.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient {
            step: state.step + 1,
        });
    }
    let alpha = hp.learning_rate();
    let mu = hp.momentum();
    let next = state
        .current
        .iter()
        .zip(&state.previous)
        .zip(gradient)
        .map(|((x, x_prev), g)| x - alpha * g + mu * (x - x_prev))
        .collect();
    Ok(OptimizerState {
        previous: state.current.clone(),
        current: next,
        step: state.step + 1,
    })
}

/// How hyperparameters are chosen during a run.
#[derive(Debug, Clone)]
pub enum RunMode {
    /// One fixed (learning rate, momentum) pair for every step.
    Fixed(Hyperparams),
    /// Auto-tuned from gradient measurements.
    YellowFin {
        config: TunerConfig,
        lr_factor: f64,
    },
    /// Externally supplied sequence; steps beyond the end reuse the last
    /// entry.
    Schedule(Vec<Hyperparams>),
}

/// Per-step experiment record.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub loss: Option<f64>,
    pub sq_dist: f64,
    pub mu: f64,
    pub lr: f64,
    pub h_min: Option<f64>,
    pub h_max: Option<f64>,
    pub variance: Option<f64>,
    pub distance: Option<f64>,
    pub mu_hat: Option<f64>,
    pub clipped: bool,
}

pub(crate) fn sq_dist_to(x: &[f64], optimum: &[f64]) -> f64 {
    x.iter()
        .zip(optimum)
        .map(|(xi, oi)| (xi - oi) * (xi - oi))
        .sum()
}

fn schedule_entry(schedule: &[Hyperparams], step: usize) -> Hyperparams {
    let index = (step - 1).min(schedule.len() - 1);
    schedule[index]
}

/// Runs `steps` synchronous momentum updates from `x0`, deterministic given
/// `seed`. In the auto-tuned mode each step samples a gradient, clips it when
/// the previous decision published a threshold, folds it into the estimators,
/// and applies the update with the freshly tuned hyperparameters.
pub fn run_experiment(
    objective: &dyn StochasticObjective,
    mode: &RunMode,
    x0: &[f64],
    steps: usize,
    seed: u64,
) -> Result<Vec<TraceRow>> {
    if steps == 0 {
        return Err(Error::domain("at least one step is required"));
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
    let mut state = OptimizerState::new(x0.to_vec());
    let mut trace = Vec::with_capacity(steps);

    for t in 1..=steps {
        let mut rng = step_rng(seed, t);
        let mut gradient = objective.sample_gradient(&state.current, &mut rng);
        if gradient.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { step: t });
        }

        let mut clipped = false;
        let hp = match (&mode, tuner.as_mut()) {
            (RunMode::Fixed(hp), _) => *hp,
            (RunMode::Schedule(entries), _) => schedule_entry(entries, t),
            (RunMode::YellowFin { .. }, Some(tuner)) => {
                if let Some(threshold) = tuner.last_decision().and_then(|d| d.clip_threshold) {
                    clipped = adaptive_clip_in_place(&mut gradient, threshold * threshold);
                }
                match tuner.update(&gradient) {
                    Ok(decision) => decision.hyperparams,
                    // Zero gradient: skip the tuner update, keep coasting on
                    // the previous hyperparameters.
                    Err(Error::ZeroGradient) => match tuner.last_decision() {
                        Some(prev) => prev.hyperparams,
                        None => Hyperparams::new(
                            crate::tuner::INITIAL_LEARNING_RATE,
                            crate::tuner::INITIAL_MOMENTUM,
                        )?,
                    },
                    Err(e) => return Err(e),
                }
            }
            (RunMode::YellowFin { .. }, None) => unreachable!(),
        };

        state = momentum_step(&state, &gradient, &hp)?;

        let snapshot = tuner.as_ref().and_then(|t| t.state().latest());
        trace.push(TraceRow {
            step: t,
            loss: objective.loss(&state.current),
            sq_dist: sq_dist_to(&state.current, &optimum),
            mu: hp.momentum(),
            lr: hp.learning_rate(),
            h_min: snapshot.map(|s| s.h_min),
            h_max: snapshot.map(|s| s.h_max),
            variance: snapshot.map(|s| s.variance),
            distance: snapshot.map(|s| s.distance),
            mu_hat: None,
            clipped,
        });
    }
    Ok(trace)
}
