//! Automatic learning-rate and momentum tuning for momentum SGD.
//!
//! The crate provides, bottom to top:
//!
//! * [`operators`] — the 2x2 bias and 3x3 variance operators of one momentum
//!   step on a quadratic, closed-form spectral radii, the robust region, and
//!   the noiseless tuning rule.
//! * [`quadratic_model`] — exact, surrogate, and Monte Carlo evaluation of
//!   the expected squared distance of momentum SGD on a scalar noisy
//!   quadratic.
//! * [`measurements`] — zero-debiased gradient estimators for the curvature
//!   range, gradient variance, and distance to the optimum.
//! * [`tuner`] — the closed-form one-step hyperparameter rule over those
//!   measurements, slow start, and adaptive gradient clipping.
//! * [`objectives`] — stochastic gradient oracles (diagonal noisy
//!   quadratics, a two-curvature piecewise toy).
//! * [`optimizer`] — the synchronous momentum-SGD experiment loop with trace
//!   emission.
//! * [`async_sim`] — a deterministic round-robin staleness simulator with a
//!   total-momentum estimator and closed-loop momentum control.

pub mod async_sim;
pub mod error;
pub mod measurements;
pub mod objectives;
pub mod operators;
pub mod optimizer;
pub mod quadratic_model;
mod seeding;
pub mod tuner;

pub use async_sim::{AsyncConfig, AsyncState};
pub use error::{Error, Result};
pub use measurements::{MeasurementSnapshot, TunerConfig, TunerState};
pub use objectives::StochasticObjective;
pub use operators::Hyperparams;
pub use optimizer::{OptimizerState, RunMode, TraceRow};
pub use quadratic_model::NoisyQuadratic;
pub use tuner::{SingleStepInputs, TuneDecision, YellowFinTuner};
