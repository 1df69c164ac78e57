//! Simulation and classical post-processing for single-ancilla quantum phase
//! estimation with starting states that overlap several eigenstates.
//!
//! * [`spectrum`]: phases on the circle, spectra, error metrics.
//! * [`simulator`]: exact outcome probabilities and seeded sampling.
//! * [`signal`]: reconstruction of `g(k) = sum_j A_j e^{i k phi_j}` from tallies.
//! * [`prony`]: Hankel/shift-operator (time-series) estimator.
//! * [`bayes`]: Fourier-series Bayesian estimator.
//! * [`design`]: experiment schedules.

pub mod bayes;
pub mod design;
pub mod error;
pub mod linalg;
pub mod prony;
pub mod signal;
pub mod simulator;
pub mod spectrum;

pub use error::{QpeError, Result};
pub use spectrum::{circular_distance, error_stats, wrap_phase, ErrorStats, Phase, Spectrum};
