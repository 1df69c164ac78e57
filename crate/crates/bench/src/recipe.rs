//! Randomized spectra, each fully determined by the trial generator.

use std::f64::consts::PI;

use qpe_core::{wrap_phase, Phase, Spectrum};
use rand::Rng;

use crate::error::{BenchError, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum SpectrumRecipe {
    /// The same spectrum every trial; the first entry is the target.
    Fixed(Vec<(f64, f64)>),
    /// One eigenvalue drawn uniformly on the circle.
    UniformSingle,
    /// `phi0` uniform, `phi1 = phi0 + delta`, `A1 = 1 - A0`.
    TwoEigen { a0: f64, delta: f64 },
    /// `n_eig` phases uniform on the circle with equal weights.
    EqualWeights { n_eig: usize },
    /// `phi0 = 0` with weight `a0`; the first spurious eigenvalue sits at
    /// `delta`, the rest uniform on `[delta, phi_max]`, weights uniform and
    /// rescaled to `1 - a0`.
    ManyEigen {
        n_eig: usize,
        a0: f64,
        delta: f64,
        phi_max: f64,
    },
    /// `phi0 = -delta`, one spurious eigenvalue at 0, the rest uniform on
    /// `[0, pi]`; weights as in `ManyEigen`.
    Gapped { n_eig: usize, a0: f64, delta: f64 },
}

/// A drawn spectrum and the eigenphase being estimated.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub spectrum: Spectrum,
    pub target: Phase,
    /// Smallest distance from the target to another eigenphase.
    pub gap: Option<f64>,
}

impl SpectrumRecipe {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(BenchError::Config(msg.into()));
        match *self {
            SpectrumRecipe::Fixed(ref e) if e.is_empty() => bad("fixed spectrum is empty"),
            SpectrumRecipe::TwoEigen { a0, delta } if !(a0 > 0.0 && a0 <= 1.0) || !delta.is_finite() => {
                bad("two-eigenvalue recipe needs 0 < a0 <= 1 and finite delta")
            }
            SpectrumRecipe::EqualWeights { n_eig: 0 } => bad("n_eig must be at least 1"),
            SpectrumRecipe::ManyEigen {
                n_eig,
                a0,
                delta,
                phi_max,
            } if n_eig < 2 || !(a0 > 0.0 && a0 < 1.0) || !(delta > 0.0 && delta <= phi_max && phi_max <= PI) => {
                bad("many-eigenvalue recipe needs n_eig >= 2, 0 < a0 < 1, 0 < delta <= phi_max <= pi")
            }
            SpectrumRecipe::Gapped { n_eig, a0, delta } if n_eig < 2 || !(a0 > 0.0 && a0 < 1.0) || !(delta > 0.0) => {
                bad("gapped recipe needs n_eig >= 2, 0 < a0 < 1, delta > 0")
            }
            _ => Ok(()),
        }
    }

    pub fn n_eig(&self) -> usize {
        match *self {
            SpectrumRecipe::Fixed(ref e) => e.len(),
            SpectrumRecipe::UniformSingle => 1,
            SpectrumRecipe::TwoEigen { .. } => 2,
            SpectrumRecipe::EqualWeights { n_eig }
            | SpectrumRecipe::ManyEigen { n_eig, .. }
            | SpectrumRecipe::Gapped { n_eig, .. } => n_eig,
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Instance> {
        let entries: Vec<(f64, f64)> = match *self {
            SpectrumRecipe::Fixed(ref e) => e.clone(),
            SpectrumRecipe::UniformSingle => vec![(uniform_phase(rng), 1.0)],
            SpectrumRecipe::TwoEigen { a0, delta } => {
                let phi0 = uniform_phase(rng);
                vec![(phi0, a0), (phi0 + delta, 1.0 - a0)]
            }
            SpectrumRecipe::EqualWeights { n_eig } => {
                (0..n_eig).map(|_| (uniform_phase(rng), 1.0 / n_eig as f64)).collect()
            }
            SpectrumRecipe::ManyEigen {
                n_eig,
                a0,
                delta,
                phi_max,
            } => {
                let mut phases = vec![0.0, delta];
                phases.extend((2..n_eig).map(|_| rng.random_range(delta..=phi_max)));
                with_weights(phases, a0, rng)
            }
            SpectrumRecipe::Gapped { n_eig, a0, delta } => {
                let mut phases = vec![-delta, 0.0];
                phases.extend((2..n_eig).map(|_| rng.random_range(0.0..=PI)));
                with_weights(phases, a0, rng)
            }
        };
        let target = wrap_phase(entries[0].0)?;
        let spectrum = Spectrum::new(entries)?;
        let gap = spectrum
            .phases()
            .skip(1)
            .map(|p| qpe_core::circular_distance(p, target))
            .min_by(f64::total_cmp);
        Ok(Instance { spectrum, target, gap })
    }
}

fn uniform_phase<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.random_range(-PI..PI)
}

/// Target weight `a0` first; the others uniform draws rescaled to `1 - a0`.
fn with_weights<R: Rng + ?Sized>(phases: Vec<f64>, a0: f64, rng: &mut R) -> Vec<(f64, f64)> {
    let raw: Vec<f64> = (1..phases.len()).map(|_| rng.random_range(f64::EPSILON..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut out = vec![(phases[0], a0)];
    out.extend(phases[1..].iter().zip(&raw).map(|(&p, &w)| (p, (1.0 - a0) * w / total)));
    out
}
