//! Phases on the circle, eigenphase spectra and the circular error metrics.

use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;

use num_complex::Complex64;

use crate::error::{QpeError, Result};

/// Tolerance on the total weight of a [`Spectrum`].
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Phases closer than this are treated as one degenerate eigenvalue.
pub const DEGENERACY_TOL: f64 = 1e-12;

/// A phase in radians, stored as its representative in `[-pi, pi)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct Phase(f64);

impl Phase {
    pub fn new(x: f64) -> Result<Self> {
        wrap_phase(x)
    }

    /// Wraps without a finiteness check; callers guarantee `x` is finite.
    pub(crate) fn wrap_unchecked(x: f64) -> Self {
        let mut y = x - TAU * ((x + PI) / TAU).floor();
        if y >= PI {
            y -= TAU;
        }
        if y < -PI {
            y = -PI;
        }
        Phase(y)
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    pub fn phasor(self) -> Complex64 {
        Complex64::from_polar(1.0, self.0)
    }
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

pub fn wrap_phase(x: f64) -> Result<Phase> {
    if !x.is_finite() {
        return Err(QpeError::NonFinite(x));
    }
    Ok(Phase::wrap_unchecked(x))
}

/// Distance on the unit circle, `|Arg(e^{i(a-b)})|`, in `[0, pi]`.
pub fn circular_distance(a: Phase, b: Phase) -> f64 {
    let d = (a.0 - b.0).abs();
    d.min(TAU - d)
}

/// Eigenphases with their starting-state overlaps `A_j`.
///
/// Weights are non-negative and sum to one; coinciding phases are merged on
/// construction so every entry is a distinct eigenvalue.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    entries: Vec<(Phase, f64)>,
}

impl Spectrum {
    pub fn new<I>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (f64, f64)>,
    {
        let mut merged: Vec<(Phase, f64)> = Vec::new();
        for (phi, w) in entries {
            let phase = wrap_phase(phi)?;
            if !w.is_finite() {
                return Err(QpeError::NonFinite(w));
            }
            if w < 0.0 {
                return Err(QpeError::InvalidSpectrum(format!("negative weight {w}")));
            }
            match merged
                .iter_mut()
                .find(|(p, _)| circular_distance(*p, phase) < DEGENERACY_TOL)
            {
                Some(entry) => entry.1 += w,
                None => merged.push((phase, w)),
            }
        }
        if merged.is_empty() {
            return Err(QpeError::Empty("spectrum"));
        }
        let total: f64 = merged.iter().map(|e| e.1).sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(QpeError::InvalidSpectrum(format!("weights sum to {total}, expected 1")));
        }
        Ok(Self { entries: merged })
    }

    /// Builds a spectrum after rescaling the weights to sum to one.
    pub fn normalized<I>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (f64, f64)>,
    {
        let raw: Vec<(f64, f64)> = entries.into_iter().collect();
        let total: f64 = raw.iter().map(|e| e.1).sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(QpeError::InvalidSpectrum(format!("weights sum to {total}")));
        }
        Self::new(raw.into_iter().map(|(p, w)| (p, w / total)))
    }

    pub fn single(phase: f64) -> Result<Self> {
        Self::new([(phase, 1.0)])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(Phase, f64)] {
        &self.entries
    }

    pub fn phases(&self) -> impl Iterator<Item = Phase> + '_ {
        self.entries.iter().map(|e| e.0)
    }

    pub fn weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|e| e.1)
    }

    /// The noiseless spectral signal `g(k) = sum_j A_j e^{i k phi_j}`.
    pub fn signal(&self, k: i64) -> Complex64 {
        self.entries
            .iter()
            .map(|(p, w)| Complex64::from_polar(*w, k as f64 * p.value()))
            .sum()
    }

    /// One `phase,weight` record per line.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (p, w) in &self.entries {
            let _ = writeln!(out, "{:.17e},{:.17e}", p.value(), w);
        }
        out
    }

    /// Parses `phase,weight` records; blank lines and `#` comments are skipped.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split(',');
            let mut next = |name: &str| -> Result<f64> {
                let field = fields.next().ok_or_else(|| QpeError::Parse {
                    line: i + 1,
                    msg: format!("missing {name}"),
                })?;
                field.trim().parse::<f64>().map_err(|e| QpeError::Parse {
                    line: i + 1,
                    msg: format!("{name}: {e}"),
                })
            };
            let phase = next("phase")?;
            let weight = next("weight")?;
            entries.push((phase, weight));
        }
        Self::new(entries)
    }
}

/// Error summary of repeated estimates of one phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorStats {
    pub mean_abs: f64,
    pub rms: f64,
    /// `|<e^{i phi~}>|^{-2} - 1`, infinite when the mean phasor vanishes.
    pub holevo_var: f64,
}

pub fn error_stats(true_phase: Phase, estimates: &[Phase]) -> Result<ErrorStats> {
    if estimates.is_empty() {
        return Err(QpeError::Empty("estimates"));
    }
    let n = estimates.len() as f64;
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    let mut phasor = Complex64::new(0.0, 0.0);
    for &e in estimates {
        let d = circular_distance(true_phase, e);
        abs_sum += d;
        sq_sum += d * d;
        phasor += e.phasor();
    }
    Ok(ErrorStats {
        mean_abs: abs_sum / n,
        rms: (sq_sum / n).sqrt(),
        holevo_var: holevo_from_phasor(phasor / n),
    })
}

/// Holevo variance from a mean phasor; sums of unit phasors that cancel to
/// rounding level count as zero.
pub(crate) fn holevo_from_phasor(mean: Complex64) -> f64 {
    let r2 = mean.norm_sqr();
    if r2 < 1e-28 {
        f64::INFINITY
    } else {
        1.0 / r2 - 1.0
    }
}
