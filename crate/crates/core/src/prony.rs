//! Time-series estimator: Hankel matrices of `g(k)`, a least-squares
//! time-shift operator, and its eigenvalues.
//!
//! The columns of the Hankel matrix `G0` are the vectors
//! `(g(k), ..., g(k + l - 1))`; `G1` holds the same vectors advanced by one.
//! Any `T` with `T G0 = G1` maps each single-frequency vector to itself times
//! `e^{i phi_j}`, so the arguments of its eigenvalues are the eigenphases.
//! Amplitudes follow from a real least-squares fit of `g(k)` to those
//! frequencies; spurious eigenvalues come out with near-zero amplitude.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{QpeError, Result};
use crate::linalg::{lstsq, pinv, RANK_RTOL};
use crate::signal::SignalEstimate;
use crate::spectrum::{circular_distance, Phase};

/// Which part of `g(k)` the Hankel matrices are built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HankelMode {
    /// `k = -K..=K`, using `g(-k) = g(k)*`.
    #[default]
    Symmetric,
    /// `k = 0..=K` only. Insensitive to a `g(k) -> g(k) e^{-k/K_err}` decay,
    /// which only shrinks the eigenvalue moduli.
    PositiveOnly,
}

impl HankelMode {
    fn span(self, k_max: usize) -> usize {
        match self {
            HankelMode::Symmetric => 2 * k_max + 1,
            HankelMode::PositiveOnly => k_max + 1,
        }
    }

    fn offset(self, k_max: usize) -> i64 {
        match self {
            HankelMode::Symmetric => -(k_max as i64),
            HankelMode::PositiveOnly => 0,
        }
    }

    /// The `l` that maximises the attainable rank `min(l, span - l)`, capped
    /// at `K`.
    pub fn default_order(self, k_max: usize) -> usize {
        match self {
            HankelMode::Symmetric => k_max.max(1),
            HankelMode::PositiveOnly => k_max.div_ceil(2).max(1),
        }
    }
}

impl std::fmt::Display for HankelMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            HankelMode::Symmetric => "symmetric",
            HankelMode::PositiveOnly => "positive_only",
        })
    }
}

impl std::str::FromStr for HankelMode {
    type Err = QpeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "symmetric" => Ok(HankelMode::Symmetric),
            "positive_only" | "positive" => Ok(HankelMode::PositiveOnly),
            other => Err(QpeError::InvalidArgument(format!("unknown Hankel mode {other:?}"))),
        }
    }
}

/// `G0[i][j] = g(i + j + offset)` and `G1[i][j] = g(i + j + 1 + offset)`,
/// both `l x (span - l)`, with the standard deviations of `G1`'s entries.
#[derive(Debug, Clone, PartialEq)]
pub struct HankelPair {
    pub g0: DMatrix<Complex64>,
    pub g1: DMatrix<Complex64>,
    pub g1_sigma: DMatrix<f64>,
    pub offset: i64,
}

pub fn build_hankel(signal: &SignalEstimate, l: usize, mode: HankelMode) -> Result<HankelPair> {
    let k_max = signal.k_max();
    let span = mode.span(k_max);
    if l == 0 || l > k_max || l >= span {
        return Err(QpeError::InvalidArgument(format!(
            "Hankel order l = {l} outside 1..={k_max} for mode {mode}"
        )));
    }
    let offset = mode.offset(k_max);
    let cols = span - l;
    let g0 = DMatrix::from_fn(l, cols, |i, j| signal.at(i as i64 + j as i64 + offset));
    let g1 = DMatrix::from_fn(l, cols, |i, j| signal.at(i as i64 + j as i64 + 1 + offset));
    let g1_sigma = DMatrix::from_fn(l, cols, |i, j| signal.sigma_at(i as i64 + j as i64 + 1 + offset));
    Ok(HankelPair {
        g0,
        g1,
        g1_sigma,
        offset,
    })
}

/// Least-squares shift operator `T` minimising `||T G0 - G1||`.
///
/// With `weights`, row `i` minimises `||(t_i G0 - G1_i) diag(1 / sigma_ij)||`
/// where `sigma_ij` is the deviation of `G1[i][j]`. Zero deviations are
/// floored at the smallest positive one; if every deviation is zero the
/// unweighted problem is solved.
pub fn solve_shift(pair: &HankelPair, weights: Option<&DMatrix<f64>>) -> Result<DMatrix<Complex64>> {
    let g0 = &pair.g0;
    if g0.ncols() == 0 {
        return Err(QpeError::Degenerate("G0 has no columns".into()));
    }
    if g0.iter().all(|z| z.norm() == 0.0) {
        return Err(QpeError::Degenerate("G0 is identically zero".into()));
    }
    let Some(sigma) = weights else {
        return Ok(&pair.g1 * pinv(g0, RANK_RTOL)?);
    };
    if sigma.shape() != pair.g1.shape() {
        return Err(QpeError::LengthMismatch {
            expected: pair.g1.len(),
            got: sigma.len(),
        });
    }
    let floor = sigma.iter().cloned().filter(|s| *s > 0.0).fold(f64::INFINITY, f64::min);
    if !floor.is_finite() {
        return Ok(&pair.g1 * pinv(g0, RANK_RTOL)?);
    }
    let l = g0.nrows();
    let cols = g0.ncols();
    let mut shift = DMatrix::zeros(l, l);
    for i in 0..l {
        let w: Vec<f64> = (0..cols).map(|j| 1.0 / sigma[(i, j)].max(floor)).collect();
        // transpose of t_i (G0 W) = g1_i W
        let a = DMatrix::from_fn(cols, l, |j, r| g0[(r, j)] * w[j]);
        let b = DVector::from_fn(cols, |j, _| pair.g1[(i, j)] * w[j]);
        let t = lstsq(&a, &b, RANK_RTOL)?;
        shift.row_mut(i).copy_from(&t.transpose());
    }
    Ok(shift)
}

/// Eigenvalues of the shift operator as (wrapped argument, modulus).
pub fn eigenphases(shift: &DMatrix<Complex64>) -> Result<Vec<(Phase, f64)>> {
    if !shift.is_square() || shift.nrows() == 0 {
        return Err(QpeError::InvalidArgument(format!(
            "shift operator must be square and non-empty, got {:?}",
            shift.shape()
        )));
    }
    if shift.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(QpeError::Degenerate("shift operator has non-finite entries".into()));
    }
    let n = shift.nrows();
    let eigs: Vec<Complex64> = if n == 1 {
        vec![shift[(0, 0)]]
    } else {
        let schur = nalgebra::Schur::try_new(shift.clone(), f64::EPSILON, 1000 * n).ok_or(QpeError::EigenFailure(n))?;
        let (_, t) = schur.unpack();
        (0..n).map(|i| t[(i, i)]).collect()
    };
    Ok(eigs
        .into_iter()
        .map(|z| (Phase::wrap_unchecked(z.arg()), z.norm()))
        .collect())
}

/// Real least-squares amplitudes `A` minimising `||B A - g||` over all known
/// `k >= 0`, with `B[k][j] = e^{i k phi_j}`.
///
/// Real and imaginary parts are stacked so the solution is real; the
/// minimum-norm solution is returned when `B` is rank deficient.
pub fn recover_amplitudes(phases: &[Phase], signal: &SignalEstimate) -> Result<Vec<f64>> {
    if phases.is_empty() {
        return Err(QpeError::Empty("phases"));
    }
    let rows = signal.k_max() + 1;
    let n = phases.len();
    let b = DMatrix::from_fn(2 * rows, n, |r, j| {
        let k = (r % rows) as f64;
        let z = Complex64::from_polar(1.0, k * phases[j].value());
        if r < rows {
            z.re
        } else {
            z.im
        }
    });
    let g = signal.values();
    let rhs = DVector::from_fn(2 * rows, |r, _| if r < rows { g[r].re } else { g[r - rows].im });
    Ok(lstsq(&b, &rhs, RANK_RTOL)?.iter().cloned().collect())
}

/// Descending amplitude, ties by phase.
fn sort_components(components: &mut [SpectralComponent]) {
    components.sort_by(|a, b| {
        b.amplitude
            .total_cmp(&a.amplitude)
            .then(a.phase.value().total_cmp(&b.phase.value()))
    });
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralComponent {
    pub phase: Phase,
    /// Raw least-squares amplitude; may be slightly negative under noise.
    pub amplitude: f64,
    /// Eigenvalue modulus of the shift operator.
    pub modulus: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PronyEstimate {
    /// Sorted by descending raw amplitude.
    pub components: Vec<SpectralComponent>,
    pub mode: HankelMode,
    pub order: usize,
}

impl PronyEstimate {
    pub fn phases(&self) -> Vec<Phase> {
        self.components.iter().map(|c| c.phase).collect()
    }

    pub fn amplitudes(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.amplitude).collect()
    }

    /// Amplitudes clipped at zero and rescaled to sum to one.
    pub fn normalized_amplitudes(&self) -> Vec<f64> {
        let clipped: Vec<f64> = self.components.iter().map(|c| c.amplitude.max(0.0)).collect();
        let total: f64 = clipped.iter().sum();
        if total > 0.0 {
            clipped.iter().map(|a| a / total).collect()
        } else {
            vec![1.0 / clipped.len() as f64; clipped.len()]
        }
    }

    /// Geometric mean decay per step implied by the moduli of the dominant
    /// component; `None` when the estimate is empty.
    pub fn decay(&self) -> Option<f64> {
        self.components.first().map(|c| c.modulus)
    }

    /// Merges components whose phases chain within `tol` of each other.
    ///
    /// A merged component carries the summed amplitude and the phase and
    /// modulus of its member with the largest `|amplitude|`. Noise can split
    /// one frequency into a near-degenerate pair whose least-squares
    /// amplitudes are large and of opposite sign; merging restores the pair's
    /// net weight.
    pub fn clustered(&self, tol: f64) -> PronyEstimate {
        let mut sorted = self.components.clone();
        sorted.sort_by(|a, b| a.phase.value().total_cmp(&b.phase.value()));
        let mut groups: Vec<Vec<SpectralComponent>> = Vec::new();
        for c in sorted {
            match groups.last_mut() {
                Some(g) if circular_distance(g[g.len() - 1].phase, c.phase) <= tol => g.push(c),
                _ => groups.push(vec![c]),
            }
        }
        // the circle wraps: the last group may join the first
        if groups.len() > 1 {
            let first = groups[0][0].phase;
            let last = &groups[groups.len() - 1];
            if circular_distance(last[last.len() - 1].phase, first) <= tol {
                let tail = groups.pop().expect("len > 1");
                groups[0].extend(tail);
            }
        }
        let mut components: Vec<SpectralComponent> = groups
            .into_iter()
            .map(|g| {
                let lead = *g
                    .iter()
                    .max_by(|a, b| a.amplitude.abs().total_cmp(&b.amplitude.abs()))
                    .expect("non-empty group");
                SpectralComponent {
                    amplitude: g.iter().map(|c| c.amplitude).sum(),
                    ..lead
                }
            })
            .collect();
        sort_components(&mut components);
        PronyEstimate {
            components,
            mode: self.mode,
            order: self.order,
        }
    }

    pub fn to_csv(&self) -> String {
        use std::fmt::Write as _;
        let mut out = format!("# mode={} l={}\nphase,amplitude,modulus\n", self.mode, self.order);
        for c in &self.components {
            let _ = writeln!(out, "{:.17e},{:.17e},{:.17e}", c.phase.value(), c.amplitude, c.modulus);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PronyConfig {
    /// Number of frequencies `l`; `None` picks [`HankelMode::default_order`].
    pub order: Option<usize>,
    pub mode: HankelMode,
    /// Weight the shift fit by the deviations of `G1`.
    pub weighted: bool,
}

pub fn estimate(signal: &SignalEstimate, config: &PronyConfig) -> Result<PronyEstimate> {
    let order = config
        .order
        .unwrap_or_else(|| config.mode.default_order(signal.k_max()));
    let pair = build_hankel(signal, order, config.mode)?;
    let weights = config.weighted.then_some(&pair.g1_sigma);
    let shift = solve_shift(&pair, weights)?;
    let eig = eigenphases(&shift)?;
    let phases: Vec<Phase> = eig.iter().map(|e| e.0).collect();
    let amplitudes = recover_amplitudes(&phases, signal)?;
    let mut components: Vec<SpectralComponent> = eig
        .iter()
        .zip(amplitudes)
        .map(|(&(phase, modulus), amplitude)| SpectralComponent {
            phase,
            amplitude,
            modulus,
        })
        .collect();
    sort_components(&mut components);
    Ok(PronyEstimate {
        components,
        mode: config.mode,
        order,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TargetPolicy {
    MaxAmplitude,
    Nearest(Phase),
}

/// Amplitudes within this distance count as tied.
const TIE_TOL: f64 = 1e-12;

/// Picks the estimate of the target eigenphase; ties go to the smaller phase.
pub fn select_target(estimate: &PronyEstimate, policy: TargetPolicy) -> Result<Phase> {
    let first = estimate.components.first().ok_or(QpeError::Empty("estimate"))?;
    let score = |c: &SpectralComponent| match policy {
        TargetPolicy::MaxAmplitude => -c.amplitude,
        TargetPolicy::Nearest(r) => circular_distance(c.phase, r),
    };
    let mut best = first;
    for c in &estimate.components[1..] {
        let (s, sb) = (score(c), score(best));
        if s < sb - TIE_TOL || ((s - sb).abs() <= TIE_TOL && c.phase.value() < best.phase.value()) {
            best = c;
        }
    }
    Ok(best.phase)
}

/// Phase variance of the `l = 1` estimator for one eigenvalue.
///
/// Unweighted: `[sin^2(K phi) Var Re g(K) + cos^2(K phi) Var Im g(K)] / K^2`
/// with both variances `1/N`, i.e. `1 / (K^2 N)`. The weighted multi-round
/// fit spreads the sensitivity over all `k` and scales as `1 / (K N)`.
pub fn predicted_single_freq_variance(k_max: usize, shots: f64, phase: f64, weighted: bool) -> f64 {
    let k = k_max as f64;
    if weighted {
        1.0 / (k * shots)
    } else {
        single_freq_variance_parts(k_max, phase, 1.0 / shots, 1.0 / shots)
    }
}

/// The unweighted variance with separate variances for `Re g(K)`, `Im g(K)`.
pub fn single_freq_variance_parts(k_max: usize, phase: f64, var_re: f64, var_im: f64) -> f64 {
    let k = k_max as f64;
    let (s, c) = (k * phase).sin_cos();
    (s * s * var_re + c * c * var_im) / (k * k)
}

/// `(d phi / d Re g(K), d phi / d Im g(K))` for the `l = 1` symmetric estimator
/// on an exact single-frequency signal. All interior derivatives vanish.
pub fn endpoint_sensitivity(k_max: usize, phase: f64) -> (f64, f64) {
    let k = k_max as f64;
    let (s, c) = (k * phase).sin_cos();
    (-s / k, c / k)
}

/// Phase grid spacing below which two estimates are indistinguishable.
pub fn resolution_limit(k_max: usize) -> f64 {
    PI / k_max.max(1) as f64
}
