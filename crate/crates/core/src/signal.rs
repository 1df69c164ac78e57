//! Reconstruction of the spectral signal `g(k) = sum_j A_j e^{i k phi_j}` from
//! outcome tallies, with per-point standard deviations.

use std::f64::consts::FRAC_PI_2;
use std::fmt::Write as _;

use num_complex::Complex64;

use crate::error::{QpeError, Result};
use crate::simulator::{
    binomial, hamming_prob_noisy, round_outcome_prob_noisy, AggregatedCounts, MultiRoundCounts, NoiseModel,
    SingleRoundCounts,
};
use crate::spectrum::Spectrum;

/// `g(k)` for `k = 0..=K` with a standard deviation per point.
///
/// `sigma[k]` is the joint deviation of the real and imaginary parts,
/// `sqrt(Var Re + Var Im)`. Negative `k` is reached through `g(-k) = g(k)*`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalEstimate {
    g: Vec<Complex64>,
    sigma: Vec<f64>,
}

impl SignalEstimate {
    pub fn new(g: Vec<Complex64>, sigma: Vec<f64>) -> Result<Self> {
        if g.is_empty() {
            return Err(QpeError::Empty("signal"));
        }
        if g.len() != sigma.len() {
            return Err(QpeError::LengthMismatch {
                expected: g.len(),
                got: sigma.len(),
            });
        }
        Ok(Self { g, sigma })
    }

    /// A noiseless signal built directly from a spectrum.
    pub fn exact(spectrum: &Spectrum, k_max: usize) -> Self {
        let g = (0..=k_max as i64).map(|k| spectrum.signal(k)).collect();
        Self {
            g,
            sigma: vec![0.0; k_max + 1],
        }
    }

    /// Largest known `k`.
    pub fn k_max(&self) -> usize {
        self.g.len() - 1
    }

    pub fn values(&self) -> &[Complex64] {
        &self.g
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigma
    }

    /// `g(k)` for `|k| <= K`.
    pub fn at(&self, k: i64) -> Complex64 {
        if k >= 0 {
            self.g[k as usize]
        } else {
            self.g[(-k) as usize].conj()
        }
    }

    pub fn sigma_at(&self, k: i64) -> f64 {
        self.sigma[k.unsigned_abs() as usize]
    }

    /// Multiplies `g(k)` by `factor(k)`; used to emulate decay in tests and
    /// studies.
    pub fn scaled(&self, factor: impl Fn(usize) -> f64) -> Self {
        Self {
            g: self.g.iter().enumerate().map(|(k, g)| g * factor(k)).collect(),
            sigma: self.sigma.iter().enumerate().map(|(k, s)| s * factor(k)).collect(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,re_g,im_g,sigma\n");
        for (k, (g, s)) in self.g.iter().zip(&self.sigma).enumerate() {
            let _ = writeln!(out, "{k},{:.17e},{:.17e},{:.17e}", g.re, g.im, s);
        }
        out
    }
}

/// The conjugate-symmetric extension of a signal to `k = -K..=K`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricSignal {
    k_max: usize,
    g: Vec<Complex64>,
    sigma: Vec<f64>,
}

impl SymmetricSignal {
    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn at(&self, k: i64) -> Complex64 {
        self.g[(k + self.k_max as i64) as usize]
    }

    pub fn sigma_at(&self, k: i64) -> f64 {
        self.sigma[(k + self.k_max as i64) as usize]
    }

    /// Drops the negative half again.
    pub fn restrict(&self) -> SignalEstimate {
        SignalEstimate {
            g: self.g[self.k_max..].to_vec(),
            sigma: self.sigma[self.k_max..].to_vec(),
        }
    }
}

pub fn extend_negative(s: &SignalEstimate) -> SymmetricSignal {
    let k_max = s.k_max() as i64;
    SymmetricSignal {
        k_max: s.k_max(),
        g: (-k_max..=k_max).map(|k| s.at(k)).collect(),
        sigma: (-k_max..=k_max).map(|k| s.sigma_at(k)).collect(),
    }
}

/// Estimates `g(k)` from single-round tallies at `beta = 0` and `beta = pi/2`.
///
/// `K` is the largest `k` present; every `k = 1..=K` must have both angles.
pub fn g_from_single_round(counts: &SingleRoundCounts) -> Result<SignalEstimate> {
    let k_max = counts.max_k().ok_or(QpeError::Empty("single-round counts"))?;
    let mut g = Vec::with_capacity(k_max as usize + 1);
    let mut sigma = Vec::with_capacity(k_max as usize + 1);
    g.push(Complex64::new(1.0, 0.0));
    sigma.push(0.0);
    for k in 1..=k_max {
        let real = counts.get(k, 0.0).filter(|c| c[0] + c[1] > 0);
        let imag = counts.get(k, FRAC_PI_2).filter(|c| c[0] + c[1] > 0);
        let (Some(real), Some(imag)) = (real, imag) else {
            return Err(QpeError::MissingData(format!("no (k={k}, beta=0 | pi/2) tallies")));
        };
        let (p0, n0) = frequency(real);
        let (p1, n1) = frequency(imag);
        // Re g = P(0) - P(1) at beta = 0, Im g = P(1) - P(0) at beta = pi/2
        g.push(Complex64::new(2.0 * p0 - 1.0, 1.0 - 2.0 * p1));
        sigma.push((4.0 * p0 * (1.0 - p0) / n0 + 4.0 * p1 * (1.0 - p1) / n1).sqrt());
    }
    Ok(SignalEstimate { g, sigma })
}

fn frequency(c: [u64; 2]) -> (f64, f64) {
    let n = (c[0] + c[1]) as f64;
    (c[0] as f64 / n, n)
}

/// `g(k)` from the exact single-round probabilities (optionally depolarized).
pub fn single_round_signal_exact(spectrum: &Spectrum, k_max: u32, noise: NoiseModel) -> SignalEstimate {
    let mut g = vec![Complex64::new(1.0, 0.0)];
    for k in 1..=k_max {
        let p00 = round_outcome_prob_noisy(spectrum, k, 0.0, 0, noise);
        let p01 = round_outcome_prob_noisy(spectrum, k, 0.0, 1, noise);
        let p10 = round_outcome_prob_noisy(spectrum, k, FRAC_PI_2, 0, noise);
        let p11 = round_outcome_prob_noisy(spectrum, k, FRAC_PI_2, 1, noise);
        g.push(Complex64::new(p00 - p01, p11 - p10));
    }
    SignalEstimate {
        sigma: vec![0.0; g.len()],
        g,
    }
}

/// Coefficients `chi_k(hw0, hw1)` expressing `g(k)` through the Hamming-pair
/// distribution of the `K`-round `k = 1` design, for `0 <= k <= K/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChiTable {
    k_total: u32,
    chi: Vec<Complex64>,
}

impl ChiTable {
    pub fn new(k_total: u32) -> Result<Self> {
        if k_total == 0 || k_total % 2 != 0 {
            return Err(QpeError::InvalidArgument(format!(
                "K must be even and positive, got {k_total}"
            )));
        }
        let half = (k_total / 2) as usize;
        let rho = rho_table(half);
        let side = half + 1;
        let mut chi = vec![Complex64::new(0.0, 0.0); side * side * side];
        let neg_i_pow = |e: usize| match e % 4 {
            0 => Complex64::new(1.0, 0.0),
            1 => Complex64::new(0.0, -1.0),
            2 => Complex64::new(-1.0, 0.0),
            _ => Complex64::new(0.0, 1.0),
        };
        for k in 0..=half {
            for hw0 in 0..=half {
                for hw1 in 0..=half {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for l in 0..=k {
                        let c = binomial(k as u64, l as u64) * rho[l * side + hw0] * rho[(k - l) * side + hw1];
                        acc += neg_i_pow(k - l) * c;
                    }
                    chi[(k * side + hw0) * side + hw1] = acc;
                }
            }
        }
        Ok(Self { k_total, chi })
    }

    pub fn k_total(&self) -> u32 {
        self.k_total
    }

    pub fn half(&self) -> usize {
        (self.k_total / 2) as usize
    }

    pub fn get(&self, k: usize, hw0: usize, hw1: usize) -> Complex64 {
        let side = self.half() + 1;
        self.chi[(k * side + hw0) * side + hw1]
    }
}

/// `rho(l, w) = 2 * P[even weight in an l-subset of a weight-w string] - 1`,
/// i.e. the permutation average of `prod_{i<=l} (-1)^{m_i}`.
fn rho_table(half: usize) -> Vec<f64> {
    let side = half + 1;
    let mut rho = vec![0.0; side * side];
    for l in 0..=half {
        let total = binomial(half as u64, l as u64);
        for w in 0..=half {
            let mut even = 0.0;
            for p in 0..=l / 2 {
                even += binomial(w as u64, 2 * p as u64) * binomial((half - w) as u64, (l - 2 * p) as u64);
            }
            rho[l * side + w] = 2.0 * even / total - 1.0;
        }
    }
    rho
}

pub fn chi_closed_form(k: usize, hw0: usize, hw1: usize, k_total: u32) -> Result<Complex64> {
    let half = (k_total / 2) as usize;
    if k > half || hw0 > half || hw1 > half {
        return Err(QpeError::InvalidArgument(format!(
            "chi arguments (k={k}, hw0={hw0}, hw1={hw1}) out of range for K={k_total}"
        )));
    }
    // a one-entry table is cheap enough for a scalar query at these sizes
    Ok(ChiTable::new(k_total)?.get(k, hw0, hw1))
}

/// Largest `K` accepted by [`chi_oracle`].
pub const CHI_ORACLE_MAX_K: u32 = 16;

/// Brute-force `chi_k`: the average of `prod_{i<=k} [(-1)^{m_i} - i (-1)^{n_i}]`
/// over every pair of `K/2`-bit strings with Hamming weights `hw0` and `hw1`.
pub fn chi_oracle(k: usize, hw0: usize, hw1: usize, k_total: u32) -> Result<Complex64> {
    if k_total == 0 || k_total % 2 != 0 || k_total > CHI_ORACLE_MAX_K {
        return Err(QpeError::InvalidArgument(format!(
            "oracle needs even K <= {CHI_ORACLE_MAX_K}, got {k_total}"
        )));
    }
    let half = (k_total / 2) as usize;
    if k > half || hw0 > half || hw1 > half {
        return Err(QpeError::InvalidArgument(format!(
            "chi arguments (k={k}, hw0={hw0}, hw1={hw1}) out of range for K={k_total}"
        )));
    }
    let strings = |w: usize| -> Vec<u32> { (0u32..(1 << half)).filter(|s| s.count_ones() as usize == w).collect() };
    let ms = strings(hw0);
    let ns = strings(hw1);
    let mut acc = Complex64::new(0.0, 0.0);
    for &m in &ms {
        for &n in &ns {
            let mut prod = Complex64::new(1.0, 0.0);
            for i in 0..k {
                let x = if m >> i & 1 == 1 { -1.0 } else { 1.0 };
                let y = if n >> i & 1 == 1 { -1.0 } else { 1.0 };
                prod *= Complex64::new(x, -y);
            }
            acc += prod;
        }
    }
    Ok(acc / (ms.len() * ns.len()) as f64)
}

/// Estimates `g(k)`, `k = 0..=K/2`, from Hamming-pair tallies.
///
/// Standard deviations treat the cells as independent binomials.
pub fn g_from_multi_round(counts: &MultiRoundCounts) -> Result<SignalEstimate> {
    let shots = counts.shots();
    if shots == 0 {
        return Err(QpeError::MissingData("multi-round tallies are empty".into()));
    }
    let table = ChiTable::new(counts.k_total())?;
    let half = table.half();
    let n = shots as f64;
    let probs: Vec<f64> = (0..=half)
        .flat_map(|a| (0..=half).map(move |b| (a, b)))
        .map(|(a, b)| counts.get(a as u32, b as u32) as f64 / n)
        .collect();
    Ok(g_from_hamming_distribution(&table, &probs, Some(n)))
}

/// `g(k) = sum chi_k(hw0, hw1) P(hw0, hw1)` for a row-major distribution.
///
/// With `shots = None` the distribution is treated as exact and `sigma = 0`.
pub fn g_from_hamming_distribution(table: &ChiTable, probs: &[f64], shots: Option<f64>) -> SignalEstimate {
    let half = table.half();
    let side = half + 1;
    let mut g = vec![Complex64::new(1.0, 0.0)];
    let mut sigma = vec![0.0];
    for k in 1..=half {
        let mut acc = Complex64::new(0.0, 0.0);
        let mut var = 0.0;
        for a in 0..side {
            for b in 0..side {
                let p = probs[a * side + b];
                let chi = table.get(k, a, b);
                acc += chi * p;
                if let Some(n) = shots {
                    var += chi.norm_sqr() * p * (1.0 - p) / n;
                }
            }
        }
        g.push(acc);
        sigma.push(var.sqrt());
    }
    SignalEstimate { g, sigma }
}

/// `g(k)` for `k <= K/2` from the exact Hamming-pair distribution.
pub fn multi_round_signal_exact(spectrum: &Spectrum, k_total: u32, noise: NoiseModel) -> Result<SignalEstimate> {
    let table = ChiTable::new(k_total)?;
    let half = table.half() as u32;
    let mut probs = Vec::with_capacity(((half + 1) * (half + 1)) as usize);
    for a in 0..=half {
        for b in 0..=half {
            probs.push(hamming_prob_noisy(spectrum, k_total, a, b, noise)?);
        }
    }
    Ok(g_from_hamming_distribution(&table, &probs, None))
}

/// Dispatches on the tally mode.
pub fn signal_from_counts(counts: &AggregatedCounts) -> Result<SignalEstimate> {
    match counts {
        AggregatedCounts::SingleRound(c) => g_from_single_round(c),
        AggregatedCounts::MultiRound(c) => g_from_multi_round(c),
    }
}
