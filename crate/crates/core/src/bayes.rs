//! Bayesian estimator with the posterior stored as a truncated Fourier series.
//!
//! A density on the circle is kept as
//! `P(phi) = p0 + sum_{j>=1} (p_{2j-1} sin(j phi) + p_{2j} cos(j phi))`.
//! A round likelihood `1/2 + (f/2) cos(k phi + gamma)` multiplies this series
//! by a sparse operator that moves each frequency `j` to `j + k` and `|j - k|`,
//! so an update costs `O(bandwidth)` and widens the band by at most `k`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{QpeError, Result};
use crate::simulator::{NoiseModel, RoundSpec};
use crate::spectrum::{circular_distance, Phase};

/// Largest number of frequencies allocated when the run budget is larger.
pub const MAX_N_FREQ: usize = 20_000;

/// Minimum pairwise gap below which tracked eigenphases count as clustered.
pub const REJECTION_THRESHOLD: f64 = 0.05;

#[inline]
fn cos_idx(j: usize) -> usize {
    if j == 0 {
        0
    } else {
        2 * j
    }
}

#[inline]
fn sin_idx(j: usize) -> usize {
    2 * j - 1
}

/// Tail coefficients below this fraction of `p0` are dropped after an update.
pub const TRIM_RTOL: f64 = 1e-16;

/// Coefficients are stored as one buffer of length `2 n_freq`: cosine
/// coefficients `a[0..n]` followed by sine coefficients `b[0..n]`, `b[0] = 0`.
/// Entries above `band` are always zero.
#[derive(Debug, Clone)]
pub struct FourierPosterior {
    n_freq: usize,
    c: Vec<f64>,
    /// Highest frequency that may be non-zero.
    band: usize,
    truncations: u64,
    /// Previous coefficients, reused as the output of the next update;
    /// zero above `spare_band`.
    spare: Vec<f64>,
    spare_band: usize,
}

impl PartialEq for FourierPosterior {
    fn eq(&self, other: &Self) -> bool {
        self.n_freq == other.n_freq
            && self.c == other.c
            && self.band == other.band
            && self.truncations == other.truncations
    }
}

/// Flat prior over `[-pi, pi)` with frequencies `0..n_freq`.
pub fn init_flat(n_freq: usize) -> Result<FourierPosterior> {
    FourierPosterior::flat(n_freq)
}

/// `n_freq` sized for a run with total depth `k_tot`, capped at [`MAX_N_FREQ`].
pub fn default_n_freq(k_tot: u64) -> usize {
    (k_tot.saturating_add(1) as usize).clamp(2, MAX_N_FREQ)
}

impl FourierPosterior {
    pub fn flat(n_freq: usize) -> Result<Self> {
        if n_freq < 2 {
            return Err(QpeError::InvalidArgument(format!(
                "n_freq must be at least 2, got {n_freq}"
            )));
        }
        let mut c = vec![0.0; 2 * n_freq];
        c[0] = 1.0 / (2.0 * PI);
        Ok(Self {
            n_freq,
            c,
            band: 0,
            truncations: 0,
            spare: Vec::new(),
            spare_band: 0,
        })
    }

    /// Builds a posterior from coefficients in the layout
    /// `(p0, sin 1, cos 1, sin 2, cos 2, ...)` and normalizes it.
    pub fn from_coefficients(p: Vec<f64>) -> Result<Self> {
        if p.len() < 3 || p.len() % 2 == 0 {
            return Err(QpeError::InvalidArgument(format!(
                "coefficient vector must have odd length >= 3, got {}",
                p.len()
            )));
        }
        if let Some(x) = p.iter().find(|x| !x.is_finite()) {
            return Err(QpeError::NonFinite(*x));
        }
        let n_freq = p.len().div_ceil(2);
        let mut c = vec![0.0; 2 * n_freq];
        c[0] = p[0];
        for j in 1..n_freq {
            c[j] = p[cos_idx(j)];
            c[n_freq + j] = p[sin_idx(j)];
        }
        let band = (1..n_freq)
            .rev()
            .find(|&j| c[j] != 0.0 || c[n_freq + j] != 0.0)
            .unwrap_or(0);
        let mut post = Self {
            n_freq,
            c,
            band,
            truncations: 0,
            spare: Vec::new(),
            spare_band: 0,
        };
        post.normalize()?;
        Ok(post)
    }

    pub fn n_freq(&self) -> usize {
        self.n_freq
    }

    /// Coefficients in the layout `(p0, sin 1, cos 1, sin 2, cos 2, ...)`,
    /// length `2 n_freq - 1`.
    pub fn coefficients(&self) -> Vec<f64> {
        let n = self.n_freq;
        let mut p = vec![0.0; 2 * n - 1];
        p[0] = self.c[0];
        for j in 1..n {
            p[cos_idx(j)] = self.c[j];
            p[sin_idx(j)] = self.c[n + j];
        }
        p
    }

    #[inline]
    fn cos_coef(&self, j: usize) -> f64 {
        self.c[j]
    }

    #[inline]
    fn sin_coef(&self, j: usize) -> f64 {
        self.c[self.n_freq + j]
    }

    pub fn bandwidth(&self) -> usize {
        self.band
    }

    /// Number of updates that dropped a non-zero component above `n_freq`.
    pub fn truncations(&self) -> u64 {
        self.truncations
    }

    fn normalize(&mut self) -> Result<()> {
        let p0 = self.c[0];
        if !(p0 > 0.0) || !p0.is_finite() {
            return Err(QpeError::Degenerate(format!(
                "posterior mass {p0} cannot be normalized"
            )));
        }
        let s = 1.0 / (2.0 * PI * p0);
        let (a, b) = self.c.split_at_mut(self.n_freq);
        a[..=self.band].iter_mut().for_each(|x| *x *= s);
        b[..=self.band].iter_mut().for_each(|x| *x *= s);
        Ok(())
    }

    /// Multiplies by `base + amp cos(k phi + gamma)` into `out` without
    /// normalizing; returns the new band and whether anything was dropped.
    fn multiply_into(
        &self,
        k: usize,
        (cos_g, sin_g): (f64, f64),
        (base, amp): (f64, f64),
        out: &mut Vec<f64>,
        out_band: usize,
    ) -> (usize, bool) {
        let n = self.n_freq;
        let band = self.band;
        let new_band = (band + k).min(n - 1);
        out.resize(2 * n, 0.0);
        if out_band > new_band {
            out[new_band + 1..=out_band].fill(0.0);
            out[n + new_band + 1..n + out_band + 1].fill(0.0);
        }
        let (a, b) = self.c.split_at(n);
        let (oa, ob) = out.split_at_mut(n);
        let c = 0.5 * amp * cos_g;
        let s = 0.5 * amp * sin_g;

        // output frequency t collects j = t (constant term), j = t - k,
        // j = t + k and, for t <= k, j = k - t
        let at = |j: usize| if j <= band { (a[j], b[j]) } else { (0.0, 0.0) };
        let edge = |t: usize| -> (f64, f64) {
            let (a0, b0) = at(t);
            let mut va = base * a0;
            let mut vb = base * b0;
            if t >= k {
                let (x, y) = at(t - k);
                va += c * x + s * y;
                vb += c * y - s * x;
            }
            let (x, y) = at(t + k);
            if t == 0 {
                va += c * x - s * y;
            } else {
                va += c * x - s * y;
                vb += s * x + c * y;
                if t <= k {
                    let (x, y) = at(k - t);
                    va += c * x - s * y;
                    vb -= s * x + c * y;
                }
            }
            (va, vb)
        };
        // bulk: k < t and t + k <= band, all three neighbours present
        let lo = k + 1;
        let hi = band.saturating_sub(k);
        if lo <= hi {
            for t in 0..lo {
                (oa[t], ob[t]) = edge(t);
            }
            let (ca, cb) = (&a[lo..=hi], &b[lo..=hi]);
            let (da, db) = (&a[lo - k..=hi - k], &b[lo - k..=hi - k]);
            let (ua, ub) = (&a[lo + k..=hi + k], &b[lo + k..=hi + k]);
            let (wa, wb) = (&mut oa[lo..=hi], &mut ob[lo..=hi]);
            for i in 0..wa.len() {
                wa[i] = base * ca[i] + c * (da[i] + ua[i]) + s * (db[i] - ub[i]);
                wb[i] = base * cb[i] + c * (db[i] + ub[i]) + s * (ua[i] - da[i]);
            }
            for t in hi + 1..=new_band {
                (oa[t], ob[t]) = edge(t);
            }
        } else {
            for t in 0..=new_band {
                (oa[t], ob[t]) = edge(t);
            }
        }
        ob[0] = 0.0;
        let nonzero = |j: usize| a[j] != 0.0 || b[j] != 0.0;
        let dropped = (c != 0.0 || s != 0.0)
            && ((n.saturating_sub(k)..=band).any(nonzero) || (k >= n && (0..=(k - n).min(band)).any(nonzero)));
        (new_band, dropped)
    }

    fn multiply_round(&mut self, round: &RoundSpec, m: u8, noise: NoiseModel) {
        let f = noise.fidelity(round.k());
        self.multiply_weighted(round, m, (0.5, 0.5 * f));
    }

    fn multiply_weighted(&mut self, round: &RoundSpec, m: u8, weights: (f64, f64)) {
        let k = round.k() as usize;
        let mut out = std::mem::take(&mut self.spare);
        let (band, dropped) = self.multiply_into(k, outcome_angle(round.beta(), m), weights, &mut out, self.spare_band);
        self.spare = std::mem::replace(&mut self.c, out);
        self.spare_band = self.band;
        self.band = band;
        if dropped {
            self.truncations += 1;
        }
        self.trim();
    }

    /// Lowers the band past trailing frequencies that are negligible next to
    /// `p0`, zeroing them.
    fn trim(&mut self) {
        let n = self.n_freq;
        let thr = TRIM_RTOL * self.c[0].abs();
        while self.band > 0 && self.c[self.band].abs() <= thr && self.c[n + self.band].abs() <= thr {
            self.c[self.band] = 0.0;
            self.c[n + self.band] = 0.0;
            self.band -= 1;
        }
    }

    /// Bayes update on one round with outcome `m`; the likelihood is the
    /// noise-adjusted `P(m | phi)`.
    pub fn update_single(&mut self, k: u32, beta: f64, m: u8, noise: NoiseModel) -> Result<()> {
        let round = RoundSpec::new(k, beta)?;
        check_outcome(m)?;
        let f = noise.fidelity(k);
        self.multiply_normalized(&round, m, (0.5, 0.5 * f))
    }

    /// Multiplies by `base + amp cos(k phi + gamma)` with the normalization
    /// folded into the weights.
    fn multiply_normalized(&mut self, round: &RoundSpec, m: u8, (base, amp): (f64, f64)) -> Result<()> {
        let mass = self.single_round_mass(round.k() as usize, outcome_angle(round.beta(), m), (base, amp));
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(QpeError::Degenerate(format!(
                "posterior mass {mass} cannot be normalized"
            )));
        }
        self.multiply_weighted(round, m, (base / mass, amp / mass));
        Ok(())
    }

    /// `2 pi p0` after multiplying by `base + amp cos(k phi + gamma)`.
    fn single_round_mass(&self, k: usize, (cos_g, sin_g): (f64, f64), (base, amp): (f64, f64)) -> f64 {
        let (a, b) = if k <= self.band {
            (self.cos_coef(k), self.sin_coef(k))
        } else {
            (0.0, 0.0)
        };
        2.0 * PI * (base * self.c[0] + 0.5 * amp * (cos_g * a - sin_g * b))
    }

    /// Bayes update on all rounds of one experiment.
    pub fn update_experiment(&mut self, rounds: &[RoundSpec], outcomes: &[u8], noise: NoiseModel) -> Result<()> {
        check_aligned(rounds, outcomes)?;
        for (r, &m) in rounds.iter().zip(outcomes) {
            self.multiply_round(r, m, noise);
        }
        self.normalize()
    }

    /// `int P(phi) prod_r P(m_r | phi) dphi`.
    pub fn q_integral(&self, rounds: &[RoundSpec], outcomes: &[u8], noise: NoiseModel) -> Result<f64> {
        check_aligned(rounds, outcomes)?;
        match rounds {
            [] => Ok(2.0 * PI * self.c[0]),
            [r] => Ok(self.single_round_mass(
                r.k() as usize,
                outcome_angle(r.beta(), outcomes[0]),
                (0.5, 0.5 * noise.fidelity(r.k())),
            )),
            _ => {
                let mut tmp = self.clone();
                for (r, &m) in rounds.iter().zip(outcomes) {
                    tmp.multiply_round(r, m, noise);
                }
                Ok(2.0 * PI * tmp.c[0])
            }
        }
    }

    /// `<e^{i phi}> = pi (p2 + i p1)`.
    pub fn mean_phasor(&self) -> num_complex::Complex64 {
        if self.band == 0 {
            return num_complex::Complex64::new(0.0, 0.0);
        }
        num_complex::Complex64::new(PI * self.cos_coef(1), PI * self.sin_coef(1))
    }

    pub fn estimate_phase(&self) -> Result<Phase> {
        let z = self.mean_phasor();
        if z.norm() == 0.0 {
            return Err(QpeError::NoEstimate);
        }
        Ok(Phase::wrap_unchecked(z.arg()))
    }

    /// `|<e^{i phi}>|^{-2} - 1`; `+inf` for a zero phasor.
    pub fn holevo_var(&self) -> f64 {
        let r2 = self.mean_phasor().norm_sqr();
        if r2 == 0.0 {
            f64::INFINITY
        } else {
            1.0 / r2 - 1.0
        }
    }

    pub fn density(&self, phi: f64) -> f64 {
        let mut v = self.c[0];
        for j in 1..=self.band {
            let (s, c) = (j as f64 * phi).sin_cos();
            v += self.sin_coef(j) * s + self.cos_coef(j) * c;
        }
        v
    }

    /// Density on `n` uniform points starting at `-pi`.
    pub fn density_grid(&self, n: usize) -> Vec<(f64, f64)> {
        (0..n)
            .map(|i| {
                let phi = -PI + 2.0 * PI * i as f64 / n as f64;
                (phi, self.density(phi))
            })
            .collect()
    }

    /// Smallest density value on an `n`-point grid; negative lobes come from
    /// truncation.
    pub fn min_density(&self, n: usize) -> f64 {
        self.density_grid(n)
            .into_iter()
            .map(|(_, d)| d)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn to_csv(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::from("index,coefficient\n");
        for (i, c) in self.coefficients()[..=cos_idx(self.band)].iter().enumerate() {
            let _ = writeln!(out, "{i},{c:.17e}");
        }
        out
    }

    pub fn density_csv(&self, n: usize) -> String {
        use std::fmt::Write as _;
        let mut out = String::from("phi,density\n");
        for (phi, d) in self.density_grid(n) {
            let _ = writeln!(out, "{phi:.17e},{d:.17e}");
        }
        out
    }
}

/// `(cos, sin)` of `beta + m pi`, with the sign flip done exactly.
fn outcome_angle(beta: f64, m: u8) -> (f64, f64) {
    let (s, c) = beta.sin_cos();
    if m == 0 {
        (c, s)
    } else {
        (-c, -s)
    }
}

fn check_outcome(m: u8) -> Result<()> {
    if m > 1 {
        return Err(QpeError::InvalidArgument(format!("outcome must be 0 or 1, got {m}")));
    }
    Ok(())
}

fn check_aligned(rounds: &[RoundSpec], outcomes: &[u8]) -> Result<()> {
    if rounds.len() != outcomes.len() {
        return Err(QpeError::LengthMismatch {
            expected: rounds.len(),
            got: outcomes.len(),
        });
    }
    outcomes.iter().try_for_each(|&m| check_outcome(m))
}

/// Euclidean projection onto `{x : x_i >= 0, sum x_i = 1}`.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, x) in u.iter().enumerate() {
        cum += x;
        let t = (cum - 1.0) / (i + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeBelief {
    b: DVector<f64>,
    h: DMatrix<f64>,
    prior_mean: DVector<f64>,
    prior_sigma: f64,
    skipped: u64,
}

impl AmplitudeBelief {
    /// Prior mean `(1/2, 1/(2(n-1)), ...)` so index 0 tracks the target; a
    /// single component gets mean 1.
    pub fn new(n_track: usize, prior_sigma: f64) -> Result<Self> {
        if n_track == 0 {
            return Err(QpeError::Empty("tracked eigenvalues"));
        }
        let mean = if n_track == 1 {
            vec![1.0]
        } else {
            let rest = 0.5 / (n_track - 1) as f64;
            std::iter::once(0.5)
                .chain(std::iter::repeat_n(rest, n_track - 1))
                .collect()
        };
        Self::with_prior(mean, prior_sigma)
    }

    pub fn with_prior(mean: Vec<f64>, prior_sigma: f64) -> Result<Self> {
        if mean.is_empty() {
            return Err(QpeError::Empty("prior mean"));
        }
        if !(prior_sigma > 0.0) || !prior_sigma.is_finite() {
            return Err(QpeError::InvalidArgument(format!(
                "prior sigma must be positive, got {prior_sigma}"
            )));
        }
        let n = mean.len();
        let prior_mean = DVector::from_vec(mean);
        Ok(Self {
            b: prior_mean.clone(),
            h: DMatrix::identity(n, n) * (-1.0 / (prior_sigma * prior_sigma)),
            prior_mean,
            prior_sigma,
            skipped: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.b.is_empty()
    }

    pub fn mean(&self) -> &[f64] {
        self.b.as_slice()
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn prior_mean(&self) -> &[f64] {
        self.prior_mean.as_slice()
    }

    pub fn prior_sigma(&self) -> f64 {
        self.prior_sigma
    }

    /// Steps skipped because `B . q <= 0`.
    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    /// One approximate Newton step on `log(B . q)`. Returns `false` and leaves
    /// `B`, `H` untouched when `B . q <= 0`.
    pub fn newton_step(&mut self, q: &[f64]) -> Result<bool> {
        if q.len() != self.b.len() {
            return Err(QpeError::LengthMismatch {
                expected: self.b.len(),
                got: q.len(),
            });
        }
        let q = DVector::from_column_slice(q);
        let bq = self.b.dot(&q);
        if !(bq > 0.0) || !bq.is_finite() {
            self.skipped += 1;
            return Ok(false);
        }
        self.h -= &q * q.transpose() / (bq * bq);
        let grad = &q / bq;
        let neg_h = -&self.h;
        let ones = DVector::from_element(self.b.len(), 1.0);
        let solve = |rhs: &DVector<f64>| -> Result<DVector<f64>> {
            match neg_h.clone().cholesky() {
                Some(ch) => Ok(ch.solve(rhs)),
                None => neg_h
                    .clone()
                    .lu()
                    .solve(rhs)
                    .ok_or_else(|| QpeError::Degenerate("amplitude Hessian is singular".into())),
            }
        };
        // Newton step restricted to the plane sum(B) = 1
        let m_grad = solve(&grad)?;
        let m_ones = solve(&ones)?;
        let lambda = m_grad.sum() / m_ones.sum();
        let step = m_grad - m_ones * lambda;
        let moved: Vec<f64> = self.b.iter().zip(step.iter()).map(|(b, d)| b + d).collect();
        self.b = DVector::from_vec(project_simplex(&moved));
        Ok(true)
    }
}

fn log_objective(a: &[f64], history: &[Vec<f64>], mean: &[f64], sigma: f64) -> f64 {
    let mut f = -a.iter().zip(mean).map(|(x, m)| (x - m) * (x - m)).sum::<f64>() / (2.0 * sigma * sigma);
    for q in history {
        let s: f64 = a.iter().zip(q).map(|(x, y)| x * y).sum();
        if !(s > 0.0) {
            return f64::NEG_INFINITY;
        }
        f += s.ln();
    }
    f
}

fn log_gradient(a: &[f64], history: &[Vec<f64>], mean: &[f64], sigma: f64) -> Vec<f64> {
    let mut g: Vec<f64> = a.iter().zip(mean).map(|(x, m)| -(x - m) / (sigma * sigma)).collect();
    for q in history {
        let s: f64 = a.iter().zip(q).map(|(x, y)| x * y).sum();
        for (gi, qi) in g.iter_mut().zip(q) {
            *gi += qi / s;
        }
    }
    g
}

/// Maximizer over the simplex of
/// `-|A - A0|^2 / (2 Sigma^2) + sum_n log(A . q_n)` by projected gradient
/// ascent with Barzilai-Borwein steps and a non-monotone backtracking guard.
pub fn mle_amplitudes_exact(history: &[Vec<f64>], prior: &AmplitudeBelief) -> Result<Vec<f64>> {
    const TOL: f64 = 1e-8;
    const MAX_ITER: usize = 100_000;
    const MEMORY: usize = 10;
    let n = prior.len();
    if let Some(q) = history.iter().find(|q| q.len() != n) {
        return Err(QpeError::LengthMismatch {
            expected: n,
            got: q.len(),
        });
    }
    let mean = prior.prior_mean();
    let sigma = prior.prior_sigma();
    let mut a = project_simplex(mean);
    let mut f = log_objective(&a, history, mean, sigma);
    if !f.is_finite() {
        a = vec![1.0 / n as f64; n];
        f = log_objective(&a, history, mean, sigma);
        if !f.is_finite() {
            return Err(QpeError::Degenerate(
                "likelihood vanishes on the simplex interior".into(),
            ));
        }
    }
    let mut recent = std::collections::VecDeque::from([f]);
    let mut g = log_gradient(&a, history, mean, sigma);
    let mut eta = sigma * sigma;
    let mut grad_norm = f64::INFINITY;
    for iteration in 0..MAX_ITER {
        let stat: Vec<f64> = a.iter().zip(&g).map(|(x, gi)| x + gi).collect();
        grad_norm = dist(&project_simplex(&stat), &a);
        if grad_norm < TOL {
            return Ok(a);
        }
        let f_ref = recent.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let slack = 1e-12 * (1.0 + f.abs());
        let (next, f_next) = loop {
            let trial: Vec<f64> = a.iter().zip(&g).map(|(x, gi)| x + eta * gi).collect();
            let next = project_simplex(&trial);
            let ft = log_objective(&next, history, mean, sigma);
            let d = dist(&next, &a);
            if ft.is_finite() && ft >= f_ref + 1e-4 * d * d / eta - slack {
                break (next, ft);
            }
            eta *= 0.5;
            if eta < 1e-300 {
                return Err(QpeError::NotConverged {
                    iterations: iteration,
                    grad_norm,
                    iterate: a,
                });
            }
        };
        let g_next = log_gradient(&next, history, mean, sigma);
        let sk: Vec<f64> = next.iter().zip(&a).map(|(x, y)| x - y).collect();
        let yk: Vec<f64> = g_next.iter().zip(&g).map(|(x, y)| x - y).collect();
        let ss: f64 = sk.iter().map(|x| x * x).sum();
        let sy: f64 = sk.iter().zip(&yk).map(|(x, y)| x * y).sum();
        // concave objective: s . y < 0 along a useful step
        eta = if sy < 0.0 { (ss / -sy).clamp(1e-12, 1e12) } else { 1.0 };
        a = next;
        f = f_next;
        g = g_next;
        recent.push_back(f);
        if recent.len() > MEMORY {
            recent.pop_front();
        }
    }
    Err(QpeError::NotConverged {
        iterations: MAX_ITER,
        grad_norm,
        iterate: a,
    })
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// True iff two of `phases` are closer than `threshold`.
pub fn rejection_check(phases: &[Phase], threshold: f64) -> bool {
    phases
        .iter()
        .enumerate()
        .any(|(i, a)| phases[i + 1..].iter().any(|b| circular_distance(*a, *b) < threshold))
}

/// Independent per-eigenvalue posteriors plus an amplitude belief.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiEigPosterior {
    posteriors: Vec<FourierPosterior>,
    belief: AmplitudeBelief,
    experiments: u64,
}

impl MultiEigPosterior {
    pub fn new(n_track: usize, n_freq: usize, prior_sigma: f64) -> Result<Self> {
        Ok(Self {
            posteriors: vec![FourierPosterior::flat(n_freq)?; n_track.max(1)],
            belief: AmplitudeBelief::new(n_track, prior_sigma)?,
            experiments: 0,
        })
    }

    pub fn with_parts(posteriors: Vec<FourierPosterior>, belief: AmplitudeBelief) -> Result<Self> {
        if posteriors.len() != belief.len() {
            return Err(QpeError::LengthMismatch {
                expected: belief.len(),
                got: posteriors.len(),
            });
        }
        Ok(Self {
            posteriors,
            belief,
            experiments: 0,
        })
    }

    pub fn posteriors(&self) -> &[FourierPosterior] {
        &self.posteriors
    }

    pub fn belief(&self) -> &AmplitudeBelief {
        &self.belief
    }

    pub fn experiments(&self) -> u64 {
        self.experiments
    }

    pub fn truncations(&self) -> Vec<u64> {
        self.posteriors.iter().map(|p| p.truncations()).collect()
    }

    /// Estimate for the target (index 0).
    pub fn estimate_phase(&self) -> Result<Phase> {
        self.posteriors[0].estimate_phase()
    }

    /// Estimates of all tracked eigenphases; `None` where a posterior is still
    /// flat.
    pub fn estimates(&self) -> Vec<Option<Phase>> {
        self.posteriors.iter().map(|p| p.estimate_phase().ok()).collect()
    }

    pub fn holevo_var(&self) -> f64 {
        self.posteriors[0].holevo_var()
    }

    /// Marginal update `P_j <- (C_j + B_j L) P_j` with
    /// `C_j = sum_{k != j} B_k q_k`, followed by one Newton step on `B`.
    pub fn update_multi(&mut self, rounds: &[RoundSpec], outcomes: &[u8], noise: NoiseModel) -> Result<()> {
        check_aligned(rounds, outcomes)?;
        self.experiments += 1;
        if self.posteriors.len() == 1 {
            for (r, &m) in rounds.iter().zip(outcomes) {
                self.posteriors[0].update_single(r.k(), r.beta(), m, noise)?;
            }
            return Ok(());
        }
        let b = self.belief.mean().to_vec();
        let q = if let ([r], [m]) = (rounds, outcomes) {
            // one pass per track: multiply by (C_j + B_j / 2) + B_j (f/2) cos(k phi + gamma)
            let angle = outcome_angle(r.beta(), *m);
            let f = noise.fidelity(r.k());
            let k = r.k() as usize;
            let q: Vec<f64> = self
                .posteriors
                .iter()
                .map(|p| p.single_round_mass(k, angle, (0.5, 0.5 * f)))
                .collect();
            let total: f64 = b.iter().zip(&q).map(|(x, y)| x * y).sum();
            for (j, post) in self.posteriors.iter_mut().enumerate() {
                let c = total - b[j] * q[j];
                if b[j] == 0.0 {
                    continue;
                }
                post.multiply_normalized(r, *m, (c + 0.5 * b[j], 0.5 * f * b[j]))?;
            }
            q
        } else {
            self.fold_general(rounds, outcomes, noise, &b)?
        };
        self.belief.newton_step(&q)?;
        Ok(())
    }

    /// Update through full coefficient products; valid for any number of
    /// rounds. Returns `q`.
    fn fold_general(
        &mut self,
        rounds: &[RoundSpec],
        outcomes: &[u8],
        noise: NoiseModel,
        b: &[f64],
    ) -> Result<Vec<f64>> {
        let products: Vec<FourierPosterior> = self
            .posteriors
            .iter()
            .map(|p| {
                let mut t = p.clone();
                for (r, &m) in rounds.iter().zip(outcomes) {
                    t.multiply_round(r, m, noise);
                }
                t
            })
            .collect();
        let q: Vec<f64> = products.iter().map(|t| 2.0 * PI * t.c[0]).collect();
        let total: f64 = b.iter().zip(&q).map(|(x, y)| x * y).sum();
        for (j, (post, lp)) in self.posteriors.iter_mut().zip(products).enumerate() {
            let c = total - b[j] * q[j];
            let n = post.n_freq;
            let top = lp.band.max(post.band);
            for t in 0..=top {
                let (new_a, new_b) = if t <= lp.band {
                    (lp.c[t], lp.c[n + t])
                } else {
                    (0.0, 0.0)
                };
                post.c[t] = c * post.c[t] + b[j] * new_a;
                post.c[n + t] = c * post.c[n + t] + b[j] * new_b;
            }
            post.band = top;
            post.truncations = lp.truncations;
            post.normalize()?;
            post.trim();
        }
        Ok(q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::pure_round_prob;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn zero_above_band(p: &FourierPosterior) -> bool {
        let n = p.n_freq;
        (p.band + 1..n).all(|j| p.c[j] == 0.0 && p.c[n + j] == 0.0)
    }

    #[test]
    fn tracks_with_different_bands_stay_clean() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let mut wide = FourierPosterior::flat(256).unwrap();
        for _ in 0..40 {
            wide.update_single(5, rng.random_range(0.0..6.0), rng.random_range(0..2), NoiseModel::None)
                .unwrap();
        }
        let narrow = FourierPosterior::flat(256).unwrap();
        let belief = AmplitudeBelief::with_prior(vec![0.5, 0.5, 0.0], 0.1).unwrap();
        let mut multi = MultiEigPosterior::with_parts(vec![wide, narrow.clone(), narrow], belief).unwrap();
        for _ in 0..300 {
            let r = RoundSpec::new(rng.random_range(1..4), rng.random_range(0.0..6.0)).unwrap();
            multi
                .update_multi(&[r], &[rng.random_range(0..2)], NoiseModel::None)
                .unwrap();
            assert!(multi.posteriors().iter().all(zero_above_band));
        }
    }

    #[test]
    fn negligible_tail_is_trimmed() {
        let mut post = FourierPosterior::flat(512).unwrap();
        for _ in 0..300 {
            post.update_single(1, 0.0, 0, NoiseModel::None).unwrap();
        }
        // cos^600(phi/2): frequency j carries C(600, 300 + j) / C(600, 300)
        assert!(
            post.bandwidth() > 80 && post.bandwidth() < 150,
            "band {}",
            post.bandwidth()
        );
        assert!(zero_above_band(&post));
        let exact = |j: usize| (0..j).map(|i| (300 - i) as f64 / (301 + i) as f64).product::<f64>() / PI;
        for j in [1, 10, 40] {
            assert!((post.cos_coef(j) - exact(j)).abs() < 1e-12, "j={j}");
        }
    }

    const GRID: usize = 2048;

    fn grid_phasor(post: &FourierPosterior) -> num_complex::Complex64 {
        let h = 2.0 * PI / GRID as f64;
        post.density_grid(GRID)
            .into_iter()
            .map(|(phi, d)| num_complex::Complex64::from_polar(d * h, phi))
            .sum()
    }

    fn grid_integral(post: &FourierPosterior) -> f64 {
        let h = 2.0 * PI / GRID as f64;
        post.density_grid(GRID).into_iter().map(|(_, d)| d * h).sum()
    }

    #[test]
    fn flat_prior() {
        let p = init_flat(8).unwrap();
        assert_eq!(p.coefficients().len(), 15);
        assert!(matches!(p.estimate_phase(), Err(QpeError::NoEstimate)));
        assert_eq!(p.holevo_var(), f64::INFINITY);
        assert!((grid_integral(&p) - 1.0).abs() < 1e-12);
        assert!(init_flat(1).is_err());
    }

    #[test]
    fn first_updates_match_closed_forms() {
        let mut p = init_flat(8).unwrap();
        p.update_single(1, 0.0, 0, NoiseModel::None).unwrap();
        let c = p.coefficients();
        let inv = 1.0 / (2.0 * PI);
        assert!((c[0] - inv).abs() < 1e-15 && (c[2] - inv).abs() < 1e-15);
        assert!(c.iter().enumerate().all(|(i, x)| i == 0 || i == 2 || *x == 0.0));
        assert!((p.holevo_var() - 3.0).abs() < 1e-12);
        assert_eq!(p.estimate_phase().unwrap().value(), 0.0);

        p.update_single(1, 0.0, 1, NoiseModel::None).unwrap();
        let c = p.coefficients();
        assert!(c[1].abs() < 1e-15 && c[2].abs() < 1e-15);
        assert!((c[4] + inv).abs() < 1e-15);
        assert!(p.estimate_phase().is_err());
    }

    #[test]
    fn fully_depolarized_round_is_uninformative() {
        let mut p = init_flat(16).unwrap();
        p.update_single(2, 0.3, 0, NoiseModel::None).unwrap();
        let before = p.clone();
        p.update_single(3, 0.0, 1, NoiseModel::depolarizing(1e-6).unwrap())
            .unwrap();
        for (a, b) in p.coefficients().iter().zip(before.coefficients()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn estimate_examples() {
        let n = 4;
        let mut raw = vec![0.0; 2 * n - 1];
        raw[0] = 1.0;
        raw[1] = 0.7f64.sin();
        raw[2] = 0.7f64.cos();
        let p = FourierPosterior::from_coefficients(raw).unwrap();
        assert!((p.estimate_phase().unwrap().value() - 0.7).abs() < 1e-14);
        let mut raw = vec![0.0; 2 * n - 1];
        raw[0] = 1.0;
        raw[1] = 1.0;
        let p = FourierPosterior::from_coefficients(raw).unwrap();
        assert!((p.estimate_phase().unwrap().value() - PI / 2.0).abs() < 1e-14);
    }

    #[test]
    fn grid_oracle_for_random_updates() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let n_freq = 40;
            let band = rng.random_range(0..12usize);
            let mut raw = vec![0.0; 2 * n_freq - 1];
            raw[0] = 1.0;
            for j in 1..=band {
                raw[cos_idx(j)] = rng.random_range(-0.2..0.2);
                raw[sin_idx(j)] = rng.random_range(-0.2..0.2);
            }
            let mut post = FourierPosterior::from_coefficients(raw).unwrap();
            let before = post.clone();
            let k = rng.random_range(1..=8u32);
            let beta = rng.random_range(0.0..2.0 * PI);
            let m = rng.random_range(0..2u8);
            post.update_single(k, beta, m, NoiseModel::None).unwrap();
            assert!(post.bandwidth() <= before.bandwidth() + k as usize);
            let grid = before.density_grid(GRID);
            let h = 2.0 * PI / GRID as f64;
            let z: f64 = grid
                .iter()
                .map(|(phi, d)| d * pure_round_prob(*phi, k, beta, m) * h)
                .sum();
            for (phi, d) in grid {
                let expect = d * pure_round_prob(phi, k, beta, m) / z;
                assert!((post.density(phi) - expect).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn noisy_likelihood_matches_grid() {
        let noise = NoiseModel::depolarizing(5.0).unwrap();
        let mut post = init_flat(64).unwrap();
        let mut oracle: Vec<f64> = vec![1.0; GRID];
        let phis: Vec<f64> = (0..GRID).map(|i| -PI + 2.0 * PI * i as f64 / GRID as f64).collect();
        for (k, beta, m) in [(1, 0.0, 0), (3, 1.0, 1), (2, PI / 2.0, 0), (7, 0.2, 1)] {
            post.update_single(k, beta, m, noise).unwrap();
            for (o, phi) in oracle.iter_mut().zip(&phis) {
                *o *= noise.apply(pure_round_prob(*phi, k, beta, m), k);
            }
        }
        let z: f64 = oracle.iter().sum::<f64>() * 2.0 * PI / GRID as f64;
        for (o, phi) in oracle.iter().zip(&phis) {
            assert!((post.density(*phi) - o / z).abs() < 1e-9);
        }
    }

    #[test]
    fn holevo_matches_grid_for_sharp_posterior() {
        let mut post = init_flat(1000).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let phi = 0.9;
        for _ in 0..120 {
            let k = rng.random_range(1..=8u32);
            let beta = rng.random_range(0.0..2.0 * PI);
            let m = u8::from(rng.random::<f64>() >= pure_round_prob(phi, k, beta, 0));
            post.update_single(k, beta, m, NoiseModel::None).unwrap();
        }
        let z = grid_phasor(&post);
        let grid_var = 1.0 / z.norm_sqr() - 1.0;
        assert!((post.holevo_var() - grid_var).abs() < 1e-10);
        assert!(post.holevo_var() < 0.05);
        assert!((grid_integral(&post) - 1.0).abs() < 1e-8);
        assert_eq!(post.truncations(), 0);
    }

    #[test]
    fn truncation_is_counted() {
        let mut post = init_flat(4).unwrap();
        post.update_single(3, 0.0, 0, NoiseModel::None).unwrap();
        assert_eq!(post.truncations(), 0);
        post.update_single(3, 0.0, 0, NoiseModel::None).unwrap();
        assert_eq!(post.truncations(), 1);
        assert_eq!(post.bandwidth(), 3);
    }

    #[test]
    fn q_integral_examples() {
        let flat = init_flat(8).unwrap();
        let r = RoundSpec::new(1, 0.0).unwrap();
        assert!((flat.q_integral(&[r], &[0], NoiseModel::None).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(flat.q_integral(&[], &[], NoiseModel::None).unwrap(), 1.0);

        let mut peaked = init_flat(400).unwrap();
        for _ in 0..150 {
            peaked.update_single(1, 0.0, 0, NoiseModel::None).unwrap();
        }
        let q = peaked.q_integral(&[r], &[0], NoiseModel::None).unwrap();
        assert!(q > 0.99);

        let rounds = [r, RoundSpec::new(2, 0.4).unwrap()];
        let fast = peaked.q_integral(&rounds[1..], &[1], NoiseModel::None).unwrap();
        let mut tmp = peaked.clone();
        tmp.multiply_round(&rounds[1], 1, NoiseModel::None);
        assert!((fast - 2.0 * PI * tmp.c[0]).abs() < 1e-13);
        let h = 2.0 * PI / GRID as f64;
        let two: f64 = peaked
            .density_grid(GRID)
            .into_iter()
            .map(|(phi, d)| d * pure_round_prob(phi, 1, 0.0, 0) * pure_round_prob(phi, 2, 0.4, 1) * h)
            .sum();
        assert!((peaked.q_integral(&rounds, &[0, 1], NoiseModel::None).unwrap() - two).abs() < 1e-10);
    }

    #[test]
    fn single_track_is_bit_identical() {
        let mut multi = MultiEigPosterior::new(1, 64, 0.1).unwrap();
        let mut single = init_flat(64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..40 {
            let k = rng.random_range(1..=5u32);
            let beta = rng.random_range(0.0..2.0 * PI);
            let m = rng.random_range(0..2u8);
            multi
                .update_multi(&[RoundSpec::new(k, beta).unwrap()], &[m], NoiseModel::None)
                .unwrap();
            single.update_single(k, beta, m, NoiseModel::None).unwrap();
        }
        assert_eq!(multi.posteriors()[0], single);
    }

    #[test]
    fn single_round_fast_path_matches_general_update() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut fast = MultiEigPosterior::new(3, 64, 0.1).unwrap();
        for _ in 0..5 {
            let r = RoundSpec::new(rng.random_range(1..=4u32), rng.random_range(0.0..2.0 * PI)).unwrap();
            fast.update_multi(&[r], &[rng.random_range(0..2u8)], NoiseModel::None)
                .unwrap();
        }
        let mut slow = fast.clone();
        let noise = NoiseModel::depolarizing(9.0).unwrap();
        for _ in 0..30 {
            let r = RoundSpec::new(rng.random_range(1..=4u32), rng.random_range(0.0..2.0 * PI)).unwrap();
            let m = rng.random_range(0..2u8);
            fast.update_multi(&[r], &[m], noise).unwrap();
            let b = slow.belief.mean().to_vec();
            let q = slow.fold_general(&[r], &[m], noise, &b).unwrap();
            slow.belief.newton_step(&q).unwrap();
        }
        for (a, b) in fast.posteriors().iter().zip(slow.posteriors()) {
            for (x, y) in a.coefficients().iter().zip(b.coefficients()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        for (x, y) in fast.belief().mean().iter().zip(slow.belief().mean()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_start_stays_symmetric() {
        let belief = AmplitudeBelief::with_prior(vec![0.5, 0.5], 0.1).unwrap();
        let mut post = init_flat(32).unwrap();
        post.update_single(1, 0.3, 0, NoiseModel::None).unwrap();
        let mut mp = MultiEigPosterior::with_parts(vec![post.clone(), post], belief).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..30 {
            let k = rng.random_range(1..=4u32);
            let beta = rng.random_range(0.0..2.0 * PI);
            let m = rng.random_range(0..2u8);
            mp.update_multi(&[RoundSpec::new(k, beta).unwrap()], &[m], NoiseModel::None)
                .unwrap();
        }
        assert_eq!(mp.posteriors()[0], mp.posteriors()[1]);
        assert_eq!(mp.belief().mean()[0], mp.belief().mean()[1]);
    }

    #[test]
    fn newton_step_examples() {
        let mut b = AmplitudeBelief::with_prior(vec![0.5, 0.5], 0.1).unwrap();
        assert!(b.newton_step(&[0.3, 0.3]).unwrap());
        assert!((b.mean()[0] - 0.5).abs() < 1e-15 && (b.mean()[1] - 0.5).abs() < 1e-15);

        let mut b = AmplitudeBelief::with_prior(vec![0.5, 0.5], 0.1).unwrap();
        b.newton_step(&[1.0, 0.0]).unwrap();
        assert!(b.mean()[0] > 0.5);
        assert!((b.mean().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for _ in 0..500 {
            b.newton_step(&[1.0, 0.0]).unwrap();
        }
        assert!(b.mean()[0] > 0.99);

        let mut b = AmplitudeBelief::with_prior(vec![0.0, 1.0], 0.1).unwrap();
        assert!(!b.newton_step(&[1.0, 0.0]).unwrap());
        assert_eq!(b.skipped(), 1);
        assert!(b.newton_step(&[1.0]).is_err());
    }

    #[test]
    fn mle_examples() {
        let prior = AmplitudeBelief::with_prior(vec![0.7, 0.3], 0.1).unwrap();
        let a = mle_amplitudes_exact(&vec![vec![1.0, 1.0]; 20], &prior).unwrap();
        assert!((a[0] - 0.7).abs() < 1e-7);
        let sym = AmplitudeBelief::with_prior(vec![0.5, 0.5], 0.1).unwrap();
        let hist: Vec<Vec<f64>> = (0..40)
            .map(|i| if i % 2 == 0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] })
            .collect();
        let a = mle_amplitudes_exact(&hist, &sym).unwrap();
        assert!((a[0] - 0.5).abs() < 1e-7);
    }

    #[test]
    fn newton_tracks_exact_mle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let prior = AmplitudeBelief::new(2, 0.1).unwrap();
            let mut b = prior.clone();
            let truth: f64 = rng.random_range(0.2..0.8);
            let mut hist = Vec::new();
            for _ in 0..200 {
                let q0: f64 = rng.random_range(0.0..1.0);
                let q1: f64 = rng.random_range(0.0..1.0);
                // tilt toward the component that explains a sampled outcome
                let q = if rng.random::<f64>() < truth {
                    vec![q0.max(q1), q0.min(q1)]
                } else {
                    vec![q0.min(q1), q0.max(q1)]
                };
                b.newton_step(&q).unwrap();
                hist.push(q);
            }
            let exact = match mle_amplitudes_exact(&hist, &prior) {
                Ok(a) => a,
                Err(e) => panic!("{e:?}"),
            };
            assert!((b.mean()[0] - exact[0]).abs() < 0.05, "{:?} vs {:?}", b.mean(), exact);
        }
    }

    #[test]
    fn simplex_projection() {
        let p = project_simplex(&[0.2, 0.3, 0.5]);
        assert_eq!(p, vec![0.2, 0.3, 0.5]);
        let p = project_simplex(&[2.0, 0.0]);
        assert_eq!(p, vec![1.0, 0.0]);
        let p = project_simplex(&[0.6, 0.6]);
        assert!((p[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rejection_examples() {
        let ph = |v: &[f64]| v.iter().map(|x| Phase::new(*x).unwrap()).collect::<Vec<_>>();
        assert!(rejection_check(&ph(&[0.0, 0.03]), REJECTION_THRESHOLD));
        assert!(!rejection_check(&ph(&[0.0, 1.0]), REJECTION_THRESHOLD));
        assert!(!rejection_check(&ph(&[0.0]), REJECTION_THRESHOLD));
        assert!(rejection_check(&ph(&[3.13, -3.13]), REJECTION_THRESHOLD));
    }
}
