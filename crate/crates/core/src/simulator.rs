//! Outcome probabilities of single-ancilla phase-estimation experiments and
//! seeded sampling from them.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

use crate::error::{QpeError, Result};
use crate::spectrum::Spectrum;

/// Tolerance used when matching a rotation angle to 0 or pi/2.
const BETA_MATCH_TOL: f64 = 1e-12;

/// One round: `k` controlled-U applications followed by a `beta` rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundSpec {
    k: u32,
    beta: f64,
}

impl RoundSpec {
    pub fn new(k: u32, beta: f64) -> Result<Self> {
        if k == 0 {
            return Err(QpeError::InvalidArgument("round needs k >= 1".into()));
        }
        if !beta.is_finite() {
            return Err(QpeError::NonFinite(beta));
        }
        Ok(Self { k, beta })
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

/// The rounds of one experiment, executed after a single state preparation.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    rounds: Vec<RoundSpec>,
    total_k: u64,
}

/// How an experiment's outcomes are tallied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Design {
    SingleRound {
        k: u32,
        beta: f64,
    },
    /// `K` rounds with `k = 1`, half at `beta = 0` and half at `beta = pi/2`.
    Hamming {
        k_total: u32,
    },
    Other,
}

impl ExperimentSpec {
    pub fn new(rounds: Vec<RoundSpec>) -> Result<Self> {
        if rounds.is_empty() {
            return Err(QpeError::Empty("experiment rounds"));
        }
        let total_k = rounds.iter().map(|r| r.k as u64).sum();
        Ok(Self { rounds, total_k })
    }

    pub fn single(k: u32, beta: f64) -> Result<Self> {
        Self::new(vec![RoundSpec::new(k, beta)?])
    }

    pub fn rounds(&self) -> &[RoundSpec] {
        &self.rounds
    }

    /// `K = sum_r k_r`.
    pub fn total_k(&self) -> u64 {
        self.total_k
    }

    pub fn design(&self) -> Design {
        if let [r] = self.rounds.as_slice() {
            return Design::SingleRound { k: r.k, beta: r.beta };
        }
        let n = self.rounds.len();
        if n % 2 != 0 || self.rounds.iter().any(|r| r.k != 1) {
            return Design::Other;
        }
        let zeros = self.rounds.iter().filter(|r| beta_is(r.beta, 0.0)).count();
        let quarters = self.rounds.iter().filter(|r| beta_is(r.beta, FRAC_PI_2)).count();
        if zeros == n / 2 && quarters == n / 2 {
            Design::Hamming { k_total: n as u32 }
        } else {
            Design::Other
        }
    }
}

fn beta_is(beta: f64, target: f64) -> bool {
    (beta - target).abs() < BETA_MATCH_TOL
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum NoiseModel {
    #[default]
    None,
    /// Each round's bit is replaced by a fair coin with probability
    /// `1 - exp(-k / k_err)`.
    Depolarizing { k_err: f64 },
}

impl NoiseModel {
    pub fn depolarizing(k_err: f64) -> Result<Self> {
        if !(k_err > 0.0) {
            return Err(QpeError::InvalidArgument(format!(
                "k_err must be positive, got {k_err}"
            )));
        }
        Ok(Self::Depolarizing { k_err })
    }

    /// Probability `p(k)` that a depth-`k` round is unaffected.
    pub fn fidelity(&self, k: u32) -> f64 {
        match *self {
            NoiseModel::None => 1.0,
            NoiseModel::Depolarizing { k_err } => (-(k as f64) / k_err).exp(),
        }
    }

    pub fn apply(&self, p: f64, k: u32) -> f64 {
        match *self {
            NoiseModel::None => p,
            NoiseModel::Depolarizing { k_err } => apply_depolarizing(p, k, k_err),
        }
    }
}

pub fn apply_depolarizing(p: f64, k: u32, k_err: f64) -> f64 {
    let f = (-(k as f64) / k_err).exp();
    p * f + (1.0 - f) / 2.0
}

/// `cos^2(k phi / 2 + (beta - m pi) / 2)` for a single eigenphase.
#[inline]
pub fn pure_round_prob(phi: f64, k: u32, beta: f64, m: u8) -> f64 {
    let x = 0.5 * (k as f64 * phi + beta - m as f64 * PI);
    let c = x.cos();
    c * c
}

pub fn round_outcome_prob(spectrum: &Spectrum, k: u32, beta: f64, m: u8) -> f64 {
    spectrum
        .entries()
        .iter()
        .map(|(p, a)| a * pure_round_prob(p.value(), k, beta, m))
        .sum()
}

pub fn experiment_outcome_prob(spectrum: &Spectrum, spec: &ExperimentSpec, outcomes: &[u8]) -> Result<f64> {
    experiment_outcome_prob_noisy(spectrum, spec, outcomes, NoiseModel::None)
}

/// Outcome-string probability with each round depolarized at its own depth.
pub fn experiment_outcome_prob_noisy(
    spectrum: &Spectrum,
    spec: &ExperimentSpec,
    outcomes: &[u8],
    noise: NoiseModel,
) -> Result<f64> {
    if outcomes.len() != spec.rounds.len() {
        return Err(QpeError::LengthMismatch {
            expected: spec.rounds.len(),
            got: outcomes.len(),
        });
    }
    Ok(spectrum
        .entries()
        .iter()
        .map(|(p, a)| {
            a * spec
                .rounds
                .iter()
                .zip(outcomes)
                .map(|(r, &m)| noise.apply(pure_round_prob(p.value(), r.k, r.beta, m), r.k))
                .product::<f64>()
        })
        .sum())
}

/// `C(n, r)` in floating point.
pub fn binomial(n: u64, r: u64) -> f64 {
    if r > n {
        return 0.0;
    }
    let r = r.min(n - r);
    let mut acc = 1.0f64;
    for i in 0..r {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc.round_if_exact()
}

trait RoundIfExact {
    fn round_if_exact(self) -> Self;
}

impl RoundIfExact for f64 {
    fn round_if_exact(self) -> f64 {
        // binomials below 2^53 are integers; strip accumulated rounding
        if self < 9.0e15 {
            self.round()
        } else {
            self
        }
    }
}

fn binomial_pmf(n: u32, x: u32, p: f64) -> f64 {
    binomial(n as u64, x as u64) * p.powi(x as i32) * (1.0 - p).powi((n - x) as i32)
}

/// Probability of Hamming pair `(hw0, hw1)` in the `K`-round `k = 1` design.
pub fn hamming_prob(spectrum: &Spectrum, k_total: u32, hw0: u32, hw1: u32) -> Result<f64> {
    hamming_prob_noisy(spectrum, k_total, hw0, hw1, NoiseModel::None)
}

pub fn hamming_prob_noisy(spectrum: &Spectrum, k_total: u32, hw0: u32, hw1: u32, noise: NoiseModel) -> Result<f64> {
    let half = check_hamming_args(k_total, hw0, hw1)?;
    Ok(spectrum
        .entries()
        .iter()
        .map(|(p, a)| {
            let (q0, q1) = hamming_one_probs(p.value(), noise);
            a * binomial_pmf(half, hw0, q0) * binomial_pmf(half, hw1, q1)
        })
        .sum())
}

fn check_hamming_args(k_total: u32, hw0: u32, hw1: u32) -> Result<u32> {
    if k_total == 0 || k_total % 2 != 0 {
        return Err(QpeError::InvalidArgument(format!(
            "K must be even and positive, got {k_total}"
        )));
    }
    let half = k_total / 2;
    if hw0 > half || hw1 > half {
        return Err(QpeError::InvalidArgument(format!(
            "Hamming weights ({hw0}, {hw1}) exceed K/2 = {half}"
        )));
    }
    Ok(half)
}

/// Probabilities of a 1-outcome in a `beta = 0` and a `beta = pi/2` round.
fn hamming_one_probs(phi: f64, noise: NoiseModel) -> (f64, f64) {
    let q0 = noise.apply(pure_round_prob(phi, 1, 0.0, 1), 1);
    let q1 = noise.apply(pure_round_prob(phi, 1, FRAC_PI_2, 1), 1);
    (q0, q1)
}

fn pick_eigen<R: Rng + ?Sized>(spectrum: &Spectrum, rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let entries = spectrum.entries();
    for (p, a) in entries {
        acc += a;
        if u < acc {
            return p.value();
        }
    }
    entries[entries.len() - 1].0.value()
}

/// Draws one outcome string; the eigenstate is sampled first, then each round
/// independently.
pub fn sample_experiment<R: Rng + ?Sized>(
    spectrum: &Spectrum,
    spec: &ExperimentSpec,
    noise: NoiseModel,
    rng: &mut R,
) -> Vec<u8> {
    let phi = pick_eigen(spectrum, rng);
    spec.rounds
        .iter()
        .map(|r| {
            let p1 = noise.apply(pure_round_prob(phi, r.k, r.beta, 1), r.k);
            u8::from(rng.random::<f64>() < p1)
        })
        .collect()
}

/// Generator for trial `stream` of a campaign seeded with `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Rotation angle usable as an ordered map key.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaKey(pub f64);

impl Eq for BetaKey {}

impl PartialOrd for BetaKey {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for BetaKey {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Single-round tallies keyed by `(k, beta)`, holding counts of `m = 0, 1`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SingleRoundCounts {
    cells: BTreeMap<(u32, BetaKey), [u64; 2]>,
}

impl SingleRoundCounts {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, k: u32, beta: f64, m: u8, count: u64) {
        if count == 0 {
            return;
        }
        self.cells.entry((k, BetaKey(beta))).or_insert([0, 0])[usize::from(m & 1)] += count;
    }

    /// Counts of `m = 0` and `m = 1`, matching `beta` to within 1e-12.
    pub fn get(&self, k: u32, beta: f64) -> Option<[u64; 2]> {
        let lo = (k, BetaKey(beta - BETA_MATCH_TOL));
        let hi = (k, BetaKey(beta + BETA_MATCH_TOL));
        let mut total: Option<[u64; 2]> = None;
        for (_, c) in self.cells.range(lo..=hi) {
            let t = total.get_or_insert([0, 0]);
            t[0] += c[0];
            t[1] += c[1];
        }
        total
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64, [u64; 2])> + '_ {
        self.cells.iter().map(|(&(k, b), &c)| (k, b.0, c))
    }

    pub fn max_k(&self) -> Option<u32> {
        self.cells.keys().map(|k| k.0).max()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn merge(&mut self, other: &Self) {
        for (&key, c) in &other.cells {
            let e = self.cells.entry(key).or_insert([0, 0]);
            e[0] += c[0];
            e[1] += c[1];
        }
    }
}

/// Hamming-pair tallies of the `K`-round `k = 1` design.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiRoundCounts {
    k_total: u32,
    tallies: Vec<u64>,
}

impl MultiRoundCounts {
    pub fn new(k_total: u32) -> Result<Self> {
        check_hamming_args(k_total, 0, 0)?;
        let side = (k_total / 2 + 1) as usize;
        Ok(Self {
            k_total,
            tallies: vec![0; side * side],
        })
    }

    pub fn k_total(&self) -> u32 {
        self.k_total
    }

    pub fn half(&self) -> u32 {
        self.k_total / 2
    }

    fn index(&self, hw0: u32, hw1: u32) -> usize {
        hw0 as usize * (self.half() as usize + 1) + hw1 as usize
    }

    pub fn add(&mut self, hw0: u32, hw1: u32, count: u64) -> Result<()> {
        check_hamming_args(self.k_total, hw0, hw1)?;
        let i = self.index(hw0, hw1);
        self.tallies[i] += count;
        Ok(())
    }

    pub fn get(&self, hw0: u32, hw1: u32) -> u64 {
        self.tallies[self.index(hw0, hw1)]
    }

    pub fn shots(&self) -> u64 {
        self.tallies.iter().sum()
    }

    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if other.k_total != self.k_total {
            return Err(QpeError::InvalidArgument(format!(
                "cannot merge K = {} into K = {}",
                other.k_total, self.k_total
            )));
        }
        for (a, b) in self.tallies.iter_mut().zip(&other.tallies) {
            *a += b;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AggregatedCounts {
    SingleRound(SingleRoundCounts),
    MultiRound(MultiRoundCounts),
}

impl AggregatedCounts {
    pub fn merge(&mut self, other: &AggregatedCounts) -> Result<()> {
        match (self, other) {
            (AggregatedCounts::SingleRound(a), AggregatedCounts::SingleRound(b)) => {
                a.merge(b);
                Ok(())
            }
            (AggregatedCounts::MultiRound(a), AggregatedCounts::MultiRound(b)) => a.merge(b),
            _ => Err(QpeError::InvalidArgument(
                "cannot merge single- and multi-round counts".into(),
            )),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        match self {
            AggregatedCounts::SingleRound(c) => {
                out.push_str("k,beta,m,count,shots\n");
                for (k, beta, counts) in c.iter() {
                    let shots = counts[0] + counts[1];
                    for (m, count) in counts.iter().enumerate() {
                        let _ = writeln!(out, "{k},{beta:.17e},{m},{count},{shots}");
                    }
                }
            }
            AggregatedCounts::MultiRound(c) => {
                out.push_str("K,hw0,hw1,count,shots\n");
                let shots = c.shots();
                for hw0 in 0..=c.half() {
                    for hw1 in 0..=c.half() {
                        let _ = writeln!(out, "{},{hw0},{hw1},{},{shots}", c.k_total, c.get(hw0, hw1));
                    }
                }
            }
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
        let (_, header) = lines.next().ok_or(QpeError::Empty("counts csv"))?;
        let parse_err = |line: usize, msg: String| QpeError::Parse { line: line + 1, msg };
        match header.trim() {
            "k,beta,m,count,shots" => {
                let mut counts = SingleRoundCounts::new();
                for (i, line) in lines {
                    let f: Vec<&str> = line.split(',').map(str::trim).collect();
                    if f.len() != 5 {
                        return Err(parse_err(i, format!("expected 5 fields, got {}", f.len())));
                    }
                    let k: u32 = f[0].parse().map_err(|e| parse_err(i, format!("k: {e}")))?;
                    let beta: f64 = f[1].parse().map_err(|e| parse_err(i, format!("beta: {e}")))?;
                    let m: u8 = f[2].parse().map_err(|e| parse_err(i, format!("m: {e}")))?;
                    let count: u64 = f[3].parse().map_err(|e| parse_err(i, format!("count: {e}")))?;
                    if m > 1 {
                        return Err(parse_err(i, format!("m must be 0 or 1, got {m}")));
                    }
                    counts.add(k, beta, m, count);
                }
                Ok(AggregatedCounts::SingleRound(counts))
            }
            "K,hw0,hw1,count,shots" => {
                let mut counts: Option<MultiRoundCounts> = None;
                for (i, line) in lines {
                    let f: Vec<&str> = line.split(',').map(str::trim).collect();
                    if f.len() != 5 {
                        return Err(parse_err(i, format!("expected 5 fields, got {}", f.len())));
                    }
                    let parse = |s: &str, name: &str| -> Result<u64> {
                        s.parse().map_err(|e| parse_err(i, format!("{name}: {e}")))
                    };
                    let k_total = parse(f[0], "K")? as u32;
                    let c = match &mut counts {
                        Some(c) => c,
                        None => counts.insert(MultiRoundCounts::new(k_total)?),
                    };
                    if c.k_total != k_total {
                        return Err(parse_err(i, "mixed K values".into()));
                    }
                    c.add(
                        parse(f[1], "hw0")? as u32,
                        parse(f[2], "hw1")? as u32,
                        parse(f[3], "count")?,
                    )?;
                }
                counts
                    .map(AggregatedCounts::MultiRound)
                    .ok_or(QpeError::Empty("multi-round counts"))
            }
            other => Err(parse_err(0, format!("unknown header {other:?}"))),
        }
    }
}

/// Result of executing a schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleRun {
    pub counts: AggregatedCounts,
    /// Total controlled-U applications over all experiments.
    pub k_tot: u64,
    pub seed: u64,
}

/// Executes every `(spec, repetitions)` pair and tallies the outcomes.
///
/// Single-round specs tally by `(k, beta, m)`; the `K`-round `k = 1` design
/// tallies by Hamming pair. A schedule mixing the two is rejected.
pub fn run_schedule(
    spectrum: &Spectrum,
    schedule: &[(ExperimentSpec, u64)],
    noise: NoiseModel,
    seed: u64,
) -> Result<ScheduleRun> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    run_schedule_with(spectrum, schedule, noise, &mut rng).map(|(counts, k_tot)| ScheduleRun { counts, k_tot, seed })
}

/// As [`run_schedule`], drawing from a caller-supplied generator.
pub fn run_schedule_with<R: Rng + ?Sized>(
    spectrum: &Spectrum,
    schedule: &[(ExperimentSpec, u64)],
    noise: NoiseModel,
    rng: &mut R,
) -> Result<(AggregatedCounts, u64)> {
    let (first, _) = schedule.first().ok_or(QpeError::Empty("schedule"))?;
    let mut counts = match first.design() {
        Design::SingleRound { .. } => AggregatedCounts::SingleRound(SingleRoundCounts::new()),
        Design::Hamming { k_total } => AggregatedCounts::MultiRound(MultiRoundCounts::new(k_total)?),
        Design::Other => {
            return Err(QpeError::InvalidArgument(
                "only single-round and K-round k=1 half/half designs can be aggregated".into(),
            ))
        }
    };
    let mut k_tot = 0u64;
    for (spec, reps) in schedule {
        match (spec.design(), &mut counts) {
            (Design::SingleRound { k, beta }, AggregatedCounts::SingleRound(c)) => {
                let p1 = round_outcome_prob_noisy(spectrum, k, beta, 1, noise);
                let ones = sample_binomial(*reps, p1, rng);
                c.add(k, beta, 0, reps - ones);
                c.add(k, beta, 1, ones);
            }
            (Design::Hamming { k_total }, AggregatedCounts::MultiRound(c)) if k_total == c.k_total => {
                sample_hamming(spectrum, c, *reps, noise, rng);
            }
            _ => {
                return Err(QpeError::InvalidArgument(
                    "schedule mixes single-round and multi-round designs".into(),
                ))
            }
        }
        k_tot += reps * spec.total_k();
    }
    Ok((counts, k_tot))
}

pub fn round_outcome_prob_noisy(spectrum: &Spectrum, k: u32, beta: f64, m: u8, noise: NoiseModel) -> f64 {
    noise.apply(round_outcome_prob(spectrum, k, beta, m), k)
}

fn sample_binomial<R: Rng + ?Sized>(n: u64, p: f64, rng: &mut R) -> u64 {
    if n == 0 {
        return 0;
    }
    let p = p.clamp(0.0, 1.0);
    Binomial::new(n, p).expect("probability clamped to [0, 1]").sample(rng)
}

fn sample_hamming<R: Rng + ?Sized>(
    spectrum: &Spectrum,
    counts: &mut MultiRoundCounts,
    reps: u64,
    noise: NoiseModel,
    rng: &mut R,
) {
    let half = counts.half() as u64;
    // split the experiments over eigenstates, then draw both weights per experiment
    let mut remaining = reps;
    let mut mass_left = 1.0;
    let entries = spectrum.entries();
    for (idx, (phase, weight)) in entries.iter().enumerate() {
        let n_j = if idx + 1 == entries.len() {
            remaining
        } else {
            let p = if mass_left > 0.0 { weight / mass_left } else { 0.0 };
            sample_binomial(remaining, p, rng)
        };
        remaining -= n_j;
        mass_left -= weight;
        let (q0, q1) = hamming_one_probs(phase.value(), noise);
        for _ in 0..n_j {
            let hw0 = sample_binomial(half, q0, rng) as u32;
            let hw1 = sample_binomial(half, q1, rng) as u32;
            let i = counts.index(hw0, hw1);
            counts.tallies[i] += 1;
        }
    }
}
