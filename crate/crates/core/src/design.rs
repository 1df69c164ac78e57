//! Measurement schedules: fixed cycling designs for the time-series
//! estimator and the adaptive depth rule for the Bayesian estimator.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt::Write as _;

use rand::Rng;

use crate::error::{QpeError, Result};
use crate::simulator::{ExperimentSpec, RoundSpec};

/// Experiments paired with repetition counts, in execution order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Schedule {
    entries: Vec<(ExperimentSpec, u64)>,
}

impl Schedule {
    pub fn new(entries: Vec<(ExperimentSpec, u64)>) -> Self {
        Self { entries }
    }

    pub fn entries(&self) -> &[(ExperimentSpec, u64)] {
        &self.entries
    }

    pub fn into_entries(self) -> Vec<(ExperimentSpec, u64)> {
        self.entries
    }

    pub fn n_experiments(&self) -> u64 {
        self.entries.iter().map(|(_, n)| n).sum()
    }

    /// `K_tot = sum over experiments of sum_r k_r`.
    pub fn k_tot(&self) -> u64 {
        self.entries.iter().map(|(s, n)| s.total_k() * n).sum()
    }

    pub fn max_k(&self) -> u32 {
        self.entries
            .iter()
            .flat_map(|(s, _)| s.rounds().iter().map(|r| r.k()))
            .max()
            .unwrap_or(0)
    }

    /// One line per round of every experiment: `experiment_id,round_id,k,beta`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("experiment_id,round_id,k,beta\n");
        let mut id = 0u64;
        for (spec, reps) in &self.entries {
            for _ in 0..*reps {
                for (r, round) in spec.rounds().iter().enumerate() {
                    let _ = writeln!(out, "{id},{r},{},{:.17e}", round.k(), round.beta());
                }
                id += 1;
            }
        }
        out
    }
}

/// Cycles over `k = 1..=K` with equal numbers of experiments at `beta = 0`
/// and `beta = pi/2`.
///
/// Cells are ordered `(1, 0), (1, pi/2), (2, 0), ...`; when `N` is not a
/// multiple of `2K` the first `N mod 2K` cells get one extra experiment.
pub fn ts_single_round_schedule(k_max: u32, n: u64) -> Result<Schedule> {
    if k_max < 1 {
        return Err(QpeError::InvalidArgument("K must be at least 1".into()));
    }
    let cells = 2 * k_max as u64;
    let (base, extra) = (n / cells, n % cells);
    let mut entries = Vec::with_capacity(cells as usize);
    for k in 1..=k_max {
        for (b, beta) in [0.0, FRAC_PI_2].into_iter().enumerate() {
            let idx = 2 * (k as u64 - 1) + b as u64;
            let reps = base + u64::from(idx < extra);
            if reps > 0 {
                entries.push((ExperimentSpec::single(k, beta)?, reps));
            }
        }
    }
    Ok(Schedule::new(entries))
}

/// `K` rounds with `k = 1`: the `beta = 0` block then the `beta = pi/2` block.
pub fn ts_multi_round_schedule(k_total: u32) -> Result<ExperimentSpec> {
    if k_total == 0 || k_total % 2 != 0 {
        return Err(QpeError::InvalidArgument(format!(
            "multi-round design needs an even K >= 2, got {k_total}"
        )));
    }
    let half = k_total / 2;
    let rounds = (0..k_total)
        .map(|i| RoundSpec::new(1, if i < half { 0.0 } else { FRAC_PI_2 }))
        .collect::<Result<Vec<_>>>()?;
    ExperimentSpec::new(rounds)
}

/// `N` repetitions of [`ts_multi_round_schedule`].
pub fn ts_multi_round_repeated(k_total: u32, n: u64) -> Result<Schedule> {
    Ok(Schedule::new(vec![(ts_multi_round_schedule(k_total)?, n)]))
}

/// `K = min(ceil(1.25 / sigma), cap)`; `K = 1` when `sigma` is not a positive
/// finite number (no estimate yet).
pub fn adaptive_depth(sigma: f64, cap: u32) -> u32 {
    let cap = cap.max(1);
    if !(sigma > 0.0) || !sigma.is_finite() {
        return 1;
    }
    let k = (1.25 / sigma).ceil();
    if k >= cap as f64 {
        cap
    } else {
        (k as u32).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DepthChoice {
    /// `k` cycles through `1..=K`.
    #[default]
    Cycle,
    /// `k` uniform on `1..=K`.
    Random,
}

/// Which schedule family a run uses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DesignPolicy {
    TsSingleRoundCycle { k_max: u32, n: u64 },
    TsMultiRound { k_total: u32, n: u64 },
    BayesAdaptive { cap: u32, n: u64, choice: DepthChoice },
}

impl DesignPolicy {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            DesignPolicy::TsSingleRoundCycle { k_max, .. } => k_max >= 1,
            DesignPolicy::TsMultiRound { k_total, .. } => k_total >= 2 && k_total % 2 == 0,
            DesignPolicy::BayesAdaptive { cap, .. } => cap >= 1,
        };
        if ok {
            Ok(())
        } else {
            Err(QpeError::InvalidArgument(format!("invalid design {self:?}")))
        }
    }

    /// The fixed schedule; `None` for the adaptive policy.
    pub fn fixed_schedule(&self) -> Result<Option<Schedule>> {
        self.validate()?;
        match *self {
            DesignPolicy::TsSingleRoundCycle { k_max, n } => ts_single_round_schedule(k_max, n).map(Some),
            DesignPolicy::TsMultiRound { k_total, n } => ts_multi_round_repeated(k_total, n).map(Some),
            DesignPolicy::BayesAdaptive { .. } => Ok(None),
        }
    }
}

/// Sequential state of the adaptive policy.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveDesign {
    cap: u32,
    choice: DepthChoice,
    counter: u64,
}

impl AdaptiveDesign {
    pub fn new(cap: u32, choice: DepthChoice) -> Result<Self> {
        if cap < 1 {
            return Err(QpeError::InvalidArgument("depth cap must be at least 1".into()));
        }
        Ok(Self {
            cap,
            choice,
            counter: 0,
        })
    }

    pub fn cap(&self) -> u32 {
        self.cap
    }

    /// Next `(k, beta)` given the current posterior spread `sigma`.
    pub fn next<R: Rng + ?Sized>(&mut self, sigma: f64, rng: &mut R) -> RoundSpec {
        let depth = adaptive_depth(sigma, self.cap);
        let k = match self.choice {
            DepthChoice::Cycle => (self.counter % depth as u64) as u32 + 1,
            DepthChoice::Random => rng.random_range(1..=depth),
        };
        self.counter += 1;
        let beta = rng.random_range(0.0..2.0 * PI);
        RoundSpec::new(k, beta).expect("k >= 1 and finite beta")
    }
}

/// One-shot form of [`AdaptiveDesign::next`] with a random depth.
pub fn bayes_adaptive_next<R: Rng + ?Sized>(sigma: f64, cap: u32, rng: &mut R) -> RoundSpec {
    let depth = adaptive_depth(sigma, cap);
    let k = rng.random_range(1..=depth);
    RoundSpec::new(k, rng.random_range(0.0..2.0 * PI)).expect("k >= 1 and finite beta")
}
