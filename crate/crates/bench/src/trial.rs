//! One seeded QPE simulation, estimated at a list of experiment counts.

use std::f64::consts::FRAC_PI_2;

use qpe_core::bayes::{default_n_freq, rejection_check, MultiEigPosterior};
use qpe_core::design::{ts_multi_round_schedule, AdaptiveDesign, DepthChoice};
use qpe_core::prony::{estimate, select_target, HankelMode, PronyConfig, TargetPolicy};
use qpe_core::signal::signal_from_counts;
use qpe_core::simulator::{
    run_schedule_with, sample_experiment, stream_rng, AggregatedCounts, ExperimentSpec, NoiseModel, RoundSpec,
};
use qpe_core::{wrap_phase, Phase, Spectrum};

use crate::error::{BenchError, Result};
use crate::recipe::{Instance, SpectrumRecipe};

/// Recovered phases closer than `MERGE_SCALE / K` are merged before the
/// target is selected.
pub const MERGE_SCALE: f64 = 0.5;

/// How a time-series estimate picks the target among the recovered phases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TargetRule {
    MaxAmplitude,
    /// Nearest to the true target among components whose amplitude is at
    /// least `min_amplitude` (all components if none qualifies).
    NearestTrue {
        min_amplitude: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BayesSettings {
    pub n_track: usize,
    pub prior_sigma: f64,
    /// Use the noise model in the likelihood.
    pub compensate: bool,
    /// `None` sizes the representation from the expected total depth.
    pub n_freq: Option<usize>,
    /// Flag runs whose tracked phases come closer than this.
    pub reject_threshold: Option<f64>,
}

impl Default for BayesSettings {
    fn default() -> Self {
        Self {
            n_track: 1,
            prior_sigma: 0.1,
            compensate: true,
            n_freq: None,
            reject_threshold: None,
        }
    }
}

/// Number of frequencies `l` in the time-series fit, given the largest `k`
/// of the signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Order {
    /// The mode's default.
    #[default]
    Default,
    Fixed(usize),
    /// `max(1, K / 2)`.
    Half,
}

impl Order {
    pub fn resolve(self, k_max: usize) -> Option<usize> {
        match self {
            Order::Default => None,
            Order::Fixed(l) => Some(l),
            Order::Half => Some((k_max / 2).max(1)),
        }
    }
}

impl std::str::FromStr for Order {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "default" | "K" | "k" => Ok(Order::Default),
            "half" | "K/2" | "k/2" => Ok(Order::Half),
            _ => s
                .parse::<usize>()
                .ok()
                .filter(|&l| l >= 1)
                .map(Order::Fixed)
                .ok_or_else(|| {
                    BenchError::Config(format!("l must be a positive integer, 'half' or 'default', got {s:?}"))
                }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Estimator {
    TimeSeries {
        mode: HankelMode,
        order: Order,
        weighted: bool,
        target: TargetRule,
    },
    Bayes(BayesSettings),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DesignSpec {
    /// Cycle `(k, beta)` over `k = 1..=k`, `beta in {0, pi/2}`.
    SingleRound { k: u32 },
    /// `k` rounds at depth one, half at each `beta`.
    MultiRound { k: u32 },
    /// Posterior-driven depth capped at `cap`, uniform `beta`.
    Adaptive { cap: u32, choice: DepthChoice },
}

impl DesignSpec {
    /// Largest depth a single experiment can reach.
    pub fn max_depth(&self) -> u32 {
        match *self {
            DesignSpec::SingleRound { k } | DesignSpec::MultiRound { k } => k,
            DesignSpec::Adaptive { cap, .. } => cap,
        }
    }

    /// Upper bound on the total depth of `n` experiments.
    pub fn k_tot_bound(&self, n: u64) -> u64 {
        match *self {
            DesignSpec::SingleRound { k } | DesignSpec::Adaptive { cap: k, .. } => n * (k as u64 + 1) / 2 + 1,
            DesignSpec::MultiRound { k } => n * k as u64,
        }
    }
}

/// Fully specified campaign cell.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSetup {
    pub recipe: SpectrumRecipe,
    pub design: DesignSpec,
    pub estimator: Estimator,
    pub noise: NoiseModel,
    /// Strictly increasing experiment counts at which to estimate.
    pub checkpoints: Vec<u64>,
}

impl TrialSetup {
    pub fn validate(&self) -> Result<()> {
        self.recipe.validate()?;
        if self.design.max_depth() < 1 {
            return Err(BenchError::Config("K must be at least 1".into()));
        }
        match (&self.estimator, &self.design) {
            (Estimator::TimeSeries { .. }, DesignSpec::Adaptive { .. }) => {
                return Err(BenchError::Config(
                    "the time-series estimator needs a fixed schedule, not the adaptive design".into(),
                ))
            }
            (Estimator::Bayes(_), DesignSpec::MultiRound { .. }) => {
                return Err(BenchError::Config(
                    "the Bayesian estimator is not combined with the multi-round schedule".into(),
                ))
            }
            (Estimator::Bayes(b), _) if b.n_track < 1 || !(b.prior_sigma > 0.0) => {
                return Err(BenchError::Config(
                    "bayes needs n_track >= 1 and prior_sigma > 0".into(),
                ))
            }
            _ => {}
        }
        if let DesignSpec::MultiRound { k } = self.design {
            if k % 2 != 0 {
                return Err(BenchError::Config(format!("multi-round K must be even, got {k}")));
            }
        }
        if self.checkpoints.is_empty() || self.checkpoints[0] == 0 {
            return Err(BenchError::Config("need at least one positive N".into()));
        }
        if self.checkpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(BenchError::Config("N checkpoints must be strictly increasing".into()));
        }
        Ok(())
    }
}

/// Estimate after the first `n` experiments of a trial.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub n: u64,
    pub k_tot: u64,
    pub estimate: Option<Phase>,
    /// Signed error `estimate - target`, wrapped.
    pub error: Option<Phase>,
    pub rejected: bool,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub trial: u64,
    pub target: Phase,
    pub gap: Option<f64>,
    pub checkpoints: Vec<Checkpoint>,
}

impl Checkpoint {
    fn ok(n: u64, k_tot: u64, estimate: Phase, target: Phase, rejected: bool) -> Self {
        Self {
            n,
            k_tot,
            estimate: Some(estimate),
            error: wrap_phase(estimate.value() - target.value()).ok(),
            rejected,
            failure: None,
        }
    }

    fn failed(n: u64, k_tot: u64, why: String) -> Self {
        Self {
            n,
            k_tot,
            estimate: None,
            error: None,
            rejected: false,
            failure: Some(why),
        }
    }

    pub fn abs_error(&self) -> Option<f64> {
        self.error.map(|e| e.value().abs())
    }
}

/// Runs trial `trial` of a campaign seeded with `seed`.
pub fn run_trial(setup: &TrialSetup, seed: u64, trial: u64) -> Result<TrialRecord> {
    let mut rng = stream_rng(seed, trial);
    let inst = setup.recipe.draw(&mut rng)?;
    let checkpoints = match setup.estimator {
        Estimator::TimeSeries {
            mode,
            order,
            weighted,
            target,
        } => run_time_series(setup, &inst, (mode, order, weighted), target, &mut rng)?,
        Estimator::Bayes(b) => run_bayes(setup, &inst, b, &mut rng)?,
    };
    Ok(TrialRecord {
        trial,
        target: inst.target,
        gap: inst.gap,
        checkpoints,
    })
}

/// Experiments in cell `idx` of the `2K`-cell cycle after `n` experiments.
fn cell_count(idx: u64, k: u32, n: u64) -> u64 {
    let cells = 2 * k as u64;
    n / cells + u64::from(idx < n % cells)
}

fn cycle_round(i: u64, k: u32) -> RoundSpec {
    let cell = i % (2 * k as u64);
    let beta = if cell % 2 == 0 { 0.0 } else { FRAC_PI_2 };
    RoundSpec::new((cell / 2) as u32 + 1, beta).expect("k >= 1")
}

fn run_time_series<R: rand::Rng>(
    setup: &TrialSetup,
    inst: &Instance,
    (mode, order, weighted): (HankelMode, Order, bool),
    rule: TargetRule,
    rng: &mut R,
) -> Result<Vec<Checkpoint>> {
    let mut counts: Option<AggregatedCounts> = None;
    let mut k_tot = 0u64;
    let mut prev = 0u64;
    let mut out = Vec::with_capacity(setup.checkpoints.len());
    for &n in &setup.checkpoints {
        let increments = match setup.design {
            DesignSpec::SingleRound { k } => {
                let mut v = Vec::new();
                for idx in 0..2 * k as u64 {
                    let reps = cell_count(idx, k, n) - cell_count(idx, k, prev);
                    if reps > 0 {
                        let r = cycle_round(idx, k);
                        v.push((ExperimentSpec::single(r.k(), r.beta())?, reps));
                    }
                }
                v
            }
            DesignSpec::MultiRound { k } => vec![(ts_multi_round_schedule(k)?, n - prev)],
            DesignSpec::Adaptive { .. } => unreachable!("rejected by validate"),
        };
        let (batch, dk) = run_schedule_with(&inst.spectrum, &increments, setup.noise, rng)?;
        k_tot += dk;
        match counts.as_mut() {
            Some(c) => c.merge(&batch)?,
            None => counts = Some(batch),
        }
        prev = n;
        let result = signal_from_counts(counts.as_ref().expect("set above"))
            .and_then(|g| {
                let prony = PronyConfig {
                    order: order.resolve(g.k_max()),
                    mode,
                    weighted,
                };
                estimate(&g, &prony).map(|e| e.clustered(MERGE_SCALE / g.k_max() as f64))
            })
            .and_then(|est| {
                let policy = match rule {
                    TargetRule::MaxAmplitude => TargetPolicy::MaxAmplitude,
                    TargetRule::NearestTrue { min_amplitude } => {
                        let mut strong = est.clone();
                        strong.components.retain(|c| c.amplitude >= min_amplitude);
                        if !strong.components.is_empty() {
                            return select_target(&strong, TargetPolicy::Nearest(inst.target));
                        }
                        TargetPolicy::Nearest(inst.target)
                    }
                };
                select_target(&est, policy)
            });
        out.push(match result {
            Ok(phase) => Checkpoint::ok(n, k_tot, phase, inst.target, false),
            Err(e) => Checkpoint::failed(n, k_tot, e.to_string()),
        });
    }
    Ok(out)
}

fn run_bayes<R: rand::Rng>(
    setup: &TrialSetup,
    inst: &Instance,
    cfg: BayesSettings,
    rng: &mut R,
) -> Result<Vec<Checkpoint>> {
    let n_max = *setup.checkpoints.last().expect("validated");
    let n_freq = cfg
        .n_freq
        .unwrap_or_else(|| default_n_freq(setup.design.k_tot_bound(n_max)));
    let mut post = MultiEigPosterior::new(cfg.n_track, n_freq, cfg.prior_sigma)?;
    let likelihood = if cfg.compensate { setup.noise } else { NoiseModel::None };
    let mut adaptive = match setup.design {
        DesignSpec::Adaptive { cap, choice } => Some(AdaptiveDesign::new(cap, choice)?),
        _ => None,
    };
    let mut out = Vec::with_capacity(setup.checkpoints.len());
    let mut k_tot = 0u64;
    let mut next_cp = 0usize;
    let mut failure: Option<String> = None;
    for i in 0..n_max {
        let round = match (&mut adaptive, setup.design) {
            (Some(a), _) => a.next(post.holevo_var().sqrt(), rng),
            (None, DesignSpec::SingleRound { k }) => cycle_round(i, k),
            _ => unreachable!("rejected by validate"),
        };
        let spec = ExperimentSpec::new(vec![round])?;
        let m = sample_experiment(&inst.spectrum, &spec, setup.noise, rng);
        k_tot += round.k() as u64;
        if let Err(e) = post.update_multi(spec.rounds(), &m, likelihood) {
            failure = Some(e.to_string());
            break;
        }
        if i + 1 == setup.checkpoints[next_cp] {
            out.push(bayes_checkpoint(&post, &cfg, i + 1, k_tot, inst.target));
            next_cp += 1;
        }
    }
    if let Some(why) = failure {
        for &n in &setup.checkpoints[next_cp..] {
            out.push(Checkpoint::failed(n, k_tot, why.clone()));
        }
    }
    Ok(out)
}

fn bayes_checkpoint(post: &MultiEigPosterior, cfg: &BayesSettings, n: u64, k_tot: u64, target: Phase) -> Checkpoint {
    match post.estimate_phase() {
        Ok(phase) => {
            let rejected = cfg.reject_threshold.is_some_and(|t| {
                let est: Vec<Phase> = post.estimates().into_iter().flatten().collect();
                est.len() > 1 && est[1..].iter().any(|&p| rejection_check(&[phase, p], t))
            });
            Checkpoint::ok(n, k_tot, phase, target, rejected)
        }
        Err(e) => Checkpoint::failed(n, k_tot, e.to_string()),
    }
}

/// Exact spectrum draw for trial `trial`, as used by [`run_trial`].
pub fn trial_spectrum(recipe: &SpectrumRecipe, seed: u64, trial: u64) -> Result<Spectrum> {
    Ok(recipe.draw(&mut stream_rng(seed, trial))?.spectrum)
}
