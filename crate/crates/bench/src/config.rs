//! Scenario configuration: TOML file, command-line overrides and defaults.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use qpe_core::design::DepthChoice;
use qpe_core::prony::HankelMode;
use qpe_core::simulator::NoiseModel;
use serde::Deserialize;

use crate::error::{BenchError, Result};
use crate::recipe::SpectrumRecipe;
use crate::trial::{BayesSettings, DesignSpec, Estimator, Order, TargetRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Scenario {
    SingleEvScaling,
    TwoEvSurface,
    ManyEv,
    DepolarizingStudy,
    ChiSelftest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum EstimatorKind {
    TimeSeries,
    Bayes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum DesignKind {
    SingleRound,
    MultiRound,
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    MaxAmplitude,
    Nearest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumKind {
    Fixed,
    UniformSingle,
    TwoEigen,
    EqualWeights,
    ManyEigen,
    Gapped,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub scenario: Option<Scenario>,
    pub seed: Option<u64>,
    pub trials: Option<u64>,
    pub out: Option<PathBuf>,
    pub per_trial: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumSection {
    pub kind: Option<SpectrumKind>,
    pub phases: Option<Vec<f64>>,
    pub amplitudes: Option<Vec<f64>>,
    pub a0: Option<Vec<f64>>,
    pub delta: Option<Vec<f64>>,
    pub n_eig: Option<usize>,
    pub phi_max: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSection {
    pub kind: Option<EstimatorKind>,
    pub l: Option<String>,
    pub mode: Option<String>,
    pub weighted: Option<bool>,
    pub target: Option<TargetKind>,
    pub min_amplitude: Option<f64>,
    pub n_track: Option<usize>,
    pub prior_sigma: Option<f64>,
    pub compensate: Option<bool>,
    pub n_freq: Option<usize>,
    pub reject_threshold: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSection {
    pub kind: Option<DesignKind>,
    pub k: Option<Vec<u32>>,
    pub n: Option<Vec<u64>>,
    pub k_err: Option<f64>,
    pub random_depth: Option<bool>,
}

/// On-disk layout; every field is optional and falls back to the scenario
/// defaults.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub spectrum: SpectrumSection,
    #[serde(default)]
    pub estimator: EstimatorSection,
    #[serde(default)]
    pub design: DesignSection,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// Master seed; trial `i` uses stream `i` of this seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub trials: Option<u64>,
    /// Experiment counts, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub n: Option<Vec<u64>>,
    /// Maximal depths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub k: Option<Vec<u32>>,
    /// Depolarizing decay depth; omit for noiseless runs.
    #[arg(long = "k-err")]
    pub k_err: Option<f64>,
    #[arg(long, value_enum)]
    pub estimator: Option<EstimatorKind>,
    #[arg(long, value_enum)]
    pub design: Option<DesignKind>,
    /// Number of frequencies in the time-series fit: an integer, `half`
    /// (K/2) or `default`.
    #[arg(long)]
    pub l: Option<String>,
    /// Hankel mode: symmetric or positive_only.
    #[arg(long)]
    pub mode: Option<String>,
    /// Summary CSV path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Optional per-trial CSV path.
    #[arg(long = "per-trial")]
    pub per_trial: Option<PathBuf>,
}

/// Fully resolved scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub seed: u64,
    pub trials: u64,
    pub n: Vec<u64>,
    pub k: Vec<u32>,
    pub noise: NoiseModel,
    pub design: DesignKind,
    pub depth_choice: DepthChoice,
    pub estimator: Estimator,
    /// Explicit spectrum recipe; `None` uses the scenario's own.
    pub recipe: Option<SpectrumRecipe>,
    pub a0: Vec<f64>,
    pub delta: Vec<f64>,
    pub n_eig: usize,
    pub phi_max: f64,
    pub out: Option<PathBuf>,
    pub per_trial: Option<PathBuf>,
}

struct Defaults {
    trials: u64,
    n: Vec<u64>,
    k: Vec<u32>,
    k_err: Option<f64>,
    estimator: EstimatorKind,
    design: DesignKind,
    mode: HankelMode,
    a0: Vec<f64>,
    delta: Vec<f64>,
    n_eig: usize,
}

fn defaults(s: Scenario) -> Defaults {
    let base = Defaults {
        trials: 200,
        n: vec![1_000, 10_000, 100_000],
        k: vec![50],
        k_err: None,
        estimator: EstimatorKind::TimeSeries,
        design: DesignKind::SingleRound,
        mode: HankelMode::Symmetric,
        a0: vec![0.5],
        delta: vec![0.5],
        n_eig: 2,
    };
    match s {
        Scenario::SingleEvScaling | Scenario::ChiSelftest => Defaults { n_eig: 1, ..base },
        Scenario::TwoEvSurface => Defaults {
            n: vec![100_000],
            a0: vec![0.1, 0.2, 0.3, 0.5, 0.7, 0.9],
            delta: vec![0.003, 0.01, 0.03, 0.1, 0.3, 1.0],
            ..base
        },
        Scenario::ManyEv => Defaults {
            n: vec![10_000],
            delta: vec![0.003, 0.01, 0.03, 0.1, 0.3, 1.0],
            n_eig: 10,
            ..base
        },
        Scenario::DepolarizingStudy => Defaults {
            n: vec![1_000, 3_000, 10_000, 30_000, 100_000],
            k_err: Some(100.0),
            n_eig: 10,
            ..base
        },
    }
}

fn need<T>(v: Option<T>, what: &str) -> Result<T> {
    v.ok_or_else(|| BenchError::Config(format!("{what} is required")))
}

impl ScenarioConfig {
    /// Merges file values, overrides and scenario defaults, then validates.
    pub fn resolve(scenario: Option<Scenario>, file: &ConfigFile, cli: &Overrides) -> Result<Self> {
        let scenario = scenario.or(file.run.scenario).unwrap_or(Scenario::SingleEvScaling);
        let d = defaults(scenario);
        let est = &file.estimator;
        let des = &file.design;
        let sp = &file.spectrum;

        let mode = match cli.mode.as_deref().or(est.mode.as_deref()) {
            Some(m) => HankelMode::from_str(m).map_err(|e| BenchError::Config(e.to_string()))?,
            None => d.mode,
        };
        let estimator_kind = cli.estimator.or(est.kind).unwrap_or(d.estimator);
        let design = cli.design.or(des.kind).unwrap_or(match estimator_kind {
            EstimatorKind::Bayes => DesignKind::Adaptive,
            EstimatorKind::TimeSeries => d.design,
        });
        let weighted = est.weighted.unwrap_or(design == DesignKind::MultiRound);
        let target = match est.target.unwrap_or(TargetKind::MaxAmplitude) {
            TargetKind::MaxAmplitude => TargetRule::MaxAmplitude,
            TargetKind::Nearest => TargetRule::NearestTrue {
                min_amplitude: est.min_amplitude.unwrap_or(0.0),
            },
        };
        let estimator = match estimator_kind {
            EstimatorKind::TimeSeries => Estimator::TimeSeries {
                mode,
                order: match cli.l.as_deref().or(est.l.as_deref()) {
                    Some(l) => l.parse()?,
                    None => Order::Default,
                },
                weighted,
                target,
            },
            EstimatorKind::Bayes => Estimator::Bayes(BayesSettings {
                n_track: est.n_track.unwrap_or(1),
                prior_sigma: est.prior_sigma.unwrap_or(0.1),
                compensate: est.compensate.unwrap_or(true),
                n_freq: est.n_freq,
                reject_threshold: est.reject_threshold,
            }),
        };
        let noise = match cli.k_err.or(des.k_err).or(d.k_err) {
            Some(k_err) => NoiseModel::depolarizing(k_err)?,
            None => NoiseModel::None,
        };
        let recipe = match sp.kind {
            None => None,
            Some(SpectrumKind::Fixed) => {
                let phases = need(sp.phases.clone(), "spectrum.phases")?;
                let amps = need(sp.amplitudes.clone(), "spectrum.amplitudes")?;
                if phases.len() != amps.len() {
                    return Err(BenchError::Config("phases and amplitudes differ in length".into()));
                }
                Some(SpectrumRecipe::Fixed(phases.into_iter().zip(amps).collect()))
            }
            Some(SpectrumKind::UniformSingle) => Some(SpectrumRecipe::UniformSingle),
            Some(SpectrumKind::EqualWeights) => Some(SpectrumRecipe::EqualWeights {
                n_eig: sp.n_eig.unwrap_or(d.n_eig),
            }),
            Some(kind) => {
                let a0 = first(&sp.a0, &d.a0);
                let delta = first(&sp.delta, &d.delta);
                let n_eig = sp.n_eig.unwrap_or(d.n_eig);
                Some(match kind {
                    SpectrumKind::TwoEigen => SpectrumRecipe::TwoEigen { a0, delta },
                    SpectrumKind::ManyEigen => SpectrumRecipe::ManyEigen {
                        n_eig,
                        a0,
                        delta,
                        phi_max: sp.phi_max.unwrap_or(PI),
                    },
                    _ => SpectrumRecipe::Gapped { n_eig, a0, delta },
                })
            }
        };
        let cfg = Self {
            scenario,
            seed: cli.seed.or(file.run.seed).unwrap_or(1),
            trials: cli.trials.or(file.run.trials).unwrap_or(d.trials),
            n: cli.n.clone().or_else(|| des.n.clone()).unwrap_or(d.n),
            k: cli.k.clone().or_else(|| des.k.clone()).unwrap_or(d.k),
            noise,
            design,
            depth_choice: if des.random_depth.unwrap_or(false) {
                DepthChoice::Random
            } else {
                DepthChoice::Cycle
            },
            estimator,
            recipe,
            a0: sp.a0.clone().unwrap_or(d.a0),
            delta: sp.delta.clone().unwrap_or(d.delta),
            n_eig: sp.n_eig.unwrap_or(d.n_eig),
            phi_max: sp.phi_max.unwrap_or(PI),
            out: cli.out.clone().or_else(|| file.run.out.clone()),
            per_trial: cli.per_trial.clone().or_else(|| file.run.per_trial.clone()),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials < 1 {
            return Err(BenchError::Config("trials must be at least 1".into()));
        }
        if self.k.is_empty() || self.k.contains(&0) {
            return Err(BenchError::Config("K values must be at least 1".into()));
        }
        if self.a0.is_empty() || self.delta.is_empty() {
            return Err(BenchError::Config("a0 and delta lists must not be empty".into()));
        }
        match (&self.estimator, self.design) {
            (Estimator::Bayes(_), DesignKind::MultiRound) => Err(BenchError::Config(
                "the Bayesian estimator cannot be paired with the multi-round schedule".into(),
            )),
            (Estimator::TimeSeries { .. }, DesignKind::Adaptive) => Err(BenchError::Config(
                "the time-series estimator needs a fixed schedule, not the adaptive design".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn design_spec(&self, k: u32) -> DesignSpec {
        match self.design {
            DesignKind::SingleRound => DesignSpec::SingleRound { k },
            DesignKind::MultiRound => DesignSpec::MultiRound { k },
            DesignKind::Adaptive => DesignSpec::Adaptive {
                cap: k,
                choice: self.depth_choice,
            },
        }
    }

    /// `# key=value` lines describing the configuration.
    pub fn header(&self) -> String {
        let mut h = format!(
            "# scenario={:?}\n# seed={}\n# trials={}\n# n={:?}\n# k={:?}\n# noise={:?}\n# design={:?}\n# depth_choice={:?}\n# estimator={:?}\n",
            self.scenario,
            self.seed,
            self.trials,
            self.n,
            self.k,
            self.noise,
            self.design,
            self.depth_choice,
            self.estimator
        );
        if let Some(r) = &self.recipe {
            h.push_str(&format!("# recipe={r:?}\n"));
        }
        h.push_str(&format!(
            "# a0={:?}\n# delta={:?}\n# n_eig={}\n# phi_max={}\n",
            self.a0, self.delta, self.n_eig, self.phi_max
        ));
        h
    }
}

fn first(v: &Option<Vec<f64>>, d: &[f64]) -> f64 {
    v.as_ref().and_then(|v| v.first().copied()).unwrap_or(d[0])
}
