//! Summary statistics over trials.

use qpe_core::simulator::stream_rng;
use qpe_core::{error_stats, Phase};
use rand::Rng;

use crate::trial::Checkpoint;

pub const BOOTSTRAP_RESAMPLES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub n: u64,
    /// Mean total depth over the trials that produced an estimate.
    pub k_tot: f64,
    pub used: usize,
    pub failed: usize,
    pub rejected: usize,
    pub mean_abs: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub rms: f64,
    pub holevo_var: f64,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Percentile bootstrap 95% interval for the mean.
pub fn bootstrap_mean_ci(xs: &[f64], resamples: usize, seed: u64) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mut rng = stream_rng(seed, u64::MAX);
    let n = xs.len();
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| xs[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let at = |q: f64| means[((q * (resamples - 1) as f64).round() as usize).min(resamples - 1)];
    (at(0.025), at(0.975))
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let (mx, my) = (mean(&lx), mean(&ly));
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Summary of the checkpoints that share one `n`; rejected runs are counted
/// but excluded from the error statistics.
pub fn summarize(points: &[&Checkpoint], seed: u64) -> Summary {
    let n = points.first().map_or(0, |c| c.n);
    let failed = points.iter().filter(|c| c.error.is_none()).count();
    let rejected = points.iter().filter(|c| c.rejected).count();
    let good: Vec<&&Checkpoint> = points.iter().filter(|c| c.error.is_some() && !c.rejected).collect();
    let abs: Vec<f64> = good.iter().filter_map(|c| c.abs_error()).collect();
    let errs: Vec<Phase> = good.iter().filter_map(|c| c.error).collect();
    let (ci_low, ci_high) = bootstrap_mean_ci(&abs, BOOTSTRAP_RESAMPLES, seed ^ n);
    let (mean_abs, rms, holevo_var) = match error_stats(Phase::default(), &errs) {
        Ok(s) => (s.mean_abs, s.rms, s.holevo_var),
        Err(_) => (f64::NAN, f64::NAN, f64::NAN),
    };
    let k_tot = if good.is_empty() {
        f64::NAN
    } else {
        good.iter().map(|c| c.k_tot as f64).sum::<f64>() / good.len() as f64
    };
    Summary {
        n,
        k_tot,
        used: abs.len(),
        failed,
        rejected,
        mean_abs,
        ci_low,
        ci_high,
        rms,
        holevo_var,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn slope_of_power_law() {
        let xs = [1e3, 1e4, 1e5];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(-0.5)).collect();
        assert!((loglog_slope(&xs, &ys) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn bootstrap_brackets_mean() {
        let xs: Vec<f64> = (0..200).map(|i| (i % 17) as f64).collect();
        let (lo, hi) = bootstrap_mean_ci(&xs, BOOTSTRAP_RESAMPLES, 4);
        let m = mean(&xs);
        assert!(lo < m && m < hi);
        assert_eq!((lo, hi), bootstrap_mean_ci(&xs, BOOTSTRAP_RESAMPLES, 4));
    }

    proptest! {
        #[test]
        fn ci_within_range(xs in proptest::collection::vec(0.0f64..10.0, 1..50), seed in any::<u64>()) {
            let (lo, hi) = bootstrap_mean_ci(&xs, 200, seed);
            let min = xs.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(min - 1e-12 <= lo && lo <= hi && hi <= max + 1e-12);
        }
    }
}
