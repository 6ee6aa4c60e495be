//! Quantile-Gaussian randomization around the average expert curve, and
//! calibration of its noise level against the two-model framework.
//!
//! Each dimension `t` of a randomized curve is drawn from `N(mu_q, sigma^2)`
//! where `mu_q` is the mean of the average curve over the rank group that
//! contains `t`. Draws come from a ChaCha stream keyed by `(seed, index)`
//! with one stream per dimension, so a curve is a pure function of
//! `(seed, index, sigma)` and the underlying normal variates are shared
//! across noise levels.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{ExpressionCurve, FeatureKind};
use crate::metric::{mse_values, quantile_partition, standardize_values, QuantilePartition, QuantileScheme, StandardizationKind};
use crate::seed;

/// Redraws allowed per dimension before a tempo sample is abandoned.
pub const MAX_REJECTIONS: usize = 1000;

pub const DEFAULT_MC_SAMPLES: usize = 2000;
pub const DEFAULT_TOLERANCE: f64 = 0.01;
pub const MAX_BISECTION_STEPS: usize = 60;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomizationConfig {
    pub scheme: QuantileScheme,
    /// Standard deviation of every mixture component, in curve units.
    pub noise_level: f64,
    pub seed: u64,
    pub count: usize,
}

impl RandomizationConfig {
    pub fn new(scheme: QuantileScheme, noise_level: f64, seed: u64, count: usize) -> Result<Self> {
        if !(noise_level >= 0.0 && noise_level.is_finite()) {
            return Err(Error::Domain(format!("noise level must be >= 0, got {noise_level}")));
        }
        if count == 0 {
            return Err(Error::Domain("count must be at least 1".into()));
        }
        Ok(RandomizationConfig {
            scheme,
            noise_level,
            seed,
            count,
        })
    }
}

/// Provenance block attached to serialized randomized curves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomizationMeta {
    pub scheme: QuantileScheme,
    pub sigma: f64,
    pub seed: u64,
    pub index: usize,
}

fn check_stack(curves: &[ExpressionCurve]) -> Result<()> {
    if curves.len() < 2 {
        return Err(Error::TooFewPerformances {
            needed: 2,
            got: curves.len(),
        });
    }
    for c in &curves[1..] {
        curves[0].check_same_shape(c)?;
        if c.kind() != curves[0].kind() {
            return Err(Error::Shape(format!("mixed {} and {} curves", curves[0].kind(), c.kind())));
        }
    }
    Ok(())
}

/// Dimension-wise mean of the curves.
pub fn average_curve(curves: &[ExpressionCurve]) -> Result<ExpressionCurve> {
    check_stack(curves)?;
    let n = curves.len() as f64;
    let values = (0..curves[0].d())
        .map(|t| curves.iter().map(|c| c.values()[t]).sum::<f64>() / n)
        .collect();
    ExpressionCurve::new(curves[0].kind(), curves[0].onsets().to_vec(), values)
}

/// Mean over dimensions of the population standard deviation across curves.
pub fn average_std(curves: &[ExpressionCurve]) -> Result<f64> {
    check_stack(curves)?;
    let n = curves.len() as f64;
    let d = curves[0].d();
    let total: f64 = (0..d)
        .map(|t| {
            let m = curves.iter().map(|c| c.values()[t]).sum::<f64>() / n;
            let var = curves.iter().map(|c| (c.values()[t] - m).powi(2)).sum::<f64>() / n;
            var.sqrt()
        })
        .sum();
    Ok(total / d as f64)
}

fn accept(kind: FeatureKind, x: f64) -> Option<f64> {
    match kind {
        FeatureKind::Tempo => (x > 0.0).then_some(x),
        FeatureKind::Velocity => Some(x.clamp(1.0, 127.0)),
        FeatureKind::Timing | FeatureKind::Articulation => Some(x),
    }
}

/// Draws randomized curve number `index` of `config`.
pub fn sample_randomized_curve(
    avg: &ExpressionCurve,
    partition: &QuantilePartition,
    config: &RandomizationConfig,
    index: usize,
) -> Result<ExpressionCurve> {
    if partition.d() != avg.d() {
        return Err(Error::Shape(format!(
            "partition covers {} dimensions, curve has {}",
            partition.d(),
            avg.d()
        )));
    }
    if index >= config.count {
        return Err(Error::Domain(format!("index {index} >= count {}", config.count)));
    }
    let sigma = config.noise_level;
    let kind = avg.kind();
    let mut values = Vec::with_capacity(avg.d());
    if sigma == 0.0 {
        for &g in &partition.group_of {
            let mu = partition.means[g];
            values.push(accept(kind, mu).ok_or(Error::Sampling { dimension: values.len(), retries: 0 })?);
        }
    } else {
        let key = seed::derive_key(config.seed, "randomized-curve", &[index as u64]);
        for (t, &g) in partition.group_of.iter().enumerate() {
            let mu = partition.means[g];
            let mut rng = ChaCha8Rng::from_seed(key);
            rng.set_stream(t as u64);
            let mut drawn = None;
            for _ in 0..MAX_REJECTIONS {
                let z: f64 = StandardNormal.sample(&mut rng);
                if let Some(x) = accept(kind, mu + sigma * z) {
                    drawn = Some(x);
                    break;
                }
            }
            values.push(drawn.ok_or(Error::Sampling {
                dimension: t,
                retries: MAX_REJECTIONS,
            })?);
        }
    }
    ExpressionCurve::new(kind, avg.onsets().to_vec(), values)
}

/// Ordered (reference, test) pair number `j`, cycling through all n(n-1).
fn pair(j: usize, n: usize) -> (usize, usize) {
    let p = j % (n * (n - 1));
    let r = p / (n - 1);
    let e = p % (n - 1);
    (r, e + usize::from(e >= r))
}

struct StandardizedExperts {
    values: Vec<Vec<f64>>,
    /// `mse[e * n + r]`
    mse: Vec<f64>,
}

impl StandardizedExperts {
    fn new(experts: &[ExpressionCurve], standardization: StandardizationKind) -> Result<Self> {
        check_stack(experts)?;
        let values = experts
            .iter()
            .map(|c| standardize_values(c.values(), standardization))
            .collect::<Result<Vec<_>>>()?;
        let n = values.len();
        let mut mse = vec![0.0; n * n];
        for e in 0..n {
            for r in 0..n {
                mse[e * n + r] = mse_values(&values[e], &values[r])?;
            }
        }
        Ok(StandardizedExperts { values, mse })
    }

    fn rate<F>(&self, standardization: StandardizationKind, mc_samples: usize, random_for: F) -> Result<f64>
    where
        F: Fn(usize, usize, usize) -> Result<ExpressionCurve> + Sync,
    {
        if mc_samples == 0 {
            return Err(Error::Domain("mc_samples must be positive".into()));
        }
        let n = self.values.len();
        let wins = (0..mc_samples)
            .into_par_iter()
            .map(|j| -> Result<usize> {
                let (r, e) = pair(j, n);
                let random = random_for(j, r, e)?;
                let random = standardize_values(random.values(), standardization)?;
                let e_random = mse_values(&random, &self.values[r])?;
                Ok(usize::from(self.mse[e * n + r] < e_random))
            })
            .try_reduce(|| 0, |a, b| Ok(a + b))?;
        Ok(wins as f64 / mc_samples as f64)
    }
}

/// Monte-Carlo identification rate with a caller-supplied random curve for
/// each triplet `(sample, reference, test)`.
///
/// A triplet counts as identified when the test expert is strictly closer to
/// the reference than the random curve. Reference/test pairs cycle through
/// all ordered pairs of distinct experts.
pub fn identification_rate_with<F>(
    experts: &[ExpressionCurve],
    standardization: StandardizationKind,
    mc_samples: usize,
    random_for: F,
) -> Result<f64>
where
    F: Fn(usize, usize, usize) -> Result<ExpressionCurve> + Sync,
{
    StandardizedExperts::new(experts, standardization)?.rate(standardization, mc_samples, random_for)
}

/// Evaluates the identification rate of randomized curves at any noise level
/// with common random numbers.
pub struct RateEstimator {
    experts: StandardizedExperts,
    avg: ExpressionCurve,
    partition: QuantilePartition,
    sigma_bar: f64,
    standardization: StandardizationKind,
    mc_samples: usize,
    seed: u64,
}

impl RateEstimator {
    pub fn new(
        experts: &[ExpressionCurve],
        scheme: QuantileScheme,
        standardization: StandardizationKind,
        mc_samples: usize,
        seed: u64,
    ) -> Result<Self> {
        let avg = average_curve(experts)?;
        let partition = quantile_partition(&avg, scheme)?;
        Ok(RateEstimator {
            experts: StandardizedExperts::new(experts, standardization)?,
            sigma_bar: average_std(experts)?,
            avg,
            partition,
            standardization,
            mc_samples,
            seed,
        })
    }

    pub fn sigma_bar(&self) -> f64 {
        self.sigma_bar
    }

    pub fn average(&self) -> &ExpressionCurve {
        &self.avg
    }

    pub fn partition(&self) -> &QuantilePartition {
        &self.partition
    }

    pub fn rate(&self, sigma: f64) -> Result<f64> {
        let config = RandomizationConfig::new(self.partition.scheme, sigma, self.seed, self.mc_samples)?;
        self.experts.rate(self.standardization, self.mc_samples, |j, _, _| {
            sample_randomized_curve(&self.avg, &self.partition, &config, j)
        })
    }
}

pub fn identification_rate(
    experts: &[ExpressionCurve],
    scheme: QuantileScheme,
    sigma: f64,
    standardization: StandardizationKind,
    mc_samples: usize,
    seed: u64,
) -> Result<f64> {
    RateEstimator::new(experts, scheme, standardization, mc_samples, seed)?.rate(sigma)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSettings {
    pub scheme: QuantileScheme,
    pub target: f64,
    pub tolerance: f64,
    pub standardization: StandardizationKind,
    pub mc_samples: usize,
    pub seed: u64,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        CalibrationSettings {
            scheme: QuantileScheme::Quartiles,
            target: 0.5,
            tolerance: DEFAULT_TOLERANCE,
            standardization: StandardizationKind::StandardScore,
            mc_samples: DEFAULT_MC_SAMPLES,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub sigma: f64,
    pub achieved_rate: f64,
    /// Bisection steps taken.
    pub iterations: usize,
    pub mc_samples: usize,
    pub sigma_bar: f64,
    pub converged: bool,
    /// Set when a rate outside its bracket was observed.
    pub non_monotone: bool,
}

/// Finds the noise level at which the framework identifies `target` of the
/// randomized curves.
pub fn calibrate_noise_level(experts: &[ExpressionCurve], settings: &CalibrationSettings) -> Result<CalibrationResult> {
    let CalibrationSettings {
        target, tolerance, ..
    } = *settings;
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::Domain(format!("target must lie in (0,1), got {target}")));
    }
    if !(tolerance > 0.0) {
        return Err(Error::Domain(format!("tolerance must be positive, got {tolerance}")));
    }
    let est = RateEstimator::new(
        experts,
        settings.scheme,
        settings.standardization,
        settings.mc_samples,
        settings.seed,
    )?;
    let result = |sigma, rate, iterations, converged, non_monotone| CalibrationResult {
        sigma,
        achieved_rate: rate,
        iterations,
        mc_samples: settings.mc_samples,
        sigma_bar: est.sigma_bar(),
        converged,
        non_monotone,
    };

    let rate0 = est.rate(0.0)?;
    if rate0 > target + tolerance {
        return Err(Error::CalibrationInfeasible(format!(
            "rate at sigma 0 is already {rate0:.4}, above target {target}"
        )));
    }
    if (rate0 - target).abs() <= tolerance {
        return Ok(result(0.0, rate0, 0, true, false));
    }

    let scale = if est.sigma_bar() > 0.0 {
        est.sigma_bar()
    } else {
        let m = est.average().values().iter().map(|v| v.abs()).sum::<f64>() / est.average().d() as f64;
        if m > 0.0 {
            m * 1e-3
        } else {
            1e-3
        }
    };
    let cap = scale * f64::from(1u32 << 20);
    let mut hi = scale;
    let mut rate_hi = est.rate(hi)?;
    while rate_hi < target {
        if hi >= cap {
            return Err(Error::CalibrationInfeasible(format!(
                "rate only reaches {rate_hi:.4} at sigma {hi}"
            )));
        }
        hi *= 2.0;
        rate_hi = est.rate(hi)?;
    }
    if (rate_hi - target).abs() <= tolerance {
        return Ok(result(hi, rate_hi, 0, true, false));
    }

    let (mut lo, mut rate_lo) = (0.0, rate0);
    let mut best = (hi, rate_hi);
    let mut non_monotone = false;
    for step in 1..=MAX_BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        let rate = est.rate(mid)?;
        if rate < rate_lo || rate > rate_hi {
            non_monotone = true;
        }
        if (rate - target).abs() < (best.1 - target).abs() {
            best = (mid, rate);
        }
        if (rate - target).abs() <= tolerance {
            return Ok(result(mid, rate, step, true, non_monotone));
        }
        if rate < target {
            (lo, rate_lo) = (mid, rate);
        } else {
            (hi, rate_hi) = (mid, rate);
        }
    }
    Ok(result(best.0, best.1, MAX_BISECTION_STEPS, false, non_monotone))
}
