//! Standardizations, distance and correlation, quantile partitions and the
//! exact binomial outcome probability.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::ExpressionCurve;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StandardizationKind {
    #[default]
    None,
    /// `x - mean(x)`
    Mean,
    /// `log2(x) - mean(log2(x))`
    MeanLog,
    /// `(x - mean(x)) / std(x)` with the population standard deviation.
    StandardScore,
}

impl StandardizationKind {
    pub const ALL: [StandardizationKind; 4] = [
        StandardizationKind::None,
        StandardizationKind::Mean,
        StandardizationKind::MeanLog,
        StandardizationKind::StandardScore,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StandardizationKind::None => "none",
            StandardizationKind::Mean => "mean",
            StandardizationKind::MeanLog => "mean_log",
            StandardizationKind::StandardScore => "standard_score",
        }
    }
}

impl fmt::Display for StandardizationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StandardizationKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "none" => Ok(StandardizationKind::None),
            "mean" => Ok(StandardizationKind::Mean),
            "mean_log" | "meanlog" => Ok(StandardizationKind::MeanLog),
            "standard_score" | "zscore" | "mean_variance" => Ok(StandardizationKind::StandardScore),
            other => Err(format!("unknown standardization {other:?}")),
        }
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn centred(x: &[f64]) -> Vec<f64> {
    let m = mean(x);
    x.iter().map(|v| v - m).collect()
}

pub fn standardize_values(x: &[f64], kind: StandardizationKind) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::TooFewDimensions { needed: 1, got: 0 });
    }
    match kind {
        StandardizationKind::None => Ok(x.to_vec()),
        StandardizationKind::Mean => Ok(centred(x)),
        StandardizationKind::MeanLog => {
            if let Some(v) = x.iter().find(|v| !(**v > 0.0)) {
                return Err(Error::Domain(format!("mean_log needs positive values, got {v}")));
            }
            let logs: Vec<f64> = x.iter().map(|v| v.log2()).collect();
            Ok(centred(&logs))
        }
        StandardizationKind::StandardScore => {
            let c = centred(x);
            let var = c.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
            if var == 0.0 {
                return Err(Error::ConstantCurve);
            }
            let sd = var.sqrt();
            Ok(c.into_iter().map(|v| v / sd).collect())
        }
    }
}

pub fn standardize(curve: &ExpressionCurve, kind: StandardizationKind) -> Result<ExpressionCurve> {
    let values = standardize_values(curve.values(), kind)?;
    Ok(curve.standardized(kind, values))
}

/// Mean squared difference of two equal-length slices.
pub fn mse_values(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape(format!("d = {} vs d = {}", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

/// `||c1 - c2||^2 / d`.
pub fn mse(c1: &ExpressionCurve, c2: &ExpressionCurve) -> Result<f64> {
    c1.check_same_shape(c2)?;
    mse_values(c1.values(), c2.values())
}

pub fn pearson_values(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("d = {} vs d = {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::TooFewDimensions { needed: 2, got: a.len() });
    }
    let (ca, cb) = (centred(a), centred(b));
    let saa: f64 = ca.iter().map(|v| v * v).sum();
    let sbb: f64 = cb.iter().map(|v| v * v).sum();
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::ConstantCurve);
    }
    let sab: f64 = ca.iter().zip(&cb).map(|(x, y)| x * y).sum();
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

pub fn pearson(c1: &ExpressionCurve, c2: &ExpressionCurve) -> Result<f64> {
    c1.check_same_shape(c2)?;
    pearson_values(c1.values(), c2.values())
}

/// `C(n, k) / 2^n`, evaluated in log space.
pub fn binomial_exact_probability(n: u64, k: u64) -> Result<f64> {
    if n == 0 || k > n {
        return Err(Error::Domain(format!("need 0 <= k <= n and n > 0, got n={n}, k={k}")));
    }
    let k = k.min(n - k);
    let ln_choose: f64 = (1..=k)
        .map(|i| ((n - k + i) as f64).ln() - (i as f64).ln())
        .sum();
    Ok((ln_choose - n as f64 * std::f64::consts::LN_2).exp())
}

/// Probability as a percentage with two decimals, e.g. `0.01%`.
pub fn format_percent(p: f64) -> String {
    format!("{:.2}%", 100.0 * p)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantileScheme {
    /// Four equal-size rank groups.
    Quartiles,
    /// Lowest 5%, centre 90%, highest 5%.
    #[serde(rename = "tails_5_90_5")]
    Tails5_90_5,
}

impl QuantileScheme {
    pub fn groups(self) -> usize {
        match self {
            QuantileScheme::Quartiles => 4,
            QuantileScheme::Tails5_90_5 => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            QuantileScheme::Quartiles => "quartiles",
            QuantileScheme::Tails5_90_5 => "tails_5_90_5",
        }
    }

    /// Group sizes for `d` dimensions, lowest values first.
    fn sizes(self, d: usize) -> Vec<usize> {
        match self {
            QuantileScheme::Quartiles => {
                let (base, rem) = (d / 4, d % 4);
                (0..4).map(|q| base + usize::from(q < rem)).collect()
            }
            QuantileScheme::Tails5_90_5 => {
                // a rank is in a tail when its inclusive empirical tail
                // probability is at most 5%; tails never go empty
                let tail = (d * 5 / 100).max(1);
                vec![tail, d - 2 * tail, tail]
            }
        }
    }
}

impl fmt::Display for QuantileScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QuantileScheme {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "quartiles" | "quartile" => Ok(QuantileScheme::Quartiles),
            "tails" | "tails_5_90_5" | "5/90/5" => Ok(QuantileScheme::Tails5_90_5),
            other => Err(format!("unknown quantile scheme {other:?}")),
        }
    }
}

/// Assignment of curve dimensions to value-rank groups and the mean of the
/// curve within each group. Groups are ordered from lowest to highest values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantilePartition {
    pub scheme: QuantileScheme,
    pub group_of: Vec<usize>,
    pub means: Vec<f64>,
    pub sizes: Vec<usize>,
}

impl QuantilePartition {
    pub fn d(&self) -> usize {
        self.group_of.len()
    }

    /// Human-readable grouping rule.
    pub fn boundaries(&self) -> String {
        let label = match self.scheme {
            QuantileScheme::Quartiles => "quartiles by stable rank",
            QuantileScheme::Tails5_90_5 => "lowest 5% / centre / highest 5% by stable rank",
        };
        format!("{label}; sizes {:?}", self.sizes)
    }
}

pub fn quantile_partition(avg: &ExpressionCurve, scheme: QuantileScheme) -> Result<QuantilePartition> {
    let values = avg.values();
    let d = values.len();
    if d < scheme.groups() {
        return Err(Error::TooFewDimensions {
            needed: scheme.groups(),
            got: d,
        });
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let sizes = scheme.sizes(d);
    let mut group_of = vec![0; d];
    let mut sums = vec![0.0; sizes.len()];
    let mut rank = 0;
    for (g, &size) in sizes.iter().enumerate() {
        for &dim in &order[rank..rank + size] {
            group_of[dim] = g;
            sums[g] += values[dim];
        }
        rank += size;
    }
    let means = sums
        .iter()
        .zip(&sizes)
        .map(|(s, &n)| s / n as f64)
        .collect();
    Ok(QuantilePartition {
        scheme,
        group_of,
        means,
        sizes,
    })
}
