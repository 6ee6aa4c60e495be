//! The two-model evaluation framework and the statistics built on it.
//!
//! A comparison takes two candidate curves and an expert reference and
//! returns `true` when the first candidate has strictly smaller MSE to the
//! reference. With expert curves as the first model and randomized curves as
//! the second, the outcome bits of every (reference, test expert, random)
//! triplet form an [`OutcomeMatrix`], from which reliability (agreement
//! across references) and validity error (share of triplets won by the
//! random curve) are computed.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{extract_curve, ExpressionCurve, FeatureKind};
use crate::metric::{
    mse_values, pearson_values, quantile_partition, standardize, standardize_values, QuantileScheme,
    StandardizationKind,
};
use crate::perfalign::PieceCorpus;
use crate::randomizer::{average_curve, average_std, sample_randomized_curve, RandomizationConfig};
use crate::seed;

/// `true` iff `mse(std(p1), std(rp)) < mse(std(p2), std(rp))`. Ties go to `p2`.
pub fn two_model_compare(
    p1: &ExpressionCurve,
    p2: &ExpressionCurve,
    rp: &ExpressionCurve,
    standardization: StandardizationKind,
) -> Result<bool> {
    p1.check_same_shape(rp)?;
    p2.check_same_shape(rp)?;
    let rp = standardize(rp, standardization)?;
    let e1 = mse_values(standardize(p1, standardization)?.values(), rp.values())?;
    let e2 = mse_values(standardize(p2, standardization)?.values(), rp.values())?;
    Ok(e1 < e2)
}

/// Outcome bits indexed by reference expert and (test expert, random) pair.
///
/// Entries whose test expert is the reference are undefined.
#[derive(Clone, Debug, PartialEq)]
pub struct OutcomeMatrix {
    n_experts: usize,
    n_random: usize,
    bits: Vec<Option<bool>>,
}

impl OutcomeMatrix {
    /// Builds a matrix from explicit bits, `bits[r][e * n_random + j]`.
    pub fn from_rows(n_random: usize, rows: Vec<Vec<Option<bool>>>) -> Result<Self> {
        let n = rows.len();
        let mut bits = Vec::with_capacity(n * n * n_random);
        for (r, row) in rows.into_iter().enumerate() {
            if row.len() != n * n_random {
                return Err(Error::Shape(format!("row {r} has {} entries, expected {}", row.len(), n * n_random)));
            }
            for (p, b) in row.iter().enumerate() {
                if b.is_some() == (p / n_random == r) {
                    return Err(Error::Shape(format!(
                        "entry ({r}, {p}) must be {}",
                        if p / n_random == r { "undefined" } else { "defined" }
                    )));
                }
            }
            bits.extend(row);
        }
        Ok(OutcomeMatrix {
            n_experts: n,
            n_random,
            bits,
        })
    }

    pub fn n_experts(&self) -> usize {
        self.n_experts
    }

    pub fn n_random(&self) -> usize {
        self.n_random
    }

    /// Column labels: `(test_expert, random_index)`.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n_experts).flat_map(move |e| (0..self.n_random).map(move |j| (e, j)))
    }

    pub fn row(&self, reference: usize) -> &[Option<bool>] {
        let w = self.n_experts * self.n_random;
        &self.bits[reference * w..(reference + 1) * w]
    }

    pub fn get(&self, reference: usize, test: usize, random: usize) -> Option<bool> {
        self.row(reference)[test * self.n_random + random]
    }

    pub fn defined_bits(&self) -> usize {
        self.bits.iter().filter(|b| b.is_some()).count()
    }
}

/// Standardized curves of one piece and their pairwise MSEs.
struct PieceDistances {
    n: usize,
    n_random: usize,
    /// `ee[e * n + r]`
    ee: Vec<f64>,
    /// `er[j * n + r]`
    er: Vec<f64>,
    rr: Vec<f64>,
}

impl PieceDistances {
    fn new(experts: &[ExpressionCurve], randoms: &[ExpressionCurve], std: StandardizationKind) -> Result<Self> {
        if experts.len() < 3 {
            return Err(Error::TooFewPerformances {
                needed: 3,
                got: experts.len(),
            });
        }
        if randoms.is_empty() {
            return Err(Error::Domain("need at least one random curve".into()));
        }
        for c in experts[1..].iter().chain(randoms) {
            experts[0].check_same_shape(c)?;
        }
        let z = |c: &ExpressionCurve| standardize_values(c.values(), std);
        let xs = experts.iter().map(z).collect::<Result<Vec<_>>>()?;
        let ys = randoms.iter().map(z).collect::<Result<Vec<_>>>()?;
        let (n, m) = (xs.len(), ys.len());
        let mut ee = vec![0.0; n * n];
        for e in 0..n {
            for r in 0..n {
                ee[e * n + r] = mse_values(&xs[e], &xs[r])?;
            }
        }
        let mut er = vec![0.0; m * n];
        for j in 0..m {
            for r in 0..n {
                er[j * n + r] = mse_values(&ys[j], &xs[r])?;
            }
        }
        let mut rr = Vec::with_capacity(m * (m - 1) / 2);
        for a in 0..m {
            for b in a + 1..m {
                rr.push(mse_values(&ys[a], &ys[b])?);
            }
        }
        Ok(PieceDistances {
            n,
            n_random: m,
            ee,
            er,
            rr,
        })
    }

    fn outcomes(&self) -> OutcomeMatrix {
        let (n, m) = (self.n, self.n_random);
        let mut bits = Vec::with_capacity(n * n * m);
        for r in 0..n {
            for e in 0..n {
                for j in 0..m {
                    bits.push((e != r).then(|| self.ee[e * n + r] < self.er[j * n + r]));
                }
            }
        }
        OutcomeMatrix {
            n_experts: n,
            n_random: m,
            bits,
        }
    }
}

pub fn outcome_matrix(
    experts: &[ExpressionCurve],
    randoms: &[ExpressionCurve],
    std: StandardizationKind,
) -> Result<OutcomeMatrix> {
    Ok(PieceDistances::new(experts, randoms, std)?.outcomes())
}

/// Mean correlation of outcome rows over unordered reference pairs.
///
/// Rows are compared on the columns defined for both references. Pearson
/// correlation is used when both restricted rows vary; otherwise the score
/// is `2 * agreement - 1`.
pub fn reliability(matrix: &OutcomeMatrix) -> Result<f64> {
    let n = matrix.n_experts;
    let m = matrix.n_random;
    if n < 2 {
        return Err(Error::TooFewPerformances { needed: 2, got: n });
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for r1 in 0..n {
        for r2 in r1 + 1..n {
            let (a, b) = (matrix.row(r1), matrix.row(r2));
            let (mut cnt, mut sa, mut sb, mut sab) = (0i64, 0i64, 0i64, 0i64);
            for e in (0..n).filter(|&e| e != r1 && e != r2) {
                for j in 0..m {
                    let p = e * m + j;
                    let (x, y) = (i64::from(a[p] == Some(true)), i64::from(b[p] == Some(true)));
                    cnt += 1;
                    sa += x;
                    sb += y;
                    sab += x * y;
                }
            }
            if cnt == 0 {
                continue;
            }
            let var_a = cnt * sa - sa * sa;
            let var_b = cnt * sb - sb * sb;
            let corr = if var_a > 0 && var_b > 0 {
                (cnt * sab - sa * sb) as f64 / ((var_a as f64) * (var_b as f64)).sqrt()
            } else {
                let agree = cnt - (sa + sb - 2 * sab);
                2.0 * agree as f64 / cnt as f64 - 1.0
            };
            total += corr;
            pairs += 1;
        }
    }
    if pairs == 0 {
        return Err(Error::UndefinedReliability);
    }
    Ok(total / pairs as f64)
}

/// Share of defined outcome bits won by the random curve.
pub fn validity_error(matrix: &OutcomeMatrix) -> f64 {
    let (mut zeros, mut defined) = (0usize, 0usize);
    for b in matrix.bits.iter().flatten() {
        defined += 1;
        zeros += usize::from(!*b);
    }
    if defined == 0 {
        0.0
    } else {
        zeros as f64 / defined as f64
    }
}

/// The five per-piece statistics of one (feature, standardization) test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PieceStatistics {
    pub mean_mse_expert_expert: f64,
    pub mean_mse_expert_random: f64,
    /// `None` with fewer than two random curves.
    pub mean_mse_random_random: Option<f64>,
    pub reliability: f64,
    pub validity_error: f64,
    pub defined_bits: usize,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn piece_statistics(
    experts: &[ExpressionCurve],
    randoms: &[ExpressionCurve],
    std: StandardizationKind,
) -> Result<PieceStatistics> {
    let dist = PieceDistances::new(experts, randoms, std)?;
    let n = dist.n;
    let matrix = dist.outcomes();
    let ee = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b)));
    Ok(PieceStatistics {
        mean_mse_expert_expert: mean(ee.map(|(a, b)| dist.ee[a * n + b])).expect("n >= 3"),
        mean_mse_expert_random: mean(dist.er.iter().copied()).expect("randoms non-empty"),
        mean_mse_random_random: mean(dist.rr.iter().copied()),
        reliability: reliability(&matrix)?,
        validity_error: validity_error(&matrix),
        defined_bits: matrix.defined_bits(),
    })
}

/// Measure number of every dimension of `kind`'s curve.
fn dimension_measures(corpus: &PieceCorpus, kind: FeatureKind) -> Vec<u32> {
    let perf = &corpus.performances()[0];
    let notes = perf.notes();
    if kind.is_onset_wise() {
        let groups = perf.onset_groups();
        let mut measures: Vec<u32> = groups
            .iter()
            .map(|g| notes[g.notes.clone()].iter().map(|n| n.measure).min().expect("non-empty group"))
            .collect();
        if kind == FeatureKind::Tempo {
            measures.pop();
        }
        measures
    } else {
        notes.iter().map(|n| n.measure).collect()
    }
}

fn grid_measures(corpus: &PieceCorpus) -> Vec<u32> {
    let perf = &corpus.performances()[0];
    perf.onset_groups()
        .iter()
        .map(|g| perf.notes()[g.notes.clone()].iter().map(|n| n.measure).min().expect("non-empty group"))
        .collect()
}

/// Every performance's `kind` curve restricted to measures
/// `start..start + length`.
pub fn excerpt_curves(corpus: &PieceCorpus, kind: FeatureKind, start: u32, length: u32) -> Result<Vec<ExpressionCurve>> {
    let dims: Vec<usize> = dimension_measures(corpus, kind)
        .iter()
        .enumerate()
        .filter(|(_, m)| (start..start + length).contains(m))
        .map(|(i, _)| i)
        .collect();
    if dims.is_empty() {
        return Err(Error::NoExcerpt);
    }
    corpus
        .performances()
        .iter()
        .map(|p| Ok(extract_curve(p, kind)?.select(&dims)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExcerptScore {
    pub start_measure: u32,
    pub length: u32,
    pub n_onsets: usize,
    pub mean_correlation: f64,
    /// Performer pairs that entered the mean.
    pub pairs: usize,
}

/// Ranks every window of `window_measures` consecutive measures by the mean
/// pairwise Pearson correlation of the performers' curves, highest first.
pub fn excerpt_scan(
    corpus: &PieceCorpus,
    kind: FeatureKind,
    window_measures: u32,
    min_onsets: usize,
) -> Result<Vec<ExcerptScore>> {
    if window_measures == 0 {
        return Err(Error::Domain("window must span at least one measure".into()));
    }
    let curves = corpus
        .performances()
        .iter()
        .map(|p| extract_curve(p, kind))
        .collect::<Result<Vec<_>>>()?;
    let dim_measures = dimension_measures(corpus, kind);
    let onset_measures = grid_measures(corpus);
    let first = *onset_measures.iter().min().expect("corpus has onsets");
    let last = *onset_measures.iter().max().expect("corpus has onsets");

    let mut scores = Vec::new();
    let mut start = first;
    while start + window_measures - 1 <= last {
        let window = start..start + window_measures;
        let n_onsets = onset_measures.iter().filter(|m| window.contains(m)).count();
        let dims: Vec<usize> = (0..dim_measures.len()).filter(|&i| window.contains(&dim_measures[i])).collect();
        if n_onsets >= min_onsets && dims.len() >= 2 {
            let slices: Vec<Vec<f64>> = curves
                .iter()
                .map(|c| dims.iter().map(|&i| c.values()[i]).collect())
                .collect();
            let mut total = 0.0;
            let mut pairs = 0;
            for a in 0..slices.len() {
                for b in a + 1..slices.len() {
                    match pearson_values(&slices[a], &slices[b]) {
                        Ok(r) => {
                            total += r;
                            pairs += 1;
                        }
                        Err(Error::ConstantCurve) => {}
                        Err(e) => return Err(e),
                    }
                }
            }
            if pairs > 0 {
                scores.push(ExcerptScore {
                    start_measure: start,
                    length: window_measures,
                    n_onsets,
                    mean_correlation: total / pairs as f64,
                    pairs,
                });
            }
        }
        start += 1;
    }
    if scores.is_empty() {
        return Err(Error::NoExcerpt);
    }
    scores.sort_by(|a, b| {
        b.mean_correlation
            .total_cmp(&a.mean_correlation)
            .then(a.start_measure.cmp(&b.start_measure))
    });
    Ok(scores)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub features: Vec<FeatureKind>,
    pub standardizations: Vec<StandardizationKind>,
    pub randoms_per_piece: usize,
    pub scheme: QuantileScheme,
    pub seed: u64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            features: vec![FeatureKind::Tempo, FeatureKind::Velocity],
            standardizations: StandardizationKind::ALL.to_vec(),
            randoms_per_piece: 64,
            scheme: QuantileScheme::Tails5_90_5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PieceReport {
    pub piece_id: String,
    pub feature: FeatureKind,
    pub standardization: StandardizationKind,
    pub n_experts: usize,
    /// Distinct score onsets of the piece.
    pub n_onsets: usize,
    #[serde(flatten)]
    pub stats: PieceStatistics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PieceFailure {
    pub piece_id: String,
    pub feature: FeatureKind,
    pub standardization: StandardizationKind,
    pub n_experts: usize,
    pub n_onsets: usize,
    pub reason: String,
}

/// Unweighted means over pieces; counts are summed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n_pieces: usize,
    pub total_experts: usize,
    pub total_onsets: usize,
    pub mean_mse_expert_expert: f64,
    pub mean_mse_expert_random: f64,
    pub mean_mse_random_random: Option<f64>,
    pub reliability: f64,
    pub validity_error: f64,
}

impl Aggregate {
    pub fn of(pieces: &[PieceReport]) -> Option<Aggregate> {
        let stat = |f: fn(&PieceStatistics) -> f64| mean(pieces.iter().map(|p| f(&p.stats)));
        Some(Aggregate {
            n_pieces: pieces.len(),
            total_experts: pieces.iter().map(|p| p.n_experts).sum(),
            total_onsets: pieces.iter().map(|p| p.n_onsets).sum(),
            mean_mse_expert_expert: stat(|s| s.mean_mse_expert_expert)?,
            mean_mse_expert_random: stat(|s| s.mean_mse_expert_random)?,
            mean_mse_random_random: mean(pieces.iter().filter_map(|p| p.stats.mean_mse_random_random)),
            reliability: stat(|s| s.reliability)?,
            validity_error: stat(|s| s.validity_error)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub feature: FeatureKind,
    pub standardization: StandardizationKind,
    pub per_piece: Vec<PieceReport>,
    pub failures: Vec<PieceFailure>,
    pub aggregate: Option<Aggregate>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentTest {
    Reliability,
    Validity,
}

/// One (feature, standardization, test, piece) experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentCell {
    pub feature: FeatureKind,
    pub standardization: StandardizationKind,
    pub test: ExperimentTest,
    pub piece_id: String,
    pub ok: bool,
    pub value: Option<f64>,
    pub defined_bits: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub config: GridConfig,
    pub datasets: Vec<DatasetReport>,
    pub cells: Vec<ExperimentCell>,
}

impl GridReport {
    pub fn dataset(&self, feature: FeatureKind, std: StandardizationKind) -> Option<&DatasetReport> {
        self.datasets
            .iter()
            .find(|d| d.feature == feature && d.standardization == std)
    }

    pub fn succeeded(&self) -> usize {
        self.datasets.iter().map(|d| d.per_piece.len()).sum()
    }
}

/// Expert curves and their randomized counterparts for one (feature, piece).
pub fn piece_curves(
    corpus: &PieceCorpus,
    feature: FeatureKind,
    scheme: QuantileScheme,
    randoms: usize,
    seed: u64,
) -> Result<(Vec<ExpressionCurve>, Vec<ExpressionCurve>)> {
    let n = corpus.performances().len();
    if n < 3 {
        return Err(Error::TooFewPerformances { needed: 3, got: n });
    }
    let experts = corpus
        .performances()
        .iter()
        .map(|p| extract_curve(p, feature))
        .collect::<Result<Vec<_>>>()?;
    let avg = average_curve(&experts)?;
    let partition = quantile_partition(&avg, scheme)?;
    let piece_seed = seed::derive_seed(seed, "grid", &[seed::tag(feature.as_str()), seed::tag(corpus.piece_id())]);
    let config = RandomizationConfig::new(scheme, average_std(&experts)?, piece_seed, randoms)?;
    let randoms = (0..randoms)
        .map(|j| sample_randomized_curve(&avg, &partition, &config, j))
        .collect::<Result<Vec<_>>>()?;
    Ok((experts, randoms))
}

type PieceOutcome = std::result::Result<PieceReport, PieceFailure>;

fn run_piece(corpus: &PieceCorpus, feature: FeatureKind, config: &GridConfig) -> Vec<PieceOutcome> {
    let n_experts = corpus.performances().len();
    let n_onsets = corpus.onset_grid().len();
    let fail = |std, reason: String| PieceFailure {
        piece_id: corpus.piece_id().to_string(),
        feature,
        standardization: std,
        n_experts,
        n_onsets,
        reason,
    };
    let curves = piece_curves(corpus, feature, config.scheme, config.randoms_per_piece, config.seed);
    config
        .standardizations
        .iter()
        .map(|&std| match &curves {
            Err(e) => Err(fail(std, e.to_string())),
            Ok((experts, randoms)) => piece_statistics(experts, randoms, std)
                .map(|stats| PieceReport {
                    piece_id: corpus.piece_id().to_string(),
                    feature,
                    standardization: std,
                    n_experts,
                    n_onsets,
                    stats,
                })
                .map_err(|e| fail(std, e.to_string())),
        })
        .collect()
}

/// Runs every (feature, standardization, piece) test. Per-piece failures are
/// recorded, not fatal. Parallel over (feature, piece); output order is by
/// feature, standardization and piece id regardless of scheduling.
pub fn run_experiment_grid(corpora: &[PieceCorpus], config: &GridConfig) -> GridReport {
    let mut pieces: Vec<&PieceCorpus> = corpora.iter().collect();
    pieces.sort_by(|a, b| a.piece_id().cmp(b.piece_id()));
    let features: Vec<FeatureKind> = dedup(&config.features);
    let stds: Vec<StandardizationKind> = dedup(&config.standardizations);
    let config = GridConfig {
        features: features.clone(),
        standardizations: stds.clone(),
        ..config.clone()
    };

    let tasks: Vec<(FeatureKind, &PieceCorpus)> = features
        .iter()
        .flat_map(|&f| pieces.iter().map(move |&p| (f, p)))
        .collect();
    let results: Vec<Vec<PieceOutcome>> = tasks
        .par_iter()
        .map(|&(f, p)| run_piece(p, f, &config))
        .collect();

    let mut datasets = Vec::new();
    let mut cells = Vec::new();
    for (fi, &feature) in features.iter().enumerate() {
        let rows = &results[fi * pieces.len()..(fi + 1) * pieces.len()];
        for (si, &std) in stds.iter().enumerate() {
            let mut per_piece = Vec::new();
            let mut failures = Vec::new();
            for outcome in rows.iter().map(|r| &r[si]) {
                match outcome {
                    Ok(report) => {
                        for (test, value) in [
                            (ExperimentTest::Reliability, report.stats.reliability),
                            (ExperimentTest::Validity, report.stats.validity_error),
                        ] {
                            cells.push(ExperimentCell {
                                feature,
                                standardization: std,
                                test,
                                piece_id: report.piece_id.clone(),
                                ok: true,
                                value: Some(value),
                                defined_bits: report.stats.defined_bits,
                            });
                        }
                        per_piece.push(report.clone());
                    }
                    Err(failure) => {
                        for test in [ExperimentTest::Reliability, ExperimentTest::Validity] {
                            cells.push(ExperimentCell {
                                feature,
                                standardization: std,
                                test,
                                piece_id: failure.piece_id.clone(),
                                ok: false,
                                value: None,
                                defined_bits: 0,
                            });
                        }
                        failures.push(failure.clone());
                    }
                }
            }
            datasets.push(DatasetReport {
                feature,
                standardization: std,
                aggregate: Aggregate::of(&per_piece),
                per_piece,
                failures,
            });
        }
    }
    GridReport {
        config,
        datasets,
        cells,
    }
}

fn dedup<T: Copy + Ord>(xs: &[T]) -> Vec<T> {
    let mut seen = BTreeSet::new();
    xs.iter().copied().filter(|x| seen.insert(*x)).collect()
}
