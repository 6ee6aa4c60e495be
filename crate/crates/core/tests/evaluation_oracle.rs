use std::collections::BTreeMap;

use expeval::evaluation::{
    excerpt_scan, outcome_matrix, piece_statistics, reliability, run_experiment_grid, validity_error, Aggregate,
    GridConfig, OutcomeMatrix,
};
use expeval::features::{ExpressionCurve, FeatureKind};
use expeval::metric::StandardizationKind;
use expeval::perfalign::{AlignedNote, PerformanceRecord, PieceCorpus};
use expeval::synth::{generate_corpora, SynthConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod oracle {
    //! Straight-from-the-definition statistics on small instances.

    pub fn standardize(x: &[f64], std: &str) -> Vec<f64> {
        let n = x.len() as f64;
        let mu = x.iter().sum::<f64>() / n;
        match std {
            "none" => x.to_vec(),
            "mean" => x.iter().map(|v| v - mu).collect(),
            "mean_log" => {
                let l: Vec<f64> = x.iter().map(|v| v.ln() / std::f64::consts::LN_2).collect();
                let m = l.iter().sum::<f64>() / n;
                l.iter().map(|v| v - m).collect()
            }
            _ => {
                let sd = (x.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n).sqrt();
                x.iter().map(|v| (v - mu) / sd).collect()
            }
        }
    }

    pub fn mse(a: &[f64], b: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..a.len() {
            s += (a[i] - b[i]).powi(2);
        }
        s / a.len() as f64
    }

    /// bits[r][e][j]
    pub fn bits(experts: &[Vec<f64>], randoms: &[Vec<f64>], std: &str) -> Vec<Vec<Vec<Option<bool>>>> {
        let xs: Vec<Vec<f64>> = experts.iter().map(|x| standardize(x, std)).collect();
        let ys: Vec<Vec<f64>> = randoms.iter().map(|x| standardize(x, std)).collect();
        (0..xs.len())
            .map(|r| {
                (0..xs.len())
                    .map(|e| {
                        ys.iter()
                            .map(|y| (e != r).then(|| mse(&xs[e], &xs[r]) < mse(y, &xs[r])))
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|x| (x - mb).powi(2)).sum();
        if va == 0.0 || vb == 0.0 {
            let agree = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64;
            return 2.0 * agree / n - 1.0;
        }
        a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (va * vb).sqrt()
    }

    pub fn reliability(bits: &[Vec<Vec<Option<bool>>>]) -> f64 {
        let n = bits.len();
        let mut scores = Vec::new();
        for r1 in 0..n {
            for r2 in r1 + 1..n {
                let mut a = Vec::new();
                let mut b = Vec::new();
                for e in 0..n {
                    if e == r1 || e == r2 {
                        continue;
                    }
                    for j in 0..bits[r1][e].len() {
                        a.push(if bits[r1][e][j].unwrap() { 1.0 } else { 0.0 });
                        b.push(if bits[r2][e][j].unwrap() { 1.0 } else { 0.0 });
                    }
                }
                scores.push(corr(&a, &b));
            }
        }
        scores.iter().sum::<f64>() / scores.len() as f64
    }

    pub fn validity(bits: &[Vec<Vec<Option<bool>>>]) -> f64 {
        let all: Vec<bool> = bits.iter().flatten().flatten().flatten().copied().collect();
        all.iter().filter(|b| !**b).count() as f64 / all.len() as f64
    }

    pub fn mean_pairwise(a: &[Vec<f64>], b: &[Vec<f64>], std: &str, same: bool) -> f64 {
        let (mut s, mut n) = (0.0, 0);
        for i in 0..a.len() {
            for j in 0..b.len() {
                if same && j <= i {
                    continue;
                }
                s += mse(&standardize(&a[i], std), &standardize(&b[j], std));
                n += 1;
            }
        }
        s / n as f64
    }
}

fn curves(vals: &[Vec<f64>]) -> Vec<ExpressionCurve> {
    vals.iter()
        .map(|v| ExpressionCurve::new(FeatureKind::Tempo, (0..v.len()).map(|i| i as f64).collect(), v.clone()).unwrap())
        .collect()
}

fn instance(rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n = rng.random_range(3..=5);
    let m = rng.random_range(1..=3);
    let d = rng.random_range(3..=6);
    let base: Vec<f64> = (0..d).map(|_| rng.random_range(0.5..2.0)).collect();
    let mut draw = |spread: f64| -> Vec<f64> {
        base.iter().map(|b| b * (1.0 + spread * rng.random_range(-0.5..0.5))).collect()
    };
    let experts = (0..n).map(|_| draw(0.4)).collect();
    let randoms = (0..m).map(|_| draw(0.8)).collect();
    (experts, randoms)
}

#[test]
fn statistics_match_exhaustive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..40 {
        let (ev, rv) = instance(&mut rng);
        let (experts, randoms) = (curves(&ev), curves(&rv));
        for std in StandardizationKind::ALL {
            let name = std.as_str();
            let bits = oracle::bits(&ev, &rv, name);
            let stats = piece_statistics(&experts, &randoms, std).unwrap();
            let m = outcome_matrix(&experts, &randoms, std).unwrap();
            for r in 0..ev.len() {
                for e in 0..ev.len() {
                    for j in 0..rv.len() {
                        assert_eq!(m.get(r, e, j), bits[r][e][j], "case {case} {name}");
                    }
                }
            }
            let n = ev.len();
            assert_eq!(stats.defined_bits, n * (n - 1) * rv.len());
            assert!((stats.reliability - oracle::reliability(&bits)).abs() < 1e-9, "case {case} {name}");
            assert!((stats.validity_error - oracle::validity(&bits)).abs() < 1e-12);
            let ee = oracle::mean_pairwise(&ev, &ev, name, true);
            let er = oracle::mean_pairwise(&ev, &rv, name, false);
            assert!((stats.mean_mse_expert_expert - ee).abs() < 1e-9);
            assert!((stats.mean_mse_expert_random - er).abs() < 1e-9);
            match stats.mean_mse_random_random {
                None => assert_eq!(rv.len(), 1),
                Some(rr) => assert!((rr - oracle::mean_pairwise(&rv, &rv, name, true)).abs() < 1e-9),
            }
        }
    }
}

#[test]
fn hand_checked_matrix() {
    // references 0 and 1 agree on the remaining expert, reference 2 is the odd one
    let (t, f) = (Some(true), Some(false));
    let rows = vec![
        vec![None, None, t, f, t, t],
        vec![t, f, None, None, t, t],
        vec![t, t, t, t, None, None],
    ];
    let m = OutcomeMatrix::from_rows(2, rows).unwrap();
    // (0,1): compare test 2 -> [1,1] vs [1,1], constant rows, agreement 1 -> 1
    // (0,2): test 1 -> [1,0] vs [1,1], second constant, agreement 1/2 -> 0
    // (1,2): test 0 -> [1,0] vs [1,1] -> 0
    assert!((reliability(&m).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    assert!((validity_error(&m) - 2.0 / 12.0).abs() < 1e-12);
}

#[test]
fn validity_is_invariant_under_relabelling() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (ev, rv) = instance(&mut rng);
    let base = validity_error(&outcome_matrix(&curves(&ev), &curves(&rv), StandardizationKind::Mean).unwrap());
    let base_rel = reliability(&outcome_matrix(&curves(&ev), &curves(&rv), StandardizationKind::Mean).unwrap()).unwrap();
    let mut ev2 = ev.clone();
    ev2.reverse();
    let mut rv2 = rv.clone();
    rv2.rotate_left(1);
    let m = outcome_matrix(&curves(&ev2), &curves(&rv2), StandardizationKind::Mean).unwrap();
    assert!((validity_error(&m) - base).abs() < 1e-12);
    assert!((reliability(&m).unwrap() - base_rel).abs() < 1e-12);
}

#[test]
fn grid_shape_and_aggregates() {
    let cfg = SynthConfig {
        pieces: 4,
        performers: 3..=6,
        onsets: 20..=40,
        dispersion: 1.0,
        seed: 3,
    };
    let corpora = generate_corpora(&cfg).unwrap();
    let grid = GridConfig {
        randoms_per_piece: 8,
        ..GridConfig::default()
    };
    let report = run_experiment_grid(&corpora, &grid);
    assert_eq!(report.cells.len(), 2 * 4 * 2 * 4);
    assert_eq!(report.succeeded(), 2 * 4 * 4);
    for ds in &report.datasets {
        assert_eq!(ds.aggregate, Aggregate::of(&ds.per_piece));
        let agg = ds.aggregate.as_ref().unwrap();
        let rel = ds.per_piece.iter().map(|p| p.stats.reliability).sum::<f64>() / ds.per_piece.len() as f64;
        assert!((agg.reliability - rel).abs() < 1e-12);
        for p in &ds.per_piece {
            assert_eq!(p.stats.defined_bits, p.n_experts * (p.n_experts - 1) * 8);
        }
    }
    // same input in a different order gives the same report
    let mut rev = corpora.clone();
    rev.reverse();
    assert_eq!(run_experiment_grid(&rev, &grid), report);
}

#[test]
fn piece_with_too_few_performers_fails_alone() {
    let cfg = SynthConfig {
        pieces: 2,
        performers: 4..=4,
        onsets: 20..=20,
        dispersion: 1.0,
        seed: 1,
    };
    let mut corpora = generate_corpora(&cfg).unwrap();
    let small = PieceCorpus::from_records("tiny", corpora[0].performances()[..2].to_vec()).unwrap();
    corpora.push(small);
    let report = run_experiment_grid(&corpora, &GridConfig { randoms_per_piece: 4, ..GridConfig::default() });
    assert_eq!(report.cells.len(), 2 * 4 * 2 * 3);
    let failed: Vec<_> = report.cells.iter().filter(|c| !c.ok).collect();
    assert_eq!(failed.len(), 16);
    assert!(failed.iter().all(|c| c.piece_id == "tiny"));
}

fn note(id: usize, measure: u32, onset: f64, perf: f64, vel: u8) -> AlignedNote {
    AlignedNote {
        note_id: format!("n{id}"),
        pitch: 60,
        measure,
        score_onset: onset,
        score_duration: 1.0,
        perf_onset: perf,
        perf_duration: 0.4,
        velocity: vel,
    }
}

#[test]
fn excerpt_scan_prefers_the_agreeing_section() {
    // measures 1-4: performers share a velocity contour; 5-8: unrelated
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let shared: Vec<f64> = (0..16).map(|i| 60.0 + 20.0 * (i as f64 * 0.9).sin()).collect();
    let records = (0..5)
        .map(|p| {
            let notes = (0..32)
                .map(|i| {
                    let v = if i < 16 { shared[i] + rng.random_range(-2.0..2.0) } else { rng.random_range(30.0..100.0) };
                    note(i, i as u32 / 4 + 1, i as f64, i as f64 * 0.5, v.round() as u8)
                })
                .collect();
            PerformanceRecord::new(format!("p{p}"), "x", notes).unwrap()
        })
        .collect();
    let corpus = PieceCorpus::from_records("x", records).unwrap();
    let scores = excerpt_scan(&corpus, FeatureKind::Velocity, 4, 8).unwrap();
    assert_eq!(scores.len(), 5);
    assert_eq!(scores[0].start_measure, 1);
    assert!(scores[0].mean_correlation > 0.9);
    assert!(scores.windows(2).all(|w| w[0].mean_correlation >= w[1].mean_correlation));
    assert_eq!(scores[0].pairs, 10);
    let by_start: BTreeMap<u32, f64> = scores.iter().map(|s| (s.start_measure, s.mean_correlation)).collect();
    assert!(by_start[&5] < 0.5);
}
