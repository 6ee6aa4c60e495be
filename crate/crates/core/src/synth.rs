//! Synthetic score-aligned corpora.
//!
//! Each piece has a random 4/4 score (one to three notes per onset) and a
//! shared expressive shape: a phrase-arched beat period and a velocity
//! contour with sparse accents. Every performer follows the shape with their
//! own global tempo, loudness and shape depth, plus independent per-onset
//! noise scaled by `dispersion`. Chord spreads, articulation and melody
//! emphasis vary per note. Output is a pure function of the config.

use std::ops::RangeInclusive;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::perfalign::{AlignedNote, PerformanceRecord, PieceCorpus};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub pieces: usize,
    pub performers: RangeInclusive<usize>,
    pub onsets: RangeInclusive<usize>,
    /// Scales performer-specific noise; 0 makes performers differ only in
    /// global tempo, loudness and shape depth.
    pub dispersion: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            pieces: 33,
            performers: 6..=34,
            onsets: 40..=160,
            dispersion: 1.0,
            seed: 0,
        }
    }
}

pub fn piece_id(index: usize) -> String {
    format!("piece{:02}", index + 1)
}

pub fn generate_corpora(config: &SynthConfig) -> Result<Vec<PieceCorpus>> {
    (0..config.pieces).map(|i| generate_piece(config, i)).collect()
}

struct ScoreNote {
    id: String,
    pitch: u8,
    measure: u32,
    onset: f64,
    duration: f64,
    onset_index: usize,
    top: bool,
}

fn normal(rng: &mut ChaCha8Rng, sd: f64) -> f64 {
    if sd == 0.0 {
        0.0
    } else {
        Normal::new(0.0, sd).expect("finite sd").sample(rng)
    }
}

pub fn generate_piece(config: &SynthConfig, index: usize) -> Result<PieceCorpus> {
    let id = piece_id(index);
    let mut rng = seed::rng(config.seed, "synth-piece", &[index as u64]);
    let n_onsets = rng.random_range(config.onsets.clone()).max(2);
    let n_perf = rng.random_range(config.performers.clone()).max(2);

    let mut score = Vec::new();
    let mut grid = Vec::with_capacity(n_onsets);
    let mut onset = 0.0f64;
    for k in 0..n_onsets {
        let ioi = *[0.5, 1.0, 1.0, 0.5, 0.25, 1.5, 2.0].choose(&mut rng).expect("non-empty");
        let chord = rng.random_range(1..=3usize);
        let mut pitches: Vec<u8> = Vec::with_capacity(chord);
        while pitches.len() < chord {
            let p = rng.random_range(48..=84u8);
            if !pitches.contains(&p) {
                pitches.push(p);
            }
        }
        pitches.sort_unstable();
        let top = *pitches.last().expect("chord non-empty");
        for p in pitches {
            let duration = if rng.random_bool(0.3) { ioi / 2.0 } else { ioi };
            score.push(ScoreNote {
                id: format!("n{}", score.len() + 1),
                pitch: p,
                measure: (onset / 4.0).floor() as u32 + 1,
                onset,
                duration,
                onset_index: k,
                top: p == top,
            });
        }
        grid.push(onset);
        onset += ioi;
    }

    // shared expressive shape: phrase arcs, a slow random walk and sparse
    // accents
    let phrase = rng.random_range(6.0..16.0f64);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let base_bp = rng.random_range(0.35..0.8f64);
    let base_vel = rng.random_range(50.0..75.0f64);
    let mut walk = 0.0;
    let shape: Vec<(f64, f64)> = (0..n_onsets)
        .map(|k| {
            walk = 0.8 * walk + normal(&mut rng, 0.04);
            let arc = (std::f64::consts::TAU * k as f64 / phrase + phase).sin();
            (0.08 * arc + walk, 10.0 * arc + 60.0 * walk)
        })
        .collect();
    let accents: Vec<f64> = (0..n_onsets)
        .map(|_| if rng.random_bool(0.06) { rng.random_range(15.0..30.0f64) } else { 0.0 })
        .collect();

    let mut records = Vec::with_capacity(n_perf);
    for p in 0..n_perf {
        let mut prng = seed::rng(config.seed, "synth-performer", &[index as u64, p as u64]);
        let d = config.dispersion;
        let tempo_scale = normal(&mut prng, 0.08).exp();
        let depth = 1.0 + normal(&mut prng, 0.25);
        let loud = normal(&mut prng, 6.0);
        let mut bp = Vec::with_capacity(n_onsets);
        let mut vel = Vec::with_capacity(n_onsets);
        for (&(t, v), &acc) in shape.iter().zip(&accents) {
            let accent = (1.0 + normal(&mut prng, 0.3)).max(0.0) * acc;
            bp.push(base_bp * tempo_scale * (depth * t + normal(&mut prng, 0.06 * d)).exp());
            vel.push(base_vel + loud + depth * v + accent + normal(&mut prng, 5.0 * d));
        }
        let mut means = Vec::with_capacity(n_onsets);
        let mut t = prng.random_range(0.0..0.5f64);
        for k in 0..n_onsets {
            means.push(t);
            if k + 1 < n_onsets {
                t += bp[k] * (grid[k + 1] - grid[k]);
            }
        }

        let mut notes = Vec::with_capacity(score.len());
        let mut k = 0;
        while k < score.len() {
            let oi = score[k].onset_index;
            let end = score[k..].iter().position(|n| n.onset_index != oi).map_or(score.len(), |e| k + e);
            let chord = &score[k..end];
            let jitter: Vec<f64> = chord.iter().map(|_| normal(&mut prng, 0.012 * d)).collect();
            let centre = jitter.iter().sum::<f64>() / jitter.len() as f64;
            for (n, j) in chord.iter().zip(jitter) {
                let art = -0.4 + normal(&mut prng, 0.3);
                let emphasis = if n.top && chord.len() > 1 { 8.0 } else { 0.0 };
                let v = (vel[oi] + emphasis + normal(&mut prng, 3.0)).round().clamp(1.0, 127.0);
                notes.push(AlignedNote {
                    note_id: n.id.clone(),
                    pitch: n.pitch,
                    measure: n.measure,
                    score_onset: n.onset,
                    score_duration: n.duration,
                    perf_onset: round_us(means[oi] + j - centre),
                    perf_duration: round_us(n.duration * bp[oi] * art.exp2()).max(1e-3),
                    velocity: v as u8,
                });
            }
            k = end;
        }
        records.push(PerformanceRecord::new(format!("p{:02}", p + 1), id.clone(), notes)?);
    }
    PieceCorpus::from_records(id, records)
}

/// Microsecond resolution, like real MIDI-derived alignments.
fn round_us(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}
