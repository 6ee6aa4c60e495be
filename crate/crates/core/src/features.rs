//! Expression features and their inverse.
//!
//! Onset-wise features (tempo, velocity) are [`ExpressionCurve`]s over the
//! score-onset grid. Note-wise features (timing, articulation) are
//! [`NoteWiseFeature`]s keyed by note id; they flatten to a curve in
//! canonical note order when a vector view is needed.

use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric::StandardizationKind;
use crate::perfalign::{AlignedNote, OnsetGroup, PerformanceRecord};
use crate::randomizer::RandomizationMeta;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Tempo,
    Velocity,
    Timing,
    Articulation,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 4] = [
        FeatureKind::Tempo,
        FeatureKind::Velocity,
        FeatureKind::Timing,
        FeatureKind::Articulation,
    ];

    pub fn is_onset_wise(self) -> bool {
        matches!(self, FeatureKind::Tempo | FeatureKind::Velocity)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::Tempo => "tempo",
            FeatureKind::Velocity => "velocity",
            FeatureKind::Timing => "timing",
            FeatureKind::Articulation => "articulation",
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tempo" => Ok(FeatureKind::Tempo),
            "velocity" | "dynamics" => Ok(FeatureKind::Velocity),
            "timing" => Ok(FeatureKind::Timing),
            "articulation" => Ok(FeatureKind::Articulation),
            other => Err(format!("unknown feature {other:?}")),
        }
    }
}

/// Feature values indexed by score position.
///
/// For tempo and velocity `onsets` are grid onsets (tempo: segment starts).
/// Flattened note-wise features carry each note's score onset, so positions
/// may repeat.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpressionCurve {
    kind: FeatureKind,
    standardization: StandardizationKind,
    onsets: Vec<f64>,
    values: Vec<f64>,
}

impl ExpressionCurve {
    /// A raw (unstandardized) curve. Tempo values must be strictly positive.
    pub fn new(kind: FeatureKind, onsets: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if onsets.len() != values.len() {
            return Err(Error::Shape(format!(
                "{} onsets but {} values",
                onsets.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("value {i} is not finite")));
        }
        if kind == FeatureKind::Tempo {
            if let Some(i) = values.iter().position(|&v| v <= 0.0) {
                return Err(Error::Domain(format!(
                    "tempo value {i} is {} (must be positive)",
                    values[i]
                )));
            }
        }
        Ok(ExpressionCurve {
            kind,
            standardization: StandardizationKind::None,
            onsets,
            values,
        })
    }

    /// Same positions, new values, tagged with the standardization applied.
    pub(crate) fn standardized(&self, standardization: StandardizationKind, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), self.values.len());
        ExpressionCurve {
            kind: self.kind,
            standardization,
            onsets: self.onsets.clone(),
            values,
        }
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn standardization(&self) -> StandardizationKind {
        self.standardization
    }

    pub fn onsets(&self) -> &[f64] {
        &self.onsets
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Dimension count.
    pub fn d(&self) -> usize {
        self.values.len()
    }

    /// Error unless `other` lives on the same positions.
    pub fn check_same_shape(&self, other: &ExpressionCurve) -> Result<()> {
        if self.d() != other.d() {
            return Err(Error::Shape(format!("d = {} vs d = {}", self.d(), other.d())));
        }
        if self.onsets != other.onsets {
            return Err(Error::Shape("curves have different onsets".into()));
        }
        Ok(())
    }

    /// Restriction to the given dimension indices.
    pub fn select(&self, indices: &[usize]) -> ExpressionCurve {
        ExpressionCurve {
            kind: self.kind,
            standardization: self.standardization,
            onsets: indices.iter().map(|&i| self.onsets[i]).collect(),
            values: indices.iter().map(|&i| self.values[i]).collect(),
        }
    }
}

/// Per-note feature values in canonical note order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoteWiseFeature {
    pub kind: FeatureKind,
    pub entries: IndexMap<String, f64>,
}

impl NoteWiseFeature {
    /// Flattens to a curve positioned at each note's score onset.
    pub fn to_curve(&self, record: &PerformanceRecord) -> Result<ExpressionCurve> {
        let mut onsets = Vec::with_capacity(record.notes().len());
        let mut values = Vec::with_capacity(record.notes().len());
        for note in record.notes() {
            let v = self.entries.get(&note.note_id).ok_or_else(|| {
                Error::Shape(format!("no {} entry for note {:?}", self.kind, note.note_id))
            })?;
            onsets.push(note.score_onset);
            values.push(*v);
        }
        if self.entries.len() != values.len() {
            return Err(Error::Shape(format!(
                "{} entries for {} notes",
                self.entries.len(),
                values.len()
            )));
        }
        ExpressionCurve::new(self.kind, onsets, values)
    }

    /// Inverse of [`NoteWiseFeature::to_curve`].
    pub fn from_curve(record: &PerformanceRecord, curve: &ExpressionCurve) -> Result<Self> {
        if curve.d() != record.notes().len() {
            return Err(Error::Shape(format!(
                "curve has {} values for {} notes",
                curve.d(),
                record.notes().len()
            )));
        }
        let entries = record
            .notes()
            .iter()
            .zip(curve.values())
            .map(|(n, v)| (n.note_id.clone(), *v))
            .collect();
        Ok(NoteWiseFeature {
            kind: curve.kind(),
            entries,
        })
    }
}

/// Either shape of extracted feature.
#[derive(Clone, Debug, PartialEq)]
pub enum Feature {
    Curve(ExpressionCurve),
    NoteWise(NoteWiseFeature),
}

impl Feature {
    pub fn kind(&self) -> FeatureKind {
        match self {
            Feature::Curve(c) => c.kind(),
            Feature::NoteWise(n) => n.kind,
        }
    }
}

fn group_mean(notes: &[AlignedNote], group: &OnsetGroup, value: impl Fn(&AlignedNote) -> f64) -> f64 {
    let slice = &notes[group.notes.clone()];
    slice.iter().map(value).sum::<f64>() / slice.len() as f64
}

fn mean_perf_onsets(record: &PerformanceRecord, groups: &[OnsetGroup]) -> Vec<f64> {
    groups
        .iter()
        .map(|g| group_mean(record.notes(), g, |n| n.perf_onset))
        .collect()
}

fn tempo_from_means(groups: &[OnsetGroup], means: &[f64]) -> Result<ExpressionCurve> {
    let mut onsets = Vec::with_capacity(groups.len() - 1);
    let mut values = Vec::with_capacity(groups.len() - 1);
    for (k, pair) in groups.windows(2).enumerate() {
        let value = (means[k + 1] - means[k]) / (pair[1].score_onset - pair[0].score_onset);
        if !(value > 0.0) {
            return Err(Error::NonPositiveTempo {
                segment: k,
                onset: pair[0].score_onset,
            });
        }
        onsets.push(pair[0].score_onset);
        values.push(value);
    }
    ExpressionCurve::new(FeatureKind::Tempo, onsets, values)
}

/// Beat period per segment start: performed IOI of mean onsets over score IOI.
pub fn tempo_curve(perf: &PerformanceRecord) -> Result<ExpressionCurve> {
    let groups = perf.onset_groups();
    let means = mean_perf_onsets(perf, &groups);
    tempo_from_means(&groups, &means)
}

/// Mean MIDI velocity per score onset.
pub fn velocity_curve(perf: &PerformanceRecord) -> Result<ExpressionCurve> {
    let groups = perf.onset_groups();
    let values = groups
        .iter()
        .map(|g| group_mean(perf.notes(), g, |n| f64::from(n.velocity)))
        .collect();
    ExpressionCurve::new(
        FeatureKind::Velocity,
        groups.iter().map(|g| g.score_onset).collect(),
        values,
    )
}

/// Onset deviation from the mean onset of the note's chord, in milliseconds.
pub fn timing_deviations(perf: &PerformanceRecord) -> NoteWiseFeature {
    let groups = perf.onset_groups();
    let mut entries = IndexMap::with_capacity(perf.notes().len());
    for g in &groups {
        let mean = group_mean(perf.notes(), g, |n| n.perf_onset);
        for note in &perf.notes()[g.notes.clone()] {
            let dev = if g.notes.len() == 1 {
                0.0
            } else {
                (note.perf_onset - mean) * 1000.0
            };
            entries.insert(note.note_id.clone(), dev);
        }
    }
    NoteWiseFeature {
        kind: FeatureKind::Timing,
        entries,
    }
}

/// Local beat period for each onset group: the segment starting there, or
/// the last segment for the final onset.
fn beat_periods(tempo: &ExpressionCurve, n_groups: usize) -> Vec<f64> {
    let v = tempo.values();
    (0..n_groups).map(|k| v[k.min(v.len() - 1)]).collect()
}

/// `log2(perf_duration / (score_duration * beat_period))` per note.
pub fn articulation(perf: &PerformanceRecord, tempo: &ExpressionCurve) -> Result<NoteWiseFeature> {
    let groups = perf.onset_groups();
    if tempo.kind() != FeatureKind::Tempo || tempo.d() + 1 != groups.len() {
        return Err(Error::Shape(format!(
            "tempo curve with {} segments does not match {} onsets",
            tempo.d(),
            groups.len()
        )));
    }
    let bp = beat_periods(tempo, groups.len());
    let mut entries = IndexMap::with_capacity(perf.notes().len());
    for (g, bp) in groups.iter().zip(bp) {
        for note in &perf.notes()[g.notes.clone()] {
            entries.insert(
                note.note_id.clone(),
                (note.perf_duration / (note.score_duration * bp)).log2(),
            );
        }
    }
    Ok(NoteWiseFeature {
        kind: FeatureKind::Articulation,
        entries,
    })
}

pub fn extract(perf: &PerformanceRecord, kind: FeatureKind) -> Result<Feature> {
    Ok(match kind {
        FeatureKind::Tempo => Feature::Curve(tempo_curve(perf)?),
        FeatureKind::Velocity => Feature::Curve(velocity_curve(perf)?),
        FeatureKind::Timing => Feature::NoteWise(timing_deviations(perf)),
        FeatureKind::Articulation => Feature::NoteWise(articulation(perf, &tempo_curve(perf)?)?),
    })
}

/// Any feature as a curve; note-wise features are flattened.
pub fn extract_curve(perf: &PerformanceRecord, kind: FeatureKind) -> Result<ExpressionCurve> {
    match extract(perf, kind)? {
        Feature::Curve(c) => Ok(c),
        Feature::NoteWise(n) => n.to_curve(perf),
    }
}

/// A rendered performance and the number of velocities clipped into [1,127].
#[derive(Clone, Debug, PartialEq)]
pub struct Rendered {
    pub record: PerformanceRecord,
    pub clipped: usize,
}

fn check_grid(target: &ExpressionCurve, expected: &[f64]) -> Result<()> {
    if target.onsets() != expected {
        return Err(Error::Shape(format!(
            "{} target has {} dimensions, base expects {}",
            target.kind(),
            target.d(),
            expected.len()
        )));
    }
    if target.standardization() != StandardizationKind::None {
        return Err(Error::Shape("cannot render a standardized curve".into()));
    }
    Ok(())
}

/// Returns `base` with one feature replaced by `target`.
pub fn render_performance(base: &PerformanceRecord, target: &Feature) -> Result<Rendered> {
    let groups = base.onset_groups();
    let mut notes = base.notes().to_vec();
    let mut clipped = 0;
    match target {
        Feature::Curve(curve) => match curve.kind() {
            FeatureKind::Tempo => render_tempo(base, &groups, curve, &mut notes)?,
            FeatureKind::Velocity => clipped = render_velocity(&groups, curve, &mut notes)?,
            other => {
                let nw = NoteWiseFeature::from_curve(base, curve)
                    .map_err(|e| Error::Shape(format!("{other} curve: {e}")))?;
                return render_performance(base, &Feature::NoteWise(nw));
            }
        },
        Feature::NoteWise(nw) => {
            if nw.entries.len() != notes.len()
                || notes.iter().any(|n| !nw.entries.contains_key(&n.note_id))
            {
                return Err(Error::Shape(format!(
                    "{} target must have exactly one entry per base note",
                    nw.kind
                )));
            }
            match nw.kind {
                FeatureKind::Timing => render_timing(&groups, nw, &mut notes),
                FeatureKind::Articulation => render_articulation(base, &groups, nw, &mut notes)?,
                other => {
                    return Err(Error::Shape(format!("{other} is an onset-wise feature")));
                }
            }
        }
    }
    let record = PerformanceRecord::new(base.performer_id(), base.piece_id(), notes)?;
    Ok(Rendered { record, clipped })
}

fn render_tempo(
    base: &PerformanceRecord,
    groups: &[OnsetGroup],
    target: &ExpressionCurve,
    notes: &mut [AlignedNote],
) -> Result<()> {
    let old_tempo = tempo_curve(base)?;
    check_grid(target, old_tempo.onsets())?;
    let old_means = mean_perf_onsets(base, groups);
    let mut new_means = Vec::with_capacity(groups.len());
    new_means.push(old_means[0]);
    for (k, pair) in groups.windows(2).enumerate() {
        let ioi = pair[1].score_onset - pair[0].score_onset;
        new_means.push(new_means[k] + target.values()[k] * ioi);
    }
    let old_bp = beat_periods(&old_tempo, groups.len());
    let new_bp = beat_periods(target, groups.len());
    for (k, g) in groups.iter().enumerate() {
        let shift = new_means[k] - old_means[k];
        let stretch = new_bp[k] / old_bp[k];
        for note in &mut notes[g.notes.clone()] {
            note.perf_onset += shift;
            // keeps articulation unchanged under the new beat period
            note.perf_duration *= stretch;
        }
    }
    Ok(())
}

/// Shifts every velocity at an onset so the integer sum matches the target
/// mean as closely as possible; per-note offsets move by at most one step.
fn render_velocity(groups: &[OnsetGroup], target: &ExpressionCurve, notes: &mut [AlignedNote]) -> Result<usize> {
    let grid: Vec<f64> = groups.iter().map(|g| g.score_onset).collect();
    check_grid(target, &grid)?;
    let mut clipped = 0;
    for (g, &t) in groups.iter().zip(target.values()) {
        let chord = &mut notes[g.notes.clone()];
        let n = chord.len() as i64;
        let current: i64 = chord.iter().map(|x| i64::from(x.velocity)).sum();
        let wanted = (t * n as f64).round() as i64;
        let delta = wanted - current;
        let (each, rem) = (delta.div_euclid(n), delta.rem_euclid(n));
        for (i, note) in chord.iter_mut().enumerate() {
            let v = i64::from(note.velocity) + each + i64::from((i as i64) < rem);
            let c = v.clamp(1, 127);
            if c != v {
                clipped += 1;
            }
            note.velocity = c as u8;
        }
    }
    Ok(clipped)
}

fn render_timing(groups: &[OnsetGroup], target: &NoteWiseFeature, notes: &mut [AlignedNote]) {
    for g in groups {
        let chord = &mut notes[g.notes.clone()];
        let mean = chord.iter().map(|n| n.perf_onset).sum::<f64>() / chord.len() as f64;
        let devs: Vec<f64> = chord.iter().map(|n| target.entries[&n.note_id]).collect();
        let centre = devs.iter().sum::<f64>() / devs.len() as f64;
        for (note, dev) in chord.iter_mut().zip(devs) {
            note.perf_onset = mean + (dev - centre) / 1000.0;
        }
    }
}

fn render_articulation(
    base: &PerformanceRecord,
    groups: &[OnsetGroup],
    target: &NoteWiseFeature,
    notes: &mut [AlignedNote],
) -> Result<()> {
    let bp = beat_periods(&tempo_curve(base)?, groups.len());
    for (g, bp) in groups.iter().zip(bp) {
        for note in &mut notes[g.notes.clone()] {
            let a = target.entries[&note.note_id];
            if !a.is_finite() {
                return Err(Error::Domain(format!("articulation of {:?} is not finite", note.note_id)));
            }
            note.perf_duration = a.exp2() * note.score_duration * bp;
        }
    }
    Ok(())
}

/// JSON form of an onset-wise (or flattened) curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveDocument {
    pub piece_id: String,
    pub performer_id: String,
    pub kind: FeatureKind,
    pub onsets: Vec<f64>,
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub randomization: Option<RandomizationMeta>,
}

impl CurveDocument {
    pub fn new(piece_id: &str, performer_id: &str, curve: &ExpressionCurve) -> Self {
        CurveDocument {
            piece_id: piece_id.to_string(),
            performer_id: performer_id.to_string(),
            kind: curve.kind(),
            onsets: curve.onsets().to_vec(),
            values: curve.values().to_vec(),
            randomization: None,
        }
    }

    pub fn to_curve(&self) -> Result<ExpressionCurve> {
        ExpressionCurve::new(self.kind, self.onsets.clone(), self.values.clone())
    }
}

/// JSON form of a note-wise feature: `{kind, entries: {note_id: value}}`.
pub type NoteWiseDocument = NoteWiseFeature;

/// Reads either JSON shape into a [`Feature`].
pub fn feature_from_json(json: &str) -> Result<Feature> {
    let value: serde_json::Value = serde_json::from_str(json)?;
    if value.get("entries").is_some() {
        Ok(Feature::NoteWise(serde_json::from_value(value)?))
    } else {
        let doc: CurveDocument = serde_json::from_value(value)?;
        Ok(Feature::Curve(doc.to_curve()?))
    }
}
