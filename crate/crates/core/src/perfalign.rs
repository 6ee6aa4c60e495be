//! The perfalign v1 format: one score-aligned performance per file.
//!
//! ```text
//! #perfalign v1
//! # note_id  pitch  measure  score_onset  score_duration  perf_onset  perf_duration  velocity
//! n1	60	1	0.0	1.0	0.512	0.43	64
//! ```
//!
//! Columns are tab separated. Lines starting with `#` after the header are
//! comments and blank lines are ignored. Decimals use `.` and plain
//! positional notation; exponents, `inf` and `nan` are rejected.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HEADER: &str = "#perfalign v1";
const COLUMNS: &str =
    "# note_id\tpitch\tmeasure\tscore_onset\tscore_duration\tperf_onset\tperf_duration\tvelocity";
const N_COLUMNS: usize = 8;

/// File extension used for perfalign files inside a piece directory.
pub const EXTENSION: &str = "tsv";

/// One performed note matched to its score note.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignedNote {
    pub note_id: String,
    pub pitch: u8,
    pub measure: u32,
    /// Beats.
    pub score_onset: f64,
    /// Beats.
    pub score_duration: f64,
    /// Seconds.
    pub perf_onset: f64,
    /// Seconds.
    pub perf_duration: f64,
    pub velocity: u8,
}

impl AlignedNote {
    fn violations(&self, at: &str, out: &mut Vec<String>) {
        integer_violations(
            at,
            i64::from(self.pitch),
            i64::from(self.measure),
            i64::from(self.velocity),
            out,
        );
        self.field_violations(at, out);
    }

    fn field_violations(&self, at: &str, out: &mut Vec<String>) {
        if self.note_id.is_empty() || self.note_id.contains(['\t', '\n', '\r']) {
            out.push(format!("{at}: invalid note_id {:?}", self.note_id));
        }
        if !(self.score_onset.is_finite() && self.score_onset >= 0.0) {
            out.push(format!("{at}: score_onset {} must be non-negative", self.score_onset));
        }
        if !(self.score_duration.is_finite() && self.score_duration > 0.0) {
            out.push(format!("{at}: score_duration {} must be positive", self.score_duration));
        }
        if !self.perf_onset.is_finite() {
            out.push(format!("{at}: perf_onset is not finite"));
        }
        if !(self.perf_duration.is_finite() && self.perf_duration > 0.0) {
            out.push(format!("{at}: perf_duration {} must be positive", self.perf_duration));
        }
    }

    /// Score-side identity of the note, shared by every performance of a piece.
    fn score_side(&self) -> (u8, u32, u64, u64) {
        (
            self.pitch,
            self.measure,
            self.score_onset.to_bits(),
            self.score_duration.to_bits(),
        )
    }
}

fn integer_violations(at: &str, pitch: i64, measure: i64, velocity: i64, out: &mut Vec<String>) {
    if !(0..=127).contains(&pitch) {
        out.push(format!("{at}: pitch {pitch} outside [0,127]"));
    }
    if !(1..=i64::from(u32::MAX)).contains(&measure) {
        out.push(format!("{at}: measure {measure} must be positive"));
    }
    if !(1..=127).contains(&velocity) {
        out.push(format!("{at}: velocity {velocity} outside [1,127]"));
    }
}

fn canonical_order(a: &AlignedNote, b: &AlignedNote) -> Ordering {
    a.score_onset
        .total_cmp(&b.score_onset)
        .then(a.pitch.cmp(&b.pitch))
        .then_with(|| a.note_id.cmp(&b.note_id))
}

/// A full performance of a piece, notes sorted by `(score_onset, pitch, note_id)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerformanceRecord {
    performer_id: String,
    piece_id: String,
    notes: Vec<AlignedNote>,
}

impl PerformanceRecord {
    /// Validates every note, sorts into canonical order and checks that the
    /// record has at least two distinct score onsets.
    pub fn new(
        performer_id: impl Into<String>,
        piece_id: impl Into<String>,
        mut notes: Vec<AlignedNote>,
    ) -> Result<Self> {
        let mut violations = Vec::new();
        for (i, note) in notes.iter().enumerate() {
            note.violations(&format!("note {} ({:?})", i + 1, note.note_id), &mut violations);
        }
        check_unique_ids(notes.iter().map(|n| n.note_id.as_str()), &mut violations);
        if !violations.is_empty() {
            return Err(Error::Validation { violations });
        }
        notes.sort_by(canonical_order);
        let record = PerformanceRecord {
            performer_id: performer_id.into(),
            piece_id: piece_id.into(),
            notes,
        };
        let onsets = record.onset_groups().len();
        if onsets < 2 {
            return Err(Error::Validation {
                violations: vec![format!(
                    "need at least 2 distinct score onsets, found {onsets}"
                )],
            });
        }
        Ok(record)
    }

    pub fn performer_id(&self) -> &str {
        &self.performer_id
    }

    pub fn piece_id(&self) -> &str {
        &self.piece_id
    }

    pub fn notes(&self) -> &[AlignedNote] {
        &self.notes
    }

    /// Contiguous note ranges sharing a score onset, in onset order.
    pub fn onset_groups(&self) -> Vec<OnsetGroup> {
        let mut groups: Vec<OnsetGroup> = Vec::new();
        for (i, note) in self.notes.iter().enumerate() {
            match groups.last_mut() {
                Some(g) if g.score_onset == note.score_onset => g.notes.end = i + 1,
                _ => groups.push(OnsetGroup {
                    score_onset: note.score_onset,
                    notes: i..i + 1,
                }),
            }
        }
        groups
    }

    /// Sorted distinct score onsets.
    pub fn onset_grid(&self) -> Vec<f64> {
        self.onset_groups().iter().map(|g| g.score_onset).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OnsetGroup {
    pub score_onset: f64,
    pub notes: Range<usize>,
}

fn check_unique_ids<'a>(ids: impl Iterator<Item = &'a str>, violations: &mut Vec<String>) {
    let mut seen = BTreeSet::new();
    let mut reported = BTreeSet::new();
    for id in ids {
        if !seen.insert(id) && reported.insert(id) {
            violations.push(format!("duplicate note_id {id:?}"));
        }
    }
}

fn is_plain_decimal(s: &str) -> bool {
    let digits = s.strip_prefix(['-', '+']).unwrap_or(s);
    let (int, frac) = match digits.split_once('.') {
        Some((i, f)) => (i, f),
        None => (digits, ""),
    };
    (!int.is_empty() || !frac.is_empty())
        && int.bytes().all(|b| b.is_ascii_digit())
        && frac.bytes().all(|b| b.is_ascii_digit())
}

fn parse_decimal(field: &str, name: &str, line: usize) -> Result<f64> {
    if !is_plain_decimal(field) {
        return Err(Error::Row {
            line,
            message: format!("{name}: {field:?} is not a plain decimal"),
        });
    }
    field.parse::<f64>().map_err(|e| Error::Row {
        line,
        message: format!("{name}: {e}"),
    })
}

fn parse_int(field: &str, name: &str, line: usize) -> Result<i64> {
    field.parse::<i64>().map_err(|e| Error::Row {
        line,
        message: format!("{name}: {field:?} {e}"),
    })
}

/// Formats a float in positional notation with the shortest digits that
/// parse back to the same value.
pub fn format_decimal(x: f64) -> String {
    let s = format!("{x}");
    if s.contains('.') {
        s
    } else {
        s + ".0"
    }
}

pub fn parse_performance(text: &str, performer_id: &str, piece_id: &str) -> Result<PerformanceRecord> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let mut lines = text.lines().enumerate();
    let header = lines.next().map(|(_, l)| l.trim_end_matches('\r')).unwrap_or("");
    if header != HEADER {
        return Err(Error::FormatVersion {
            found: header.to_string(),
        });
    }

    let mut notes = Vec::new();
    let mut violations = Vec::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        let row = raw.trim_end_matches('\r');
        if row.starts_with('#') || row.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = row.split('\t').collect();
        if fields.len() != N_COLUMNS {
            return Err(Error::Row {
                line,
                message: format!("expected {N_COLUMNS} columns, found {}", fields.len()),
            });
        }
        let pitch = parse_int(fields[1], "pitch", line)?;
        let measure = parse_int(fields[2], "measure", line)?;
        let velocity = parse_int(fields[7], "velocity", line)?;
        let at = format!("line {line}");
        integer_violations(&at, pitch, measure, velocity, &mut violations);
        let note = AlignedNote {
            note_id: fields[0].to_string(),
            pitch: pitch.clamp(0, 127) as u8,
            measure: measure.clamp(1, i64::from(u32::MAX)) as u32,
            score_onset: parse_decimal(fields[3], "score_onset", line)?,
            score_duration: parse_decimal(fields[4], "score_duration", line)?,
            perf_onset: parse_decimal(fields[5], "perf_onset", line)?,
            perf_duration: parse_decimal(fields[6], "perf_duration", line)?,
            velocity: velocity.clamp(1, 127) as u8,
        };
        note.field_violations(&at, &mut violations);
        notes.push(note);
    }
    check_unique_ids(notes.iter().map(|n| n.note_id.as_str()), &mut violations);
    if !violations.is_empty() {
        return Err(Error::Validation { violations });
    }
    PerformanceRecord::new(performer_id, piece_id, notes)
}

pub fn write_performance(record: &PerformanceRecord) -> Result<String> {
    if record.notes.is_empty() {
        return Err(Error::RefusedWrite("performance has no notes".into()));
    }
    let mut out = String::with_capacity(64 * (record.notes.len() + 2));
    out.push_str(HEADER);
    out.push('\n');
    out.push_str(COLUMNS);
    out.push('\n');
    for n in &record.notes {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            n.note_id,
            n.pitch,
            n.measure,
            format_decimal(n.score_onset),
            format_decimal(n.score_duration),
            format_decimal(n.perf_onset),
            format_decimal(n.perf_duration),
            n.velocity
        );
    }
    Ok(out)
}

/// All performances of one piece over a shared score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PieceCorpus {
    piece_id: String,
    performances: Vec<PerformanceRecord>,
    onset_grid: Vec<f64>,
}

impl PieceCorpus {
    pub fn from_records(piece_id: impl Into<String>, performances: Vec<PerformanceRecord>) -> Result<Self> {
        if performances.len() < 2 {
            return Err(Error::CorpusTooSmall(performances.len()));
        }
        let score_side = |p: &PerformanceRecord| -> BTreeMap<String, (u8, u32, u64, u64)> {
            p.notes
                .iter()
                .map(|n| (n.note_id.clone(), n.score_side()))
                .collect()
        };
        let reference = score_side(&performances[0]);
        for perf in &performances[1..] {
            let other = score_side(perf);
            if other == reference {
                continue;
            }
            let ids: BTreeSet<&String> = reference.keys().chain(other.keys()).collect();
            let divergent = ids
                .into_iter()
                .find(|id| reference.get(*id) != other.get(*id))
                .expect("maps differ");
            return Err(Error::ScoreMismatch {
                performer: perf.performer_id.clone(),
                note_id: divergent.clone(),
            });
        }
        let onset_grid = performances[0].onset_grid();
        Ok(PieceCorpus {
            piece_id: piece_id.into(),
            performances,
            onset_grid,
        })
    }

    pub fn piece_id(&self) -> &str {
        &self.piece_id
    }

    pub fn performances(&self) -> &[PerformanceRecord] {
        &self.performances
    }

    pub fn onset_grid(&self) -> &[f64] {
        &self.onset_grid
    }
}

/// Parses `(performer_id, text)` pairs into a verified corpus.
pub fn load_corpus(piece_id: &str, files: &[(String, String)]) -> Result<PieceCorpus> {
    if files.len() < 2 {
        return Err(Error::CorpusTooSmall(files.len()));
    }
    let records = files
        .iter()
        .map(|(performer, text)| parse_performance(text, performer, piece_id))
        .collect::<Result<Vec<_>>>()?;
    PieceCorpus::from_records(piece_id, records)
}

/// perfalign files in `dir`, sorted by name.
pub fn list_performance_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == EXTENSION) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Performer id for a perfalign file: its stem.
pub fn performer_id_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Loads a piece directory; the piece id is the directory name.
pub fn read_piece_dir(dir: &Path) -> Result<PieceCorpus> {
    let piece_id = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut files = Vec::new();
    for path in list_performance_files(dir)? {
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        files.push((performer_id_of(&path), text));
    }
    load_corpus(&piece_id, &files)
}

/// Writes every performance of `corpus` into `dir` as `<performer>.tsv`.
pub fn write_piece_dir(corpus: &PieceCorpus, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for perf in corpus.performances() {
        let path = dir.join(format!("{}.{EXTENSION}", perf.performer_id()));
        std::fs::write(&path, write_performance(perf)?).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
