//! Reconstruction-error evaluation of expressive piano performance models.
//!
//! The crate is organised bottom-up:
//!
//! - [`perfalign`] reads and writes score-aligned performances (perfalign v1)
//!   and groups them into per-piece corpora.
//! - [`features`] extracts tempo, velocity, timing and articulation and
//!   renders modified feature values back into performances.
//! - [`metric`] holds the standardizations, MSE, Pearson correlation,
//!   quantile partitions and the exact binomial outcome probability.
//! - [`randomizer`] samples quantile-Gaussian "unmusical" curves and
//!   calibrates their noise level against a target identification rate.
//! - [`evaluation`] runs the two-model comparison, reliability and validity
//!   statistics, the excerpt scanner and the full experiment grid.
//! - [`report`] formats grid results as TSV.
//! - [`synth`] generates synthetic corpora for tests and demos.

pub mod error;
pub mod evaluation;
pub mod features;
pub mod metric;
pub mod perfalign;
pub mod randomizer;
pub mod report;
pub mod seed;
pub mod synth;

pub use error::{Error, Result};
pub use features::{ExpressionCurve, Feature, FeatureKind, NoteWiseFeature};
pub use metric::{QuantilePartition, QuantileScheme, StandardizationKind};
pub use perfalign::{AlignedNote, PerformanceRecord, PieceCorpus};
