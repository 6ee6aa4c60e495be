//! Tab-separated report tables.
//!
//! One table per standardization with columns `piece composer n_experts
//! n_onsets` followed by a block of `mse_ee mse_er mse_rr reliability
//! validity_pct` per feature. MSEs and reliability use two decimals,
//! validity is a percentage with one decimal. The last row is the
//! unweighted dataset aggregate.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::evaluation::{Aggregate, GridReport};
use crate::features::FeatureKind;
use crate::metric::StandardizationKind;

const NA: &str = "NA";

fn f2(x: f64) -> String {
    format!("{x:.2}")
}

fn pct1(x: f64) -> String {
    format!("{:.1}", 100.0 * x)
}

/// `header` lines are emitted as `#` comments before the column row.
pub fn table_tsv(
    grid: &GridReport,
    standardization: StandardizationKind,
    composers: &BTreeMap<String, String>,
    header: &[String],
) -> String {
    let features: Vec<FeatureKind> = grid.config.features.clone();
    let mut out = String::new();
    for line in header {
        let _ = writeln!(out, "# {line}");
    }
    let _ = writeln!(out, "# standardization: {standardization}");

    let mut cols = vec!["piece".to_string(), "composer".into(), "n_experts".into(), "n_onsets".into()];
    for f in &features {
        for c in ["mse_ee", "mse_er", "mse_rr", "reliability", "validity_pct"] {
            cols.push(format!("{f}_{c}"));
        }
    }
    let _ = writeln!(out, "{}", cols.join("\t"));

    // piece -> (n_experts, n_onsets), feature -> cells
    let mut pieces: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut blocks: BTreeMap<(String, FeatureKind), [String; 5]> = BTreeMap::new();
    for f in &features {
        let Some(ds) = grid.dataset(*f, standardization) else { continue };
        for p in &ds.per_piece {
            pieces.insert(p.piece_id.clone(), (p.n_experts, p.n_onsets));
            let s = &p.stats;
            blocks.insert(
                (p.piece_id.clone(), *f),
                [
                    f2(s.mean_mse_expert_expert),
                    f2(s.mean_mse_expert_random),
                    s.mean_mse_random_random.map_or(NA.into(), f2),
                    f2(s.reliability),
                    pct1(s.validity_error),
                ],
            );
        }
        for p in &ds.failures {
            pieces.insert(p.piece_id.clone(), (p.n_experts, p.n_onsets));
        }
    }

    let na_block = || std::array::from_fn::<String, 5, _>(|_| NA.to_string());
    for (piece, (n_experts, n_onsets)) in &pieces {
        let mut row = vec![
            piece.clone(),
            composers.get(piece).cloned().unwrap_or_default(),
            n_experts.to_string(),
            n_onsets.to_string(),
        ];
        for f in &features {
            row.extend(blocks.get(&(piece.clone(), *f)).cloned().unwrap_or_else(na_block));
        }
        let _ = writeln!(out, "{}", row.join("\t"));
    }

    let mut row = vec![
        "Dataset".to_string(),
        String::new(),
        pieces.values().map(|p| p.0).sum::<usize>().to_string(),
        pieces.values().map(|p| p.1).sum::<usize>().to_string(),
    ];
    for f in &features {
        let agg: Option<&Aggregate> = grid.dataset(*f, standardization).and_then(|d| d.aggregate.as_ref());
        match agg {
            Some(a) => row.extend([
                f2(a.mean_mse_expert_expert),
                f2(a.mean_mse_expert_random),
                a.mean_mse_random_random.map_or(NA.into(), f2),
                f2(a.reliability),
                pct1(a.validity_error),
            ]),
            None => row.extend(na_block()),
        }
    }
    let _ = writeln!(out, "{}", row.join("\t"));
    out
}

/// One line per experiment cell.
pub fn cells_tsv(grid: &GridReport) -> String {
    let mut out = String::from("feature\tstandardization\ttest\tpiece\tstatus\tvalue\tdefined_bits\n");
    for c in &grid.cells {
        let test = match c.test {
            crate::evaluation::ExperimentTest::Reliability => "reliability",
            crate::evaluation::ExperimentTest::Validity => "validity",
        };
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            c.feature,
            c.standardization,
            test,
            c.piece_id,
            if c.ok { "ok" } else { "failed" },
            c.value.map_or(NA.to_string(), |v| format!("{v:.6}")),
            c.defined_bits
        );
    }
    out
}

/// Pieces listed in a grid, for callers that need the set of ids.
pub fn piece_ids(grid: &GridReport) -> BTreeSet<String> {
    grid.cells.iter().map(|c| c.piece_id.clone()).collect()
}
