use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use expeval::evaluation::{excerpt_curves, excerpt_scan, run_experiment_grid, GridConfig};
use expeval::features::{self, extract_curve, feature_from_json, render_performance, CurveDocument};
use expeval::metric::{binomial_exact_probability, format_percent, quantile_partition};
use expeval::perfalign::{list_performance_files, parse_performance, performer_id_of, write_performance, write_piece_dir};
use expeval::randomizer::{
    average_curve, average_std, calibrate_noise_level, identification_rate, sample_randomized_curve,
    CalibrationSettings, RandomizationConfig, RandomizationMeta,
};
use expeval::report::{cells_tsv, table_tsv};
use expeval::synth::{generate_corpora, SynthConfig};
use expeval::{seed, Error, ExpressionCurve, Feature, FeatureKind, PerformanceRecord, PieceCorpus};
use serde_json::{json, Value};

use crate::{
    BinomArgs, CalibrateArgs, EvaluateArgs, ExcerptArgs, ExtractArgs, Format, RenderArgs, SampleArgs, ScanArgs, SynthArgs,
};

pub const EXIT_INPUT: u8 = 2;
pub const EXIT_NOTHING_EVALUATED: u8 = 3;
pub const EXIT_INFEASIBLE: u8 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub messages: Vec<String>,
}

impl CliError {
    fn input(message: impl Display) -> Self {
        CliError {
            code: EXIT_INPUT,
            messages: vec![message.to_string()],
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::CalibrationInfeasible(_) => EXIT_INFEASIBLE,
            _ => EXIT_INPUT,
        };
        CliError {
            code,
            messages: vec![e.to_string()],
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn with_path<T>(path: &Path, r: expeval::Result<T>) -> CliResult<T> {
    r.map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn dir_name(dir: &Path) -> String {
    dir.canonicalize()
        .ok()
        .as_deref()
        .unwrap_or(dir)
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Parses every perfalign file of a piece directory, reporting each bad
/// file by path.
fn read_performances(dir: &Path) -> CliResult<(String, Vec<PerformanceRecord>)> {
    let piece = dir_name(dir);
    let files = with_path(dir, list_performance_files(dir))?;
    if files.is_empty() {
        return Err(CliError::input(format!("no performances found in {}", dir.display())));
    }
    let mut records = Vec::new();
    let mut messages = Vec::new();
    for path in files {
        let parsed = fs::read_to_string(&path)
            .map_err(|e| e.to_string())
            .and_then(|text| parse_performance(&text, &performer_id_of(&path), &piece).map_err(|e| e.to_string()));
        match parsed {
            Ok(r) => records.push(r),
            Err(e) => messages.push(format!("{}: {e}", path.display())),
        }
    }
    if messages.is_empty() {
        Ok((piece, records))
    } else {
        Err(CliError {
            code: EXIT_INPUT,
            messages,
        })
    }
}

fn read_piece(dir: &Path) -> CliResult<PieceCorpus> {
    let (piece, records) = read_performances(dir)?;
    with_path(dir, PieceCorpus::from_records(piece, records))
}

fn write_file(path: &Path, contents: &str) -> CliResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::input(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, contents).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

/// Prints an object as pretty JSON or as `key<TAB>value` lines.
fn emit(value: &Value, format: Format) {
    match format {
        Format::Json => print!("{}", to_json(value)),
        Format::Tsv => {
            if let Value::Object(map) = value {
                for (k, v) in map {
                    match v {
                        Value::String(s) => println!("{k}\t{s}"),
                        other => println!("{k}\t{other}"),
                    }
                }
            } else {
                println!("{value}");
            }
        }
    }
}

fn expert_curves(corpus: &PieceCorpus, kind: FeatureKind, excerpt: ExcerptArgs) -> CliResult<Vec<ExpressionCurve>> {
    let curves = match (excerpt.start_measure, excerpt.measures) {
        (Some(start), Some(len)) => excerpt_curves(corpus, kind, start, len)?,
        _ => corpus
            .performances()
            .iter()
            .map(|p| extract_curve(p, kind))
            .collect::<expeval::Result<_>>()?,
    };
    Ok(curves)
}

fn excerpt_json(excerpt: ExcerptArgs) -> Value {
    match (excerpt.start_measure, excerpt.measures) {
        (Some(start), Some(len)) => json!({ "start_measure": start, "measures": len }),
        _ => Value::Null,
    }
}

pub fn extract(args: &ExtractArgs, format: Format) -> CliResult {
    let (piece, records) = read_performances(&args.input)?;
    let mut written = Vec::new();
    for perf in &records {
        for &kind in &args.features {
            let feature = features::extract(perf, kind).map_err(|e| CliError::input(format!("{}: {e}", perf.performer_id())))?;
            let body = match &feature {
                Feature::Curve(c) => to_json(&CurveDocument::new(&piece, perf.performer_id(), c)),
                Feature::NoteWise(n) => to_json(n),
            };
            let path = args.output.join(format!("{}.{kind}.json", perf.performer_id()));
            write_file(&path, &body)?;
            written.push(path.display().to_string());
        }
    }
    match format {
        Format::Json => print!("{}", to_json(&written)),
        Format::Tsv => written.iter().for_each(|p| println!("{p}")),
    }
    Ok(())
}

pub fn calibrate(args: &CalibrateArgs, format: Format) -> CliResult {
    let corpus = read_piece(&args.input)?;
    let experts = expert_curves(&corpus, args.feature, args.excerpt)?;
    let settings = CalibrationSettings {
        scheme: args.rate.scheme,
        target: args.target,
        tolerance: args.tolerance,
        standardization: args.rate.standardization,
        mc_samples: args.rate.mc_samples,
        seed: seed::derive_seed(args.seed, "calibrate", &[seed::tag(corpus.piece_id())]),
    };
    let result = calibrate_noise_level(&experts, &settings)?;
    let mut out = json!({
        "piece_id": corpus.piece_id(),
        "feature": args.feature,
        "excerpt": excerpt_json(args.excerpt),
        "n_experts": experts.len(),
        "d": experts[0].d(),
        "target": args.target,
        "tolerance": args.tolerance,
        "scheme": args.rate.scheme,
        "standardization": args.rate.standardization,
        "seed": args.seed,
        "sigma": result.sigma,
        "achieved_rate": result.achieved_rate,
        "iterations": result.iterations,
        "mc_samples": result.mc_samples,
        "sigma_bar": result.sigma_bar,
        "converged": result.converged,
        "non_monotone": result.non_monotone,
    });
    if let Some(n) = args.verify_samples {
        let verify_seed = args.verify_seed.unwrap_or(args.seed.wrapping_add(1));
        let rate = identification_rate(
            &experts,
            settings.scheme,
            result.sigma,
            settings.standardization,
            n,
            seed::derive_seed(verify_seed, "calibrate", &[seed::tag(corpus.piece_id())]),
        )?;
        out["verification"] = json!({ "mc_samples": n, "seed": verify_seed, "rate": rate });
    }
    emit(&out, format);
    Ok(())
}

pub fn sample(args: &SampleArgs, format: Format) -> CliResult {
    let corpus = read_piece(&args.input)?;
    let experts = expert_curves(&corpus, args.feature, args.excerpt)?;
    let (scheme, std) = (args.rate.scheme, args.rate.standardization);
    let piece_tag = [seed::tag(corpus.piece_id())];
    let sigma = match (args.sigma, args.target) {
        (Some(s), _) => s,
        (None, Some(target)) => {
            let settings = CalibrationSettings {
                scheme,
                target,
                tolerance: args.tolerance,
                standardization: std,
                mc_samples: args.rate.mc_samples,
                seed: seed::derive_seed(args.seed, "calibrate", &piece_tag),
            };
            calibrate_noise_level(&experts, &settings)?.sigma
        }
        (None, None) => unreachable!("clap enforces one of --sigma/--target"),
    };
    let sample_seed = seed::derive_seed(args.seed, "sample", &piece_tag);
    let avg = average_curve(&experts)?;
    let partition = quantile_partition(&avg, scheme)?;
    let config = RandomizationConfig::new(scheme, sigma, sample_seed, args.count)?;
    let mut written = Vec::new();
    for j in 0..args.count {
        let curve = sample_randomized_curve(&avg, &partition, &config, j)?;
        let mut doc = CurveDocument::new(corpus.piece_id(), &format!("random_{j:03}"), &curve);
        doc.randomization = Some(RandomizationMeta {
            scheme,
            sigma,
            seed: sample_seed,
            index: j,
        });
        let path = args.output.join(format!("random_{j:03}.{}.json", args.feature));
        write_file(&path, &to_json(&doc))?;
        written.push(path.display().to_string());
    }
    // rate of exactly the curves written above
    let rate = identification_rate(&experts, scheme, sigma, std, args.count, sample_seed)?;
    emit(
        &json!({
            "piece_id": corpus.piece_id(),
            "feature": args.feature,
            "excerpt": excerpt_json(args.excerpt),
            "scheme": scheme,
            "standardization": std,
            "sigma": sigma,
            "sigma_bar": average_std(&experts)?,
            "seed": args.seed,
            "count": args.count,
            "identification_rate": rate,
            "files": written,
        }),
        format,
    );
    Ok(())
}

fn piece_dirs(root: &Path) -> CliResult<Vec<PathBuf>> {
    let entries = fs::read_dir(root).map_err(|e| CliError::input(format!("{}: {e}", root.display())))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    Ok(dirs)
}

pub fn evaluate(args: &EvaluateArgs, format: Format) -> CliResult {
    let dirs = piece_dirs(&args.input)?;
    let mut corpora = Vec::new();
    let mut composers = BTreeMap::new();
    let mut skipped = Vec::new();
    let mut messages = Vec::new();
    for dir in &dirs {
        let piece = dir_name(dir);
        match read_performances(dir) {
            Ok((piece, records)) => match PieceCorpus::from_records(piece.clone(), records) {
                Ok(c) => corpora.push(c),
                Err(e @ Error::CorpusTooSmall(_)) => {
                    log::warn!("skipping {piece}: {e}");
                    skipped.push(json!({ "piece_id": piece, "reason": e.to_string() }));
                }
                Err(e) => messages.push(format!("{}: {e}", dir.display())),
            },
            Err(e) => messages.extend(e.messages),
        }
        if let Ok(name) = fs::read_to_string(dir.join("composer.txt")) {
            composers.insert(piece, name.trim().to_string());
        }
    }
    if !messages.is_empty() {
        return Err(CliError {
            code: EXIT_INPUT,
            messages,
        });
    }
    if corpora.is_empty() && skipped.is_empty() {
        return Err(CliError::input(format!("no pieces found in {}", args.input.display())));
    }

    let config = GridConfig {
        features: args.features.clone(),
        standardizations: args.standardizations.clone(),
        randoms_per_piece: args.randoms,
        scheme: args.scheme,
        seed: args.seed,
    };
    let grid = run_experiment_grid(&corpora, &config);
    let join = |xs: Vec<String>| xs.join(",");
    let header = vec![
        format!("expeval {}", env!("CARGO_PKG_VERSION")),
        "command: evaluate".to_string(),
        format!("features: {}", join(grid.config.features.iter().map(|f| f.to_string()).collect())),
        format!(
            "standardizations: {}",
            join(grid.config.standardizations.iter().map(|s| s.to_string()).collect())
        ),
        format!("scheme: {}", grid.config.scheme),
        "noise_level: average expert standard deviation".to_string(),
        format!("randoms_per_piece: {}", grid.config.randoms_per_piece),
        format!("seed: {}", grid.config.seed),
        format!("pieces: {}", corpora.len() + skipped.len()),
    ];
    for &std in &grid.config.standardizations {
        let path = args.output.join(format!("report_{std}.tsv"));
        write_file(&path, &table_tsv(&grid, std, &composers, &header))?;
    }
    write_file(&args.output.join("cells.tsv"), &cells_tsv(&grid))?;
    let report = json!({
        "tool_version": env!("CARGO_PKG_VERSION"),
        "config": grid.config,
        "skipped": skipped,
        "datasets": grid.datasets,
        "cells": grid.cells,
    });
    write_file(&args.output.join("report.json"), &to_json(&report))?;

    let succeeded = grid.succeeded();
    let summary: Vec<Value> = grid
        .datasets
        .iter()
        .map(|d| {
            json!({
                "feature": d.feature,
                "standardization": d.standardization,
                "pieces": d.per_piece.len(),
                "failures": d.failures.len(),
                "reliability": d.aggregate.as_ref().map(|a| a.reliability),
                "validity_error": d.aggregate.as_ref().map(|a| a.validity_error),
            })
        })
        .collect();
    match format {
        Format::Json => print!(
            "{}",
            to_json(&json!({ "cells": grid.cells.len(), "succeeded": succeeded, "datasets": summary }))
        ),
        Format::Tsv => {
            println!("feature\tstandardization\tpieces\tfailures\treliability\tvalidity_pct");
            for d in &grid.datasets {
                let (rel, val) = d
                    .aggregate
                    .as_ref()
                    .map_or(("NA".to_string(), "NA".to_string()), |a| {
                        (format!("{:.2}", a.reliability), format!("{:.1}", 100.0 * a.validity_error))
                    });
                println!(
                    "{}\t{}\t{}\t{}\t{rel}\t{val}",
                    d.feature,
                    d.standardization,
                    d.per_piece.len(),
                    d.failures.len()
                );
            }
        }
    }
    log::info!("{} experiment cells, {succeeded} piece reports", grid.cells.len());
    if succeeded == 0 {
        return Err(CliError {
            code: EXIT_NOTHING_EVALUATED,
            messages: vec!["no piece could be evaluated".into()],
        });
    }
    Ok(())
}

pub fn scan(args: &ScanArgs, format: Format) -> CliResult {
    let corpus = read_piece(&args.input)?;
    let mut scores = excerpt_scan(&corpus, args.feature, args.window, args.min_onsets)?;
    if let Some(top) = args.top {
        scores.truncate(top);
    }
    match format {
        Format::Json => print!("{}", to_json(&scores)),
        Format::Tsv => {
            println!("start_measure\tmeasures\tn_onsets\tmean_correlation\tpairs");
            for s in &scores {
                println!(
                    "{}\t{}\t{}\t{:.4}\t{}",
                    s.start_measure, s.length, s.n_onsets, s.mean_correlation, s.pairs
                );
            }
        }
    }
    Ok(())
}

pub fn render(args: &RenderArgs, format: Format) -> CliResult {
    let text = fs::read_to_string(&args.base).map_err(|e| CliError::input(format!("{}: {e}", args.base.display())))?;
    let piece = args.base.parent().map(dir_name).unwrap_or_default();
    let base = with_path(&args.base, parse_performance(&text, &performer_id_of(&args.base), &piece))?;
    let json = fs::read_to_string(&args.target).map_err(|e| CliError::input(format!("{}: {e}", args.target.display())))?;
    let target = with_path(&args.target, feature_from_json(&json))?;
    if let Some(kind) = args.feature {
        if kind != target.kind() {
            return Err(CliError::input(format!(
                "{}: holds a {} feature, expected {kind}",
                args.target.display(),
                target.kind()
            )));
        }
    }
    let rendered = render_performance(&base, &target)?;
    if rendered.clipped > 0 {
        log::warn!("{} velocities clipped to [1, 127]", rendered.clipped);
    }
    write_file(&args.output, &write_performance(&rendered.record)?)?;
    emit(
        &json!({
            "output": args.output.display().to_string(),
            "feature": target.kind(),
            "clipped": rendered.clipped,
        }),
        format,
    );
    Ok(())
}

pub fn synth(args: &SynthArgs, format: Format) -> CliResult {
    let config = SynthConfig {
        pieces: args.pieces,
        performers: args.performers.clone(),
        onsets: args.onsets.clone(),
        dispersion: args.dispersion,
        seed: args.seed,
    };
    if !(config.dispersion >= 0.0 && config.dispersion.is_finite()) {
        return Err(CliError::input("dispersion must be a finite non-negative number"));
    }
    let corpora = generate_corpora(&config)?;
    let mut rows = Vec::new();
    for c in &corpora {
        write_piece_dir(c, &args.output.join(c.piece_id()))?;
        rows.push(json!({
            "piece_id": c.piece_id(),
            "performers": c.performances().len(),
            "onsets": c.onset_grid().len(),
        }));
    }
    match format {
        Format::Json => print!("{}", to_json(&rows)),
        Format::Tsv => {
            println!("piece\tperformers\tonsets");
            for c in &corpora {
                println!("{}\t{}\t{}", c.piece_id(), c.performances().len(), c.onset_grid().len());
            }
        }
    }
    Ok(())
}

pub fn binom(args: &BinomArgs, format: Format) -> CliResult {
    let p = binomial_exact_probability(args.n, args.k)?;
    match format {
        Format::Json => print!(
            "{}",
            to_json(&json!({ "n": args.n, "k": args.k, "probability": p, "percent": format_percent(p) }))
        ),
        Format::Tsv => println!("{}", format_percent(p)),
    }
    Ok(())
}
