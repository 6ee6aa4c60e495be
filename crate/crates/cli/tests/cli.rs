use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn expeval(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_expeval"))
        .args(args)
        .output()
        .expect("spawn expeval")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", stdout(out)))
}

fn synth(root: &Path, extra: &[&str]) {
    let mut args = vec!["synth", "-o", p(root)];
    args.extend_from_slice(extra);
    let out = expeval(&args);
    assert!(out.status.success(), "{}", stderr(&out));
}

/// A single synthetic piece with `n` performers; returns its directory.
fn one_piece(tmp: &TempDir, n: usize) -> std::path::PathBuf {
    let root = tmp.path().join("corpus");
    let n = n.to_string();
    synth(&root, &["--pieces", "1", "--performers", &n, "--onsets", "60", "--seed", "7"]);
    root.join("piece01")
}

fn files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    v.sort();
    v
}

#[test]
fn extract_writes_one_file_per_performance_and_feature() {
    let tmp = TempDir::new().unwrap();
    let piece = one_piece(&tmp, 3);
    let out_dir = tmp.path().join("curves");
    let out = expeval(&["extract", "-i", p(&piece), "--features", "tempo,velocity", "-o", p(&out_dir)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let names = files(&out_dir);
    assert_eq!(
        names,
        ["p01.tempo.json", "p01.velocity.json", "p02.tempo.json", "p02.velocity.json", "p03.tempo.json", "p03.velocity.json"]
    );
    let doc: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("p02.tempo.json")).unwrap()).unwrap();
    assert_eq!(doc["performer_id"], "p02");
    assert_eq!(doc["kind"], "tempo");
    assert_eq!(doc["onsets"].as_array().unwrap().len(), doc["values"].as_array().unwrap().len());
}

#[test]
fn empty_directory_is_an_input_error() {
    let tmp = TempDir::new().unwrap();
    let out = expeval(&["extract", "-i", p(tmp.path()), "-o", p(&tmp.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("no performances found"), "{}", stderr(&out));
}

#[test]
fn corrupt_file_is_named_alone() {
    let tmp = TempDir::new().unwrap();
    let piece = one_piece(&tmp, 4);
    let bad = piece.join("p03.tsv");
    let text = fs::read_to_string(&bad).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    let broken = lines[lines.len() / 2].replace('\t', " ");
    let mid = lines.len() / 2;
    lines[mid] = &broken;
    fs::write(&bad, lines.join("\n") + "\n").unwrap();

    let out = expeval(&["extract", "-i", p(&piece), "-o", p(&tmp.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("p03.tsv"), "{err}");
    for other in ["p01.tsv", "p02.tsv", "p04.tsv"] {
        assert!(!err.contains(other), "{err}");
    }
}

#[test]
fn binom_prints_percent() {
    let out = expeval(&["binom", "--n", "240", "--k", "148"]);
    assert!(out.status.success());
    assert_eq!(stdout(&out).trim(), "0.01%");
    let out = expeval(&["--format", "json", "binom", "--n", "106", "--k", "48"]);
    let v = json(&out);
    assert_eq!(v["percent"], "4.84%");
    assert!((v["probability"].as_f64().unwrap() - 0.0484).abs() < 5e-5);
}

#[test]
fn calibrated_sigma_reproduces_target_rate_on_fresh_samples() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path().join("corpus");
    synth(&root, &["--pieces", "1", "--seed", "7"]);
    let piece = root.join("piece01");
    let cal = expeval(&[
        "--format", "json", "calibrate", "-i", p(&piece), "--feature", "tempo", "--target", "0.5", "--seed", "3",
        "--mc-samples", "5000",
    ]);
    assert!(cal.status.success(), "{}", stderr(&cal));
    let cal = json(&cal);
    assert_eq!(cal["converged"], true);
    let sigma = cal["sigma"].as_f64().unwrap();
    assert!((cal["achieved_rate"].as_f64().unwrap() - 0.5).abs() <= 0.01);

    let out_dir = tmp.path().join("random");
    let sigma_arg = sigma.to_string();
    let s = expeval(&[
        "--format", "json", "sample", "-i", p(&piece), "--feature", "tempo", "--sigma", &sigma_arg, "--count", "5000",
        "--seed", "3", "-o", p(&out_dir),
    ]);
    assert!(s.status.success(), "{}", stderr(&s));
    let s = json(&s);
    let rate = s["identification_rate"].as_f64().unwrap();
    assert!((rate - 0.5).abs() <= 0.02, "rate {rate} at sigma {sigma}");
    assert_eq!(files(&out_dir).len(), 5000);
    let doc: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("random_000.tempo.json")).unwrap()).unwrap();
    assert_eq!(doc["randomization"]["sigma"].as_f64().unwrap(), sigma);
}

#[test]
fn rendering_a_performance_with_its_own_tempo_is_identity() {
    let tmp = TempDir::new().unwrap();
    let piece = one_piece(&tmp, 2);
    let curves = tmp.path().join("curves");
    assert!(expeval(&["extract", "-i", p(&piece), "--features", "tempo", "-o", p(&curves)]).status.success());
    let rendered = tmp.path().join("out").join("p01.tsv");
    let out = expeval(&[
        "render", "--base", p(&piece.join("p01.tsv")), "--target", p(&curves.join("p01.tempo.json")),
        "--feature", "tempo", "-o", p(&rendered),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));

    // compare the perfalign files field by field with a small time tolerance
    let parse = |path: &Path| -> Vec<Vec<String>> {
        fs::read_to_string(path)
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
            .map(|l| l.split('\t').map(str::to_string).collect())
            .collect()
    };
    let (a, b) = (parse(&piece.join("p01.tsv")), parse(&rendered));
    assert_eq!(a.len(), b.len());
    for (ra, rb) in a.iter().zip(&b) {
        assert_eq!(ra.len(), rb.len());
        for (x, y) in ra.iter().zip(rb) {
            match (x.parse::<f64>(), y.parse::<f64>()) {
                (Ok(x), Ok(y)) => assert!((x - y).abs() <= 1e-5, "{x} vs {y}"),
                _ => assert_eq!(x, y),
            }
        }
    }

    let wrong = expeval(&[
        "render", "--base", p(&piece.join("p01.tsv")), "--target", p(&curves.join("p01.tempo.json")),
        "--feature", "velocity", "-o", p(&rendered),
    ]);
    assert_eq!(wrong.status.code(), Some(2));
}

#[test]
fn synth_is_deterministic_and_in_range() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let args = ["--pieces", "33", "--performers", "6..34", "--seed", "7"];
    synth(&a, &args);
    synth(&b, &args);
    let pieces = files(&a);
    assert_eq!(pieces.len(), 33);
    for piece in &pieces {
        let perfs = files(&a.join(piece));
        assert!((6..=34).contains(&perfs.len()), "{piece}: {}", perfs.len());
        assert_eq!(perfs, files(&b.join(piece)));
        for f in &perfs {
            assert_eq!(fs::read(a.join(piece).join(f)).unwrap(), fs::read(b.join(piece).join(f)).unwrap());
        }
    }
    // output loads back
    let out = expeval(&["scan", "-i", p(&a.join("piece05")), "--top", "1"]);
    assert!(out.status.success(), "{}", stderr(&out));
}

#[test]
fn evaluate_with_only_two_performer_pieces_exits_3() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path().join("corpus");
    synth(&root, &["--pieces", "3", "--performers", "2", "--onsets", "30", "--seed", "1"]);
    let out = expeval(&["evaluate", "-i", p(&root), "-o", p(&tmp.path().join("eval")), "--randoms", "8"]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}

#[test]
fn evaluate_writes_reports() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path().join("corpus");
    synth(&root, &["--pieces", "2", "--performers", "4..6", "--onsets", "30", "--seed", "2"]);
    let eval = tmp.path().join("eval");
    let out = expeval(&["--format", "json", "evaluate", "-i", p(&root), "-o", p(&eval), "--randoms", "8"]);
    assert!(out.status.success(), "{}", stderr(&out));
    json(&out);
    assert_eq!(
        files(&eval),
        ["cells.tsv", "report.json", "report_mean.tsv", "report_mean_log.tsv", "report_none.tsv", "report_standard_score.tsv"]
    );
    let table = fs::read_to_string(eval.join("report_standard_score.tsv")).unwrap();
    assert!(table.lines().last().unwrap().starts_with("Dataset\t"));
}

#[test]
fn identical_performances_make_calibration_infeasible() {
    let tmp = TempDir::new().unwrap();
    let piece = one_piece(&tmp, 2);
    let text = fs::read_to_string(piece.join("p01.tsv")).unwrap();
    fs::write(piece.join("p02.tsv"), &text).unwrap();
    fs::write(piece.join("p03.tsv"), &text).unwrap();
    let out = expeval(&["calibrate", "-i", p(&piece), "--feature", "velocity", "--target", "0.5"]);
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
}

#[test]
fn json_format_is_valid_json() {
    let tmp = TempDir::new().unwrap();
    let piece = one_piece(&tmp, 5);
    for args in [
        vec!["--format", "json", "scan", "-i", p(&piece)],
        vec!["--format", "json", "calibrate", "-i", p(&piece), "--feature", "tempo", "--target", "0.9"],
    ] {
        let out = expeval(&args);
        assert!(out.status.success(), "{args:?}: {}", stderr(&out));
        json(&out);
    }
}

#[test]
fn sample_requires_sigma_or_target() {
    let tmp = TempDir::new().unwrap();
    let piece = one_piece(&tmp, 3);
    let out = expeval(&["sample", "-i", p(&piece), "--feature", "tempo", "-o", p(&tmp.path().join("r"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("--sigma"), "{}", stderr(&out));
}
