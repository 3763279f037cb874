use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cokrige::io::{read_table, write_level_csv, write_table, Table};
use cokrige::synthetic::{nested_instance, Adjustment};
use tempfile::TempDir;

fn cokrige(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cokrige")).current_dir(dir).args(args).output().unwrap()
}

fn succeed(dir: &Path, args: &[&str]) -> String {
    let out = cokrige(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// Writes a two-level instance and a configuration that fits it.
fn workspace(seed: u64, theta: Option<f64>) -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    let levels = nested_instance(&[20, 8], 1, seed, Adjustment::Constant).unwrap();
    for (t, level) in levels.iter().enumerate() {
        write_level_csv(&dir.path().join(format!("level{}.csv", t + 1)), level).unwrap();
    }
    let theta = theta.map_or(String::new(), |t| format!("theta = [{t}]\n"));
    let config = format!(
        "seed = {seed}\nrestarts = 3\n\n[[level]]\npath = \"level1.csv\"\n{theta}\n\
         [[level]]\npath = \"level2.csv\"\ng_basis = [\"1\"]\n{theta}"
    );
    fs::write(dir.path().join("run.toml"), config).unwrap();
    dir
}

fn cv_rmse(stdout: &str) -> f64 {
    stdout.trim().strip_prefix("rmse,").unwrap().parse().unwrap()
}

#[test]
fn fit_then_predict_interpolates_the_top_level() {
    let dir = workspace(1, None);
    let p = dir.path();
    succeed(p, &["fit", "--config", "run.toml", "--out", "model.json"]);
    succeed(p, &["predict", "--model", "model.json", "--points", "level2.csv", "--out", "pred.csv"]);
    let truth = read_table(&p.join("level2.csv")).unwrap().column("z").unwrap();
    let pred = read_table(&p.join("pred.csv")).unwrap();
    for (m, z) in pred.column("mean").unwrap().iter().zip(&truth) {
        assert!((m - z).abs() <= 1e-8, "{m} vs {z}");
    }
    assert!(pred.column("variance").unwrap().iter().all(|v| *v >= 0.0));
}

#[test]
fn runs_are_byte_identical() {
    let dir = workspace(2, None);
    let p = dir.path();
    for out in ["a.json", "b.json"] {
        succeed(p, &["fit", "--config", "run.toml", "--out", out]);
    }
    assert_eq!(fs::read(p.join("a.json")).unwrap(), fs::read(p.join("b.json")).unwrap());
    for out in ["a.csv", "b.csv"] {
        succeed(p, &["cv", "--model", "a.json", "--folds", "4", "--seed", "3", "--out", out]);
    }
    assert_eq!(fs::read(p.join("a.csv")).unwrap(), fs::read(p.join("b.csv")).unwrap());
}

#[test]
fn removing_lower_levels_too_costs_accuracy() {
    let (mut all, mut top) = (0.0, 0.0);
    for seed in 0..8 {
        let dir = workspace(seed, Some(0.3));
        let p = dir.path();
        succeed(p, &["fit", "--config", "run.toml", "--out", "model.json"]);
        let cv = |depth: &str| {
            cv_rmse(&succeed(p, &["cv", "--model", "model.json", "--remove-depth", depth, "--out", "cv.csv"]))
        };
        all += cv("all");
        top += cv("top");
        assert_eq!(read_table(&p.join("cv.csv")).unwrap().rows.len(), 8);
    }
    assert!(all >= top, "all {all} vs top {top}");
}

#[test]
fn eval_of_exact_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let truth: Vec<f64> = (0..10).map(|i| (i as f64 * 0.7).sin()).collect();
    let table =
        |header: &[&str], rows: Vec<Vec<f64>>| Table { header: header.iter().map(|h| h.to_string()).collect(), rows };
    write_table(
        &p.join("truth.csv"),
        &table(&["x1", "y"], truth.iter().enumerate().map(|(i, y)| vec![i as f64, *y]).collect()),
    )
    .unwrap();
    write_table(&p.join("pred.csv"), &table(&["mean", "variance"], truth.iter().map(|y| vec![*y, 1.0]).collect()))
        .unwrap();
    let stdout = succeed(p, &["eval", "--pred", "pred.csv", "--truth", "truth.csv"]);
    let metrics: Vec<(&str, f64)> =
        stdout.lines().map(|l| l.split_once(',').unwrap()).map(|(k, v)| (k, v.parse().unwrap())).collect();
    assert_eq!(&metrics[..3], &[("rmse", 0.0), ("maxae", 0.0), ("q2", 1.0)]);
}

#[test]
fn design_files_are_nested() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    succeed(p, &["design", "--sizes", "12,5", "--bounds", "0:1,-2:2", "--seed", "4", "--out-prefix", "d"]);
    let (low, high) = (read_table(&p.join("d1.csv")).unwrap(), read_table(&p.join("d2.csv")).unwrap());
    assert_eq!((low.rows.len(), high.rows.len()), (12, 5));
    assert!(high.rows.iter().all(|r| low.rows.contains(r)));
}

#[test]
fn small_benchmark_writes_a_summary() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let args = ["benchmark", "--n2", "5,10", "--repeats", "3", "--restarts", "2", "--out", "bench.csv"];
    succeed(p, &args);
    let table = read_table(&p.join("bench.csv")).unwrap();
    assert_eq!(table.column("n2").unwrap(), vec![5.0, 10.0]);
    assert!(table.column("cokriging_win_fraction").unwrap().iter().all(|w| (0.0..=1.0).contains(w)));
}

#[test]
fn exit_codes_follow_the_error_category() {
    let dir = workspace(0, Some(0.3));
    let p = dir.path();
    assert_eq!(cokrige(p, &[]).status.code(), Some(2));
    assert_eq!(
        cokrige(p, &["cv", "--model", "m.json", "--out", "x.csv", "--remove-depth", "9"]).status.code(),
        Some(3)
    );
    succeed(p, &["fit", "--config", "run.toml", "--out", "model.json"]);
    let bad_depth = cokrige(p, &["cv", "--model", "model.json", "--out", "x.csv", "--remove-depth", "9"]);
    assert_eq!(bad_depth.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad_depth.stderr).starts_with("error[usage]"));

    let constant: String = fs::read_to_string(p.join("level1.csv"))
        .unwrap()
        .lines()
        .enumerate()
        .map(|(i, l)| if i == 0 { format!("{l}\n") } else { format!("{},1\n", l.split(',').next().unwrap()) })
        .collect();
    fs::write(p.join("level1.csv"), constant).unwrap();
    let singular = cokrige(p, &["fit", "--config", "run.toml", "--out", "bad.json"]);
    assert_eq!(singular.status.code(), Some(4), "{}", String::from_utf8_lossy(&singular.stderr));
}
