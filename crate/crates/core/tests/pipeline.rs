use std::fs;
use std::path::Path;
use std::process::Command;

use manireg::error::Error;
use manireg::experiments::config::ExperimentConfig;
use manireg::experiments::runner::run_experiment;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_manireg"))
}

fn config(text: &str, out: &Path) -> ExperimentConfig {
    let mut c: ExperimentConfig = text.parse().unwrap();
    c.output = out.to_path_buf();
    c
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records()
        .map(|rec| rec.unwrap().iter().map(str::to_string).collect())
        .collect()
}

fn csv_header(path: &Path) -> Vec<String> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.headers().unwrap().iter().map(str::to_string).collect()
}

fn assert_same_dir(a: &Path, b: &Path) {
    let mut names: Vec<_> = fs::read_dir(a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    for name in names {
        if name == "manifest.toml" {
            continue;
        }
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name:?}");
    }
}

const SPECTRUM: &str = r#"
name = "sphere-spectrum"
task = "spectrum"
seeds = [7]
output = "unused"

[data]
source = "sphere"
n = 400
d = 10

[noise]
sigmas = [0.3]

[regularizer]
schedule = "sphere"

[graph]
kind = "epsilon"

[spectrum]
count = 100
"#;

#[test]
fn spectrum_config_writes_100_eigenvalues_with_reference() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = run_experiment(&config(SPECTRUM, &tmp.path().join("a"))).unwrap();
    let results = csv_rows(&dir.join("results.csv"));
    assert_eq!(results.len(), 1);
    let file = dir.join(&results[0][3]);
    assert_eq!(
        csv_header(&file),
        ["index", "value_paper_convention", "value_matrix_convention", "reference", "relative_error"]
    );
    let rows = csv_rows(&file);
    assert_eq!(rows.len(), 100);
    // ℓ(ℓ+1) staircase: 0, 2×3, 6×5, 12×7, ...
    assert_eq!(rows[0][3], "0");
    assert_eq!(rows[3][3], "2");
    assert_eq!(rows[8][3], "6");
    assert_eq!(rows[9][3], "12");
    for r in &rows {
        let scaled: f64 = r[1].parse().unwrap();
        let matrix: f64 = r[2].parse().unwrap();
        assert!((scaled - 400.0 * matrix).abs() <= 1e-9 * (1.0 + scaled.abs()));
    }
    let again = run_experiment(&config(SPECTRUM, &tmp.path().join("b"))).unwrap();
    assert_same_dir(&dir, &again);
}

#[test]
fn classify_config_with_cv_reruns_identically() {
    let text = r#"
name = "moons"
task = "classify"
seeds = [1, 2]
output = "unused"

[data]
source = "two-moons"
n = 200
d = 10

[noise]
sigmas = [0.2]

[regularizer]
schedule = "fixed"
specs = ["identity", "ball:0.2", "knn:5"]

[graph]
kind = "self-tuning"
k = 10

[classify]
labels = 10
cv_repeats = 1
"#;
    let tmp = tempfile::tempdir().unwrap();
    let a = run_experiment(&config(text, &tmp.path().join("a"))).unwrap();
    let b = run_experiment(&config(text, &tmp.path().join("b"))).unwrap();
    assert_same_dir(&a, &b);
    let results = csv_rows(&a.join("results.csv"));
    assert_eq!(results.len(), 2);
    for r in &results {
        assert_eq!(r[5], "190");
        assert!(r[6].parse::<usize>().unwrap() <= 190);
    }
    assert_eq!(csv_rows(&a.join("cv.csv")).len(), 2 * 3);
    assert_eq!(csv_rows(&a.join("predictions-seed1-sigma0.csv")).len(), 200);
    let manifest: toml::Table = fs::read_to_string(a.join("manifest.toml")).unwrap().parse().unwrap();
    let runs = manifest["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 2);
    assert!(runs.iter().all(|r| r.get("label_seed").is_some() && r.get("noise_seed").is_some()));
}

#[test]
fn zero_label_classify_config_is_rejected() {
    let text = r#"
name = "none"
task = "classify"
seeds = [1]
output = "unused"
[data]
source = "two-moons"
n = 50
d = 3
[classify]
labels = 0
"#;
    let err = text.parse::<ExperimentConfig>().unwrap_err();
    assert!(matches!(err.root(), Error::InsufficientLabels(_)));
    assert!(err.to_string().starts_with("[config]"));
}

#[test]
fn sphere_distance_table_ratio_at_half() {
    // reduced Table 1 protocol; the full-size check lives in the acceptance suite
    let text = r#"
name = "table"
task = "distance-table"
seeds = [3]
output = "unused"
[data]
source = "sphere"
n = 800
d = 100
[noise]
sigmas = [0.5]
[regularizer]
schedule = "sphere"
"#;
    let tmp = tempfile::tempdir().unwrap();
    let dir = run_experiment(&config(text, tmp.path())).unwrap();
    let rows = csv_rows(&dir.join("results.csv"));
    let ratio: f64 = rows[0][7].parse().unwrap();
    assert!(ratio > 2.0, "ratio {ratio}");
}

#[test]
fn cli_pipeline_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let run = |args: &[&str]| {
        let out = bin().args(args).current_dir(t).output().unwrap();
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    };
    run(&["gen", "--sampler", "two-moons", "--n", "150", "--d", "5", "--sigma", "0.1", "--seed", "4", "--out", "y"]);
    assert!(t.join("y.csv").exists() && t.join("y.clean.csv").exists() && t.join("y.labels").exists());
    run(&["regularize", "--input", "y", "--spec", "ball:0.1", "--out", "ybar"]);
    run(&["graph", "--input", "ybar", "--kind", "self-tuning", "--k", "10", "--out", "g.txt"]);
    run(&["spectrum", "--graph", "g.txt", "--count", "6", "--out", "s.csv"]);
    assert_eq!(csv_rows(&t.join("s.csv")).len(), 6);
    let stdout = run(&["classify", "--input", "ybar", "--truth", "y.labels", "--labels", "6", "--out", "p.csv"]);
    assert!(stdout.contains("of 144"));
    let table = run(&["bounds", "--r", "0.1", "--sigma", "0.01"]);
    assert!(table.contains("0.0896503096874"));

    let cfg = t.join("exp.toml");
    fs::write(&cfg, SPECTRUM.replace("n = 400", "n = 120").replace("count = 100", "count = 10")).unwrap();
    run(&["run", cfg.to_str().unwrap()]);
    assert!(t.join("unused/results.csv").exists());

    run(&["repro", "table1", "--n", "150", "--d", "5", "--sigmas", "0.2", "--out", "r"]);
    assert_eq!(csv_rows(&t.join("r/table1.csv")).len(), 1);
    run(&["repro", "fig2", "--n", "100", "--d", "4", "--out", "r"]);
    assert_eq!(
        csv_header(&t.join("r/fig2-scatter-seed1.csv")),
        ["index", "label", "x1", "x2", "y1", "y2", "ybar1", "ybar2"]
    );
    let grid = csv_header(&t.join("r/fig2-mnist-grid-seed1.csv"));
    assert_eq!(grid.len(), 3 + 784);
}

#[test]
fn cli_failures_are_stage_tagged() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["regularize", "--input", "missing", "--spec", "ball:1", "--out", "x"])
        .current_dir(tmp.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("[load]"));

    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "name = \"x\"\ntask = \"spectrum\"\nseeds = []\noutput = \"o\"\n[data]\nsource = \"sphere\"\nn = 10\n").unwrap();
    let out = bin().args(["run", cfg.to_str().unwrap()]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("[config]"));
}
