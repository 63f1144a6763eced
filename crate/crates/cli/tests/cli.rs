use std::path::Path;
use std::process::{Command, Output};

const EXPERIMENT: &str = r#"
seed = 1

[dataset]
timeseries = "pool/timeseries.csv"
static = "pool/static.csv"

[curation]
target_count = 6

[window]
lookback = 16
horizon = 4

[model]
arch = "lstm"
preset = "toy"

[train]
max_epochs = 2
batch_size = 256
lr_grid = [1e-3, 1e-4]

[output]
dir = "run"
"#;

fn loadbench(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_loadbench"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = loadbench(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn fails(dir: &Path, args: &[&str], code: &str) -> String {
    let out = loadbench(dir, args);
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(!out.status.success(), "{args:?} should fail");
    assert!(stderr.contains(&format!("error[{code}]")), "{args:?}: expected {code}, got {stderr}");
    stderr
}

/// Pool, experiment config and curated dataset in a fresh directory.
fn workspace() -> tempfile::TempDir {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("exp.toml"), EXPERIMENT).unwrap();
    ok(d, &["synth", "--out", "pool", "--buildings", "12", "--types", "4", "--steps", "1344", "--seed", "2"]);
    ok(d, &["curate", "-c", "exp.toml"]);
    tmp
}

fn trained() -> tempfile::TempDir {
    let tmp = workspace();
    ok(tmp.path(), &["train", "-c", "exp.toml"]);
    tmp
}

fn run_pipeline() -> Vec<(String, Vec<u8>)> {
    let tmp = trained();
    let d = tmp.path();
    ok(d, &["evaluate", "-c", "exp.toml"]);
    ok(d, &["evaluate", "-c", "exp.toml", "--metric-space", "physical"]);
    ok(d, &["report", "--metrics", "run/metrics.csv"]);
    ["run/metrics.csv", "run/report.csv", "run/report.md", "run/grid.csv", "run/checkpoint.lbck", "run/dataset/manifest.json"]
        .iter()
        .map(|f| (f.to_string(), std::fs::read(d.join(f)).unwrap()))
        .collect()
}

#[test]
fn pipeline_is_reproducible() {
    let a = run_pipeline();
    let b = run_pipeline();
    for ((name, x), (_, y)) in a.iter().zip(&b) {
        assert!(x == y, "{name} differs between runs");
    }
    let metrics = String::from_utf8(a[0].1.clone()).unwrap();
    let lines: Vec<_> = metrics.lines().collect();
    assert_eq!(lines[0], "dataset,arch,L,T,nmse,nmae,seed,lr");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("curated,LSTM,16,4,"));
    let md = String::from_utf8(a[2].1.clone()).unwrap();
    assert!(md.contains("### curated (L=16, T=4)"));
}

#[test]
fn missing_static_file_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--out", "pool", "--buildings", "4", "--types", "2", "--steps", "672"]);
    std::fs::remove_file(d.join("pool/static.csv")).unwrap();
    std::fs::write(d.join("exp.toml"), EXPERIMENT).unwrap();
    fails(d, &["curate", "-c", "exp.toml"], "MissingStaticFeatures");
    fails(d, &["correlate", "--timeseries", "pool/timeseries.csv", "--static", "pool/static.csv"], "MissingStaticFeatures");
}

#[test]
fn config_errors_name_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("bad.toml"), "[train]\nmax_epochs = \"many\"\n").unwrap();
    let err = fails(d, &["train", "-c", "bad.toml"], "ConfigError");
    assert!(err.contains("train.max_epochs"), "{err}");
    let out = loadbench(d, &["train", "-c", "bad.toml"]);
    assert_eq!(out.status.code(), Some(2));

    std::fs::write(d.join("arch.toml"), "[model]\narch = \"resnet\"\n").unwrap();
    let err = fails(d, &["train", "-c", "arch.toml"], "ConfigError");
    assert!(err.contains("model.arch"), "{err}");
    fails(d, &["train", "--lr-grid", "1e-4,1e-3"], "ConfigError");
}

#[test]
fn external_forecasts_round_trip() {
    let tmp = trained();
    let d = tmp.path();
    ok(d, &["export-forecasts", "-c", "exp.toml", "--out", "f.csv"]);
    let own = ok(d, &["evaluate", "-c", "exp.toml"]);
    let ext = ok(d, &["eval-external", "-c", "exp.toml", "--forecasts", "f.csv", "--name", "copy"]);
    let scores = |s: &str| s.trim().split(',').skip(4).map(String::from).collect::<Vec<_>>();
    assert_eq!(scores(&own), scores(&ext));

    let text = std::fs::read_to_string(d.join("f.csv")).unwrap();
    let zeros: String = text
        .lines()
        .enumerate()
        .map(|(i, l)| if i == 0 { format!("{l}\n") } else { format!("{},0\n", l.rsplit_once(',').unwrap().0) })
        .collect();
    std::fs::write(d.join("zeros.csv"), zeros).unwrap();
    let z = ok(d, &["eval-external", "-c", "exp.toml", "--forecasts", "zeros.csv", "--name", "zero"]);
    let nmse: f64 = scores(&z)[0].parse().unwrap();
    assert!(nmse > 0.5 && nmse < 2.0, "zero forecast in normalized units scored {nmse}");

    let short: String = text.lines().take(text.lines().count() - 1).map(|l| format!("{l}\n")).collect();
    std::fs::write(d.join("short.csv"), short).unwrap();
    fails(d, &["eval-external", "-c", "exp.toml", "--forecasts", "short.csv", "--name", "short"], "AlignmentError");
}

#[test]
fn plot_checks_its_arguments() {
    let tmp = trained();
    let d = tmp.path();
    ok(d, &["plot", "-c", "exp.toml", "--building", "1", "--first-k", "50", "--out", "p.svg"]);
    let svg = std::fs::read_to_string(d.join("p.svg")).unwrap();
    assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"), "{}", &svg[..svg.len().min(80)]);
    fails(d, &["plot", "-c", "exp.toml", "--building", "99", "--out", "p.svg"], "BadIndex");
    fails(d, &["plot", "-c", "exp.toml", "--building", "0", "--first-k", "0", "--out", "p.svg"], "BadValue");
    fails(d, &["plot", "-c", "exp.toml", "--building", "0", "--step", "4", "--out", "p.svg"], "BadIndex");
}

#[test]
fn a_locked_run_directory_is_refused() {
    let tmp = workspace();
    let d = tmp.path();
    std::fs::write(d.join("run/.lock"), "").unwrap();
    fails(d, &["train", "-c", "exp.toml"], "RunLocked");
    assert_eq!(loadbench(d, &["train", "-c", "exp.toml"]).status.code(), Some(3));
    std::fs::remove_file(d.join("run/.lock")).unwrap();
    ok(d, &["train", "-c", "exp.toml"]);
    assert!(!d.join("run/.lock").exists());
}

#[test]
fn empty_metrics_file_has_nothing_to_report() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("m.csv"), "dataset,arch,L,T,nmse,nmae,seed,lr\n").unwrap();
    fails(d, &["report", "--metrics", "m.csv"], "InsufficientData");
    std::fs::write(d.join("bad.csv"), "a,b\n1,2\n").unwrap();
    fails(d, &["report", "--metrics", "bad.csv"], "SchemaMismatch");
}
