use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn fadesim(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fadesim"))
        .args(args)
        .current_dir(dir)
        .env_remove("FADESIM_OUT")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let o = fadesim(dir, args);
    assert!(
        o.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr_of_failure(dir: &Path, args: &[&str]) -> String {
    let o = fadesim(dir, args);
    assert!(!o.status.success(), "{args:?} should fail");
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn csv_column(text: &str, name: &str) -> Vec<String> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let k = header.iter().position(|h| *h == name).unwrap();
    lines.map(|l| l.split(',').nth(k).unwrap().to_string()).collect()
}

#[test]
fn invalid_config_lists_every_problem_with_lines() {
    let d = tempfile::tempdir().unwrap();
    fs::write(
        d.path().join("bad.json"),
        "{\n  \"model\": {\"class\": \"rice\",\n    \"beta\": -1, \"I0\": 1, \"Q0\": 0},\n  \"estimator\": \"is\"\n}\n",
    )
    .unwrap();
    let err = stderr_of_failure(d.path(), &["ccdf-mc", "--config", "bad.json"]);
    assert!(err.contains("line 3: model.beta"), "{err}");
    assert!(err.contains("I0 = Q0"), "{err}");
    assert!(err.contains("line 4: estimator") && err.contains("Rayleigh"), "{err}");
    let err = stderr_of_failure(d.path(), &["ccdf-mc", "--gamma", "-1"]);
    assert!(err.contains("gamma"), "{err}");
}

#[test]
fn ccdf_is_without_grid_says_how_to_make_one() {
    let d = tempfile::tempdir().unwrap();
    let err = stderr_of_failure(d.path(), &["ccdf-is", "--M", "100", "--w", "3"]);
    assert!(err.contains("kbe-solve"), "{err}");
}

#[test]
fn zero_threshold_never_fades() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["ccdf-mc", "--gamma", "0", "--M", "5000", "--out", "o"]);
    let text = fs::read_to_string(d.path().join("o/ccdf_mc_projected.csv")).unwrap();
    let w = csv_column(&text, "w");
    let p = csv_column(&text, "p_hat");
    for (w, p) in w.iter().zip(&p) {
        if w.parse::<f64>().unwrap() > 0.0 {
            assert_eq!(p.parse::<f64>().unwrap(), 0.0, "w={w}");
        }
    }
}

#[test]
fn sidecar_config_reruns_bit_exactly_at_any_worker_count() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["ccdf-mc", "--M", "20000", "--seed", "5", "--out", "a"]);
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.path().join("a/ccdf_mc_projected.csv.meta.json")).unwrap())
            .unwrap();
    assert_eq!(meta["seed"], 5);
    assert_eq!(meta["config_sha256"].as_str().unwrap().len(), 64);
    assert!(meta["version"].as_str().unwrap().starts_with("fadesim "));
    fs::write(d.path().join("rerun.json"), meta["config"].to_string()).unwrap();
    ok(
        d.path(),
        &["ccdf-mc", "--config", "rerun.json", "--workers", "1", "--out", "b"],
    );
    for f in ["ccdf_mc_projected.csv", "ccdf_mc_iq.csv"] {
        assert_eq!(
            fs::read(d.path().join("a").join(f)).unwrap(),
            fs::read(d.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
    let meta_b: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.path().join("b/ccdf_mc_projected.csv.meta.json")).unwrap())
            .unwrap();
    assert_eq!(meta["config_sha256"], meta_b["config_sha256"]);
}

#[test]
fn output_dir_falls_back_to_environment() {
    let d = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_fadesim"))
        .args(["simulate", "--paths", "3", "--N", "10"])
        .current_dir(d.path())
        .env("FADESIM_OUT", "from-env")
        .output()
        .unwrap();
    assert!(o.status.success());
    let text = fs::read_to_string(d.path().join("from-env/paths_projected.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 3 * 11);
    assert!(d.path().join("from-env/paths_iq.csv.meta.json").exists());
}

#[test]
fn hist_writes_shared_bins_and_gof() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["hist", "--model", "hoyt", "--M", "4000", "--bins", "20", "--out", "h"]);
    let a = fs::read_to_string(d.path().join("h/hist_projected.csv")).unwrap();
    let b = fs::read_to_string(d.path().join("h/hist_iq.csv")).unwrap();
    assert_eq!(csv_column(&a, "bin_low"), csv_column(&b, "bin_low"));
    let gof = fs::read_to_string(d.path().join("h/hist_gof.csv")).unwrap();
    assert!(gof.contains("ks-projected-vs-iq") && gof.contains("ks-squared-hoyt-iq"), "{gof}");
}

#[test]
fn stats_mean_matches_sigma_squared() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["stats", "--out", "s"]);
    let text = fs::read_to_string(d.path().join("s/stats.csv")).unwrap();
    let row: Vec<f64> = text
        .lines()
        .find(|l| l.starts_with("mean,"))
        .unwrap()
        .split(',')
        .skip(1)
        .map(|x| x.parse().unwrap())
        .collect();
    let (est, se, target) = (row[1], row[2], row[3]);
    assert_eq!(target, 1.0);
    assert!((est - target).abs() <= 3.0 * se, "{est} +/- {se}");
}

#[test]
fn reproduce_table1_mc_column_near_tabulated_value() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["reproduce", "table1", "--M", "100000", "--out", "r"]);
    let text = fs::read_to_string(d.path().join("r/table1/table1/compare.csv")).unwrap();
    let w = csv_column(&text, "w");
    let k = w.iter().position(|x| x == "2.5").unwrap();
    let a: f64 = csv_column(&text, "A_MC")[k].parse().unwrap();
    let v: f64 = csv_column(&text, "Var_MC")[k].parse().unwrap();
    let se = (v / 1e5).sqrt();
    assert!((a - 0.003).abs() <= 3.0 * se, "A_MC {a} +/- {se}");
    assert!(d.path().join("r/table1/table1/value_grid.json.meta.json").exists());
}

#[test]
fn reproduce_rejects_unknown_target() {
    let d = tempfile::tempdir().unwrap();
    let err = stderr_of_failure(d.path(), &["reproduce", "fig42"]);
    assert!(err.contains("known: fig1"), "{err}");
    ok(d.path(), &["reproduce", "fig3", "--out", "r"]);
    assert!(d.path().join("r/fig3/rice/rice_drift.csv").exists());
}
