use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_propsplat"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let o = run(dir, args);
    assert_eq!(code(&o), 0, "{args:?}\nstdout: {}\nstderr: {}", stdout(&o), stderr(&o));
    stdout(&o)
}

/// Value of a `key<TAB>value` line.
fn field(text: &str, key: &str) -> String {
    text.lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('\t')))
        .unwrap_or_else(|| panic!("no `{key}` in:\n{text}"))
        .to_string()
}

fn assert_error_line(o: &Output, kind: &str, exit: i32) {
    assert_eq!(code(o), exit, "stderr: {}", stderr(o));
    let err = stderr(o);
    let line = err.lines().last().unwrap_or_default();
    assert!(line.starts_with(&format!("error\tkind={kind}\tmessage=")), "{err}");
}

/// Urban fixture plus a small trained model in a fresh directory.
fn urban_model() -> (TempDir, PathBuf) {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--fixture", "urban-20", "--out-dir", "u"]);
    ok(
        d,
        &["train", "--data", "u/train.csv", "--out-dir", "m", "--n-gaussians", "200", "--iterations", "200"],
    );
    let model = d.join("m/model.psm");
    (tmp, model)
}

#[test]
fn urban_train_then_evaluate() {
    let (tmp, _) = urban_model();
    let d = tmp.path();
    for f in ["u/train.csv", "u/test.csv", "u/world.txt", "m/model.psm", "m/history.tsv", "m/manifest.json"] {
        assert!(d.join(f).is_file(), "{f}");
    }
    let out = ok(d, &["evaluate", "--model", "m/model.psm", "--data", "u/test.csv", "--out-dir", "e"]);
    let mut lines = out.lines();
    assert_eq!(lines.next().unwrap(), "count\tmae_db\trmse_db\tmedian_abs_err_db\tp95_abs_err_db");
    let row: Vec<f64> = lines.next().unwrap().split('\t').map(|v| v.parse().unwrap()).collect();
    assert_eq!(row[0], 500.0);
    assert!(row[2] > 0.0 && row[2] < 10.0, "rmse {}", row[2]);

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("m/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["config"]["n_gaussians"], 200);
    assert_eq!(manifest["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
    assert!(manifest["timings_s"]["train"].as_f64().unwrap() > 0.0);
    let history = std::fs::read_to_string(d.join("m/history.tsv")).unwrap();
    assert_eq!(history.lines().count(), 201);
}

#[test]
fn gradcheck_small_problem_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(tmp.path(), &["gradcheck", "--n", "5", "--batch", "8"]);
    let err: f64 = field(&out, "max_rel_error").parse().unwrap();
    assert!(err < 1e-4, "{out}");
}

#[test]
fn gradcheck_failure_exits_7() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(tmp.path(), &["gradcheck", "--n", "5", "--batch", "8", "--tolerance", "1e-300"]);
    assert_error_line(&o, "gradcheck", 7);
}

#[test]
fn frequency_mismatch_exits_5_and_names_both() {
    let (tmp, _) = urban_model();
    let d = tmp.path();
    std::fs::write(d.join("w.txt"), "gamma_true 2.5\n").unwrap();
    ok(
        d,
        &["synth", "--world", "w.txt", "--tx", "0,0,20", "--freq", "9.15e8", "--random-rx", "20", "--out-dir", "w"],
    );
    let o = run(d, &["evaluate", "--model", "m/model.psm", "--data", "w/data.csv"]);
    assert_error_line(&o, "model", 5);
    let err = stderr(&o);
    assert!(err.contains("1800000000") && err.contains("915000000"), "{err}");
}

#[test]
fn usage_io_and_data_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_error_line(&run(d, &["train", "--bogus"]), "usage", 2);
    assert_error_line(&run(d, &["frobnicate"]), "usage", 2);
    assert_error_line(&run(d, &["train", "--data", "missing.csv", "--out-dir", "o"]), "io", 3);

    std::fs::write(
        d.join("bad.csv"),
        "tx_x_m,tx_y_m,tx_z_m,rx_x_m,rx_y_m,rx_z_m,freq_hz,value_db,value_kind\n0,0,10,5,5,1.5,9e8,abc,path_loss\n",
    )
    .unwrap();
    assert_error_line(&run(d, &["train", "--data", "bad.csv", "--out-dir", "o"]), "data", 4);

    std::fs::write(d.join("bad.psm"), b"PSPL garbage").unwrap();
    std::fs::write(d.join("q.csv"), "tx_x_m,tx_y_m,tx_z_m,rx_x_m,rx_y_m,rx_z_m,freq_hz\n0,0,10,5,5,1.5,9e8\n").unwrap();
    assert_error_line(&run(d, &["predict", "--model", "bad.psm", "--queries", "q.csv", "--out-dir", "p"]), "model", 5);

    std::fs::write(d.join("c.toml"), "[train]\nlearning_rate = 1\n").unwrap();
    let o = run(d, &["gradcheck", "--config", "c.toml"]);
    assert_error_line(&o, "usage", 2);
    assert!(stderr(&o).contains("learning_rate"));

    let help = run(d, &["--help"]);
    assert_eq!(code(&help), 0);
    assert!(stdout(&help).contains("Exit codes"));
}

#[test]
fn strict_training_is_byte_reproducible_and_config_is_layered() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--fixture", "aniso-walls", "--out-dir", "a"]);
    std::fs::write(d.join("c.toml"), "seed = 11\n[train]\nn_gaussians = 50\niterations = 40\n").unwrap();
    let args = |out: &'static str| {
        vec!["train", "--config", "c.toml", "--data", "a/train.csv", "--iterations", "30", "--strict", "--out-dir", out]
    };
    ok(d, &args("r1"));
    ok(d, &args("r2"));
    let (m1, m2) = (std::fs::read(d.join("r1/model.psm")).unwrap(), std::fs::read(d.join("r2/model.psm")).unwrap());
    assert_eq!(m1, m2);

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("r1/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 11);
    assert_eq!(manifest["strict"], true);
    assert_eq!(manifest["config"]["n_gaussians"], 50);
    assert_eq!(manifest["config"]["iterations"], 30);
}

#[test]
fn predict_split_grid_and_diagnose() {
    let (tmp, _) = urban_model();
    let d = tmp.path();
    let out = ok(d, &["predict", "--model", "m/model.psm", "--queries", "u/test.csv", "--out-dir", "p"]);
    assert_eq!(field(&out, "queries"), "500");
    let preds = std::fs::read_to_string(d.join("p/predictions.csv")).unwrap();
    assert_eq!(preds.lines().count(), 501);

    let out = ok(d, &["split", "--data", "u/train.csv", "--spacing-m", "100", "--out-dir", "s"]);
    let (tr, te): (usize, usize) = (field(&out, "train").parse().unwrap(), field(&out, "test").parse().unwrap());
    assert_eq!(tr + te, 2000);

    ok(
        d,
        &[
            "grid", "--model", "m/model.psm", "--tx", "0,0,17", "--extent", "-1000,-1000,1000,1000", "--cell-size",
            "100", "--format", "csv", "--out-dir", "g",
        ],
    );
    let raster = std::fs::read_to_string(d.join("g/raster.csv")).unwrap();
    assert_eq!(raster.lines().count(), 401);

    let out = ok(d, &["diagnose", "--model", "m/model.psm", "--queries", "u/test.csv", "--limit", "40"]);
    let add: f64 = field(&out, "max_additivity_error_db").parse().unwrap();
    assert!(add < 1e-9);
    assert_eq!(field(&out, "sign_consistency_rate"), "1");
}

#[test]
fn indoor_localization_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let out = ok(d, &["synth", "--fixture", "indoor-9gw", "--observations", "40", "--out-dir", "i"]);
    let extent = field(&out, "extent");
    std::fs::create_dir(d.join("models")).unwrap();
    for g in 0..9 {
        let data = format!("i/train_gw{g}.csv");
        let dir = format!("t{g}");
        let out = ok(
            d,
            &["train", "--data", &data, "--out-dir", &dir, "--n-gaussians", "30", "--iterations", "200", "--lr-mu", "0.05"],
        );
        assert!(out.contains("p0_dbm"));
        std::fs::copy(d.join(&dir).join("model.psm"), d.join(format!("models/gw{g}.psm"))).unwrap();
    }
    let args = [
        "localize", "--gateways", "i/gateways.csv", "--models-dir", "models", "--observations", "i/observations.csv",
        "--extent", &extent, "--spacing-m", "0.5", "--out-dir", "l",
    ];
    let out = ok(d, &args);
    let median: f64 = field(&out, "median_error_m").parse().unwrap();
    assert!(median < 2.0, "{out}");
    let est = std::fs::read_to_string(d.join("l/estimates.csv")).unwrap();
    assert_eq!(est.lines().count(), 41);

    std::fs::remove_file(d.join("models/gw3.psm")).unwrap();
    let o = run(d, &args);
    assert_error_line(&o, "model", 5);
    assert!(stderr(&o).contains("gw3"));
}

#[test]
fn ablate_reports_every_variant() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--fixture", "urban-20", "--out-dir", "u"]);
    let out = ok(
        d,
        &["ablate", "--train", "u/train.csv", "--test", "u/test.csv", "--n-gaussians", "100", "--iterations", "100", "--out-dir", "a"],
    );
    let rmse = |variant: &str| -> f64 {
        let row = out.lines().find(|l| l.starts_with(&format!("{variant}\t"))).expect(variant);
        row.split('\t').nth(4).unwrap().parse().unwrap()
    };
    assert!(rmse("full") < rmse("no-gaussians"), "{out}");
    for v in ["iso", "fixed-ple"] {
        assert!(rmse(v).is_finite());
    }
    assert!(d.join("a/ablation.tsv").is_file() && d.join("a/model_iso.psm").is_file());
}
