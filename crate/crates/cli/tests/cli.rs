use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn evscen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evscen"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stdout);
    let last = text.lines().last().expect("stdout has a line");
    serde_json::from_str(last).expect("single-line JSON")
}

fn stderr_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text
        .lines()
        .find(|l| l.starts_with('{'))
        .expect("JSON on stderr");
    serde_json::from_str(line).unwrap()
}

fn workspace_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .join(rel)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn fit_gmm_then_report_shows_bic_curve() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("sessions.csv");
    let model = dir.path().join("model.json");
    let out = evscen(&[
        "generate-data",
        "--segment",
        "workplace_l2_weekday",
        "-n",
        "3000",
        "--seed",
        "7",
        "--out",
        s(&csv),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(stdout_json(&out)["sessions"], 3000);

    let out = evscen(&[
        "fit-gmm",
        "--sessions",
        s(&csv),
        "--g-max",
        "4",
        "--restarts",
        "2",
        "--out",
        s(&model),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v = stdout_json(&out);
    let g = v["chosen_g"].as_u64().unwrap();
    assert!((1..=4).contains(&g));
    let w: f64 = v["weights"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_f64().unwrap())
        .sum();
    assert!((w - 1.0).abs() < 1e-9);

    let out = evscen(&["report", s(&model)]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains(&format!("G: {g}")), "{text}");
    assert!(text.contains("BIC curve"), "{text}");
    assert!(text.contains("<- chosen"), "{text}");
    assert!(text.contains("weights:"), "{text}");
    for k in 1..=4 {
        assert!(text.contains(&format!("G={k}:")), "{text}");
    }
}

#[test]
fn base_case_scenario_writes_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("base");
    let config = workspace_file("configs/base_case.json");
    let out = evscen(&[
        "run-scenario",
        "--config",
        s(&config),
        "--synthetic",
        "--out",
        s(&out_dir),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v = stdout_json(&out);
    assert!(v["peak_kw"].as_f64().unwrap() > 0.0);

    let csv = std::fs::read_to_string(out_dir.join("profiles.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1441);
    assert!(csv.lines().next().unwrap().contains("total"));
    let metrics: Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("metrics.json")).unwrap())
            .unwrap();
    assert_eq!(metrics["peak_kw"], v["peak_kw"]);
    assert!(out_dir.join("timings.json").exists());

    let out = evscen(&["report", s(&out_dir)]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("peak:"));
}

#[test]
fn train_surrogate_from_mixture_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("sessions.csv");
    let mix = dir.path().join("mix.json");
    let sur = dir.path().join("sur.json");
    let ts = dir.path().join("ts.json");
    let reg = dir.path().join("registry");
    assert!(evscen(&[
        "generate-data",
        "--segment",
        "workplace_l2_weekday",
        "-n",
        "2000",
        "--out",
        s(&csv),
    ])
    .status
    .success());
    assert!(evscen(&[
        "fit-gmm",
        "--sessions",
        s(&csv),
        "--g-max",
        "3",
        "--out",
        s(&mix),
    ])
    .status
    .success());
    let rate = workspace_file("rates/peak_min.json");
    let out = evscen(&[
        "train-surrogate",
        "--source",
        s(&mix),
        "--rate",
        s(&rate),
        "--kind",
        "ridge",
        "--n-instances",
        "20",
        "--n-vehicles",
        "15",
        "--dt",
        "60",
        "--cv-folds",
        "3",
        "--out",
        s(&sur),
        "--save-training-set",
        s(&ts),
        "--models-dir",
        s(&reg),
        "--id",
        "wp_peak",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v = stdout_json(&out);
    assert_eq!(v["kind"], "ridge");
    assert_eq!(v["n_instances"], 20);
    assert!(reg.join("surrogates/wp_peak.json").exists());

    // Reusing the saved set with a different rate must be refused.
    let other = workspace_file("rates/pge_e19.json");
    let out = evscen(&[
        "train-surrogate",
        "--training-set",
        s(&ts),
        "--rate",
        s(&other),
        "--out",
        s(&dir.path().join("x.json")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["error"]["kind"], "hash_mismatch");

    let out = evscen(&["report", s(&sur)]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("surrogate"));
}

#[test]
fn usage_errors_exit_2_with_json() {
    let out = evscen(&["run-scenario", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"]["kind"], "usage");
}

#[test]
fn help_succeeds() {
    let out = evscen(&["--help"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("run-scenario"));
}

#[test]
fn invalid_config_names_field() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(workspace_file("configs/base_case.json")).unwrap();
    let mut cfg: Value = serde_json::from_str(&text).unwrap();
    cfg["segment_shares"]["residential"] = 0.6.into();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    let out = evscen(&[
        "run-scenario",
        "--config",
        s(&path),
        "--synthetic",
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let e = stderr_json(&out);
    assert_eq!(e["error"]["kind"], "invalid");
    assert!(e["error"]["field"]
        .as_str()
        .unwrap()
        .contains("segment_shares"));
}

#[test]
fn scenario_without_models_is_missing_model() {
    let dir = tempfile::tempdir().unwrap();
    let config = workspace_file("configs/base_case.json");
    let out = evscen(&[
        "run-scenario",
        "--config",
        s(&config),
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["error"]["kind"], "missing_model");
}
