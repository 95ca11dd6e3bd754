use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
[data.synth]
n_rows = 5000
n_noise = 8
intercept = -3.5
seed = 11

[split]
oot_year = 2017
seed = 2

[selection]
n_final = 8

[gbdt]
grid = [{ n_trees = 25, max_leaves = 6 }, { n_trees = 15, max_leaves = 4 }]

[rating]
n_classes = 4
generations = 40
population = 16

[explain]
n_instances = 15
background = 15
lime_instances = 1
lime = { n_samples = 200, kernel_width = 3.0, k = 3, seed = 0 }
"#;

fn creditrisk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_creditrisk"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("config.toml");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn full_run_writes_nine_class_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMALL.replace("n_classes = 4", "n_classes = 9"));
    let out = dir.path().join("out");
    let o = creditrisk(&["--threads", "2", "run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("validation_report.json")).unwrap()).unwrap();
    assert_eq!(report["payload"]["classes"].as_array().unwrap().len(), 9);
    for name in ["manifest.json", "rating_scale.csv", "roc.csv", "cv_folds.csv", "shap_values.csv", "lime.json"] {
        assert!(out.join(name).is_file(), "{name} missing");
    }
}

#[test]
fn missing_oot_year_fails_before_any_work() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMALL.replace("oot_year = 2017", ""));
    let out = dir.path().join("out");
    let o = creditrisk(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("oot_year"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn stage_without_upstream_artifact_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = creditrisk(&["calibrate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(!o.status.success());
    let e = stderr(&o);
    assert!(e.contains("missing artifact") && e.contains("gbdt_model.json"), "{e}");
}

#[test]
fn failing_stage_is_reported_with_manifest() {
    let dir = tempfile::tempdir().unwrap();
    // no defaults at all: the fit stage cannot train a classifier
    let cfg = write_config(dir.path(), &SMALL.replace("intercept = -3.5", "intercept = -60.0"));
    let out = dir.path().join("out");
    let o = creditrisk(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("error in stage"), "{}", stderr(&o));
    let manifest = fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"status\": \"failed\""));
    assert!(manifest.contains("\"failed_stage\""));
}

#[test]
fn explain_refuses_twenty_features() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMALL.replace("n_final = 8", "n_final = 20"));
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();
    let o = creditrisk(&["train", "--config", &cfg, "--out", out_s]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = creditrisk(&["explain", "--config", &cfg, "--out", out_s]);
    assert!(!o.status.success());
    let e = stderr(&o);
    assert!(e.contains("stage explain") && e.contains("20 features") && e.contains("reduce the feature set"), "{e}");
}

#[test]
fn synth_csv_feeds_train() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("synth.csv");
    let o = creditrisk(&["synth", "--out", csv.to_str().unwrap(), "--rows", "4000", "--seed", "5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = SMALL.replace(
        "[data.synth]\nn_rows = 5000\nn_noise = 8\nintercept = -3.5\nseed = 11\n",
        "[data]\ncsv = \"synth.csv\"\ncategorical = [\"cat_0\", \"cat_1\", \"cat_2\"]\n",
    );
    let cfg = write_config(dir.path(), &text);
    let out = dir.path().join("out");
    let o = creditrisk(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("gbdt_model.json").is_file());
    assert!(fs::read_to_string(out.join("encoders.json")).unwrap().contains("cat_0"));
}

#[test]
fn staged_commands_reproduce_the_full_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let full = dir.path().join("full");
    let staged = dir.path().join("staged");
    let o = creditrisk(&["run", "--config", &cfg, "--out", full.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    for cmd in ["train", "calibrate", "rate", "validate", "explain"] {
        let o = creditrisk(&[cmd, "--config", &cfg, "--out", staged.to_str().unwrap()]);
        assert!(o.status.success(), "{cmd}: {}", stderr(&o));
    }
    let mut compared = 0;
    for entry in fs::read_dir(&full).unwrap() {
        let name = entry.unwrap().file_name().into_string().unwrap();
        if name == "manifest.json" {
            continue;
        }
        let a = fs::read(full.join(&name)).unwrap();
        let b = fs::read(staged.join(&name)).unwrap_or_else(|_| panic!("{name} not produced by the stages"));
        assert!(a == b, "{name} differs");
        compared += 1;
    }
    assert!(compared >= 20);
}

