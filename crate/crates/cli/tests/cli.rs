use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn mcqfs(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcqfs"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn mcqfs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

const SYNTH: &str = r#"{
  "n_classes": 3,
  "images_per_class": 8,
  "nuisance_levels": 1,
  "decoder_tokens": 4,
  "beams": 2,
  "taps": {
    "visual_encoder": {"content": 1, "style": 0, "sigma": 0},
    "qformer": {"content": 1, "style": 0.25, "sigma": 0},
    "llm_encoder": {"content": 1, "style": 0.5, "sigma": 0},
    "llm_decoder": {"content": 0.25, "style": 1, "sigma": 0}
  },
  "seed": 4
}"#;

/// Writes a synthetic dataset under `dir/data` and returns the manifest path.
fn synth(dir: &Path) -> PathBuf {
    fs::write(dir.join("synth.json"), SYNTH).unwrap();
    let o = mcqfs(&["synth", "synth.json", "--out", "data"], dir);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    dir.join("data/manifest.json")
}

fn write_run_config(dir: &Path, name: &str, body: &str) {
    fs::write(dir.join(name), body).unwrap();
}

#[test]
fn synth_then_validate_passes() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let o = mcqfs(&["validate", "data/manifest.json"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("tap visual_encoder: 24 records"));
    assert!(out.contains("prompt: ok"));
    assert!(out.contains("status: consistent"));
}

#[test]
fn synth_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("synth.json"), SYNTH).unwrap();
    for out in ["a", "b"] {
        assert_eq!(code(&mcqfs(&["synth", "synth.json", "--out", out], dir.path())), 0);
    }
    for file in ["manifest.json", "visual_encoder.emb", "llm_decoder.emb"] {
        assert_eq!(
            fs::read(dir.path().join("a").join(file)).unwrap(),
            fs::read(dir.path().join("b").join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn synth_rejects_single_image_classes() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("s.json"), r#"{"images_per_class": 1}"#).unwrap();
    let o = mcqfs(&["synth", "s.json", "--out", "data"], dir.path());
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn tampered_prompt_fails_validation() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path());
    let text = fs::read_to_string(&manifest).unwrap();
    fs::write(&manifest, text.replace("a) class 0", "a) class zero")).unwrap();
    let o = mcqfs(&["validate", "data/manifest.json"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("prompt mismatch"), "{}", stderr(&o));
}

#[test]
fn missing_tap_file_is_listed() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    fs::remove_file(dir.path().join("data/llm_encoder.emb")).unwrap();
    let o = mcqfs(&["validate", "data/manifest.json"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("llm_encoder.emb"), "{}", stderr(&o));
}

#[test]
fn run_prints_summary_and_repeats_exactly() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    write_run_config(
        dir.path(),
        "run.json",
        r#"{"manifest": "data/manifest.json", "specs": ["qformer", "llm_decoder"],
            "shots": [1, 3], "trials": 12, "seed": 9, "output_dir": "out"}"#,
    );
    let first = mcqfs(&["run", "run.json"], dir.path());
    assert_eq!(code(&first), 0, "{}", stderr(&first));
    let summary = stdout(&first);
    assert!(summary.contains("1-shot"));
    assert!(summary.contains("3-shot"));
    assert_eq!(summary.matches("100.00 ± 0.00").count(), 4, "{summary}");
    let csv = fs::read(dir.path().join("out/results.csv")).unwrap();
    assert!(csv.starts_with(b"spec,k,trial,accuracy\n"));
    assert!(dir.path().join("out/report.json").exists());

    let again = mcqfs(&["run", "run.json", "--threads", "1", "--out", "again"], dir.path());
    assert_eq!(code(&again), 0);
    assert_eq!(csv, fs::read(dir.path().join("again/results.csv")).unwrap());
}

#[test]
fn single_trial_reports_zero_std() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    write_run_config(
        dir.path(),
        "run.json",
        r#"{"manifest": "data/manifest.json", "specs": ["visual"], "shots": [1], "trials": 1}"#,
    );
    let o = mcqfs(&["run", "run.json", "--out", "out"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/report.json")).unwrap())
            .unwrap();
    assert_eq!(report["cells"][0]["std"], 0.0);
}

#[test]
fn run_config_errors_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&mcqfs(&["run", "absent.json"], dir.path())), 3);
    write_run_config(dir.path(), "bad.json", r#"{"manifest": "m.json", "bogus": 1}"#);
    assert_eq!(code(&mcqfs(&["run", "bad.json"], dir.path())), 2);
    write_run_config(dir.path(), "zero.json", r#"{"manifest": "m.json", "trials": 0}"#);
    assert_eq!(code(&mcqfs(&["run", "zero.json"], dir.path())), 2);
}

#[test]
fn ablate_skips_out_of_range_indices() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    write_run_config(
        dir.path(),
        "run.json",
        r#"{"manifest": "data/manifest.json", "shots": [1], "trials": 5, "output_dir": "out"}"#,
    );
    let o = mcqfs(&["ablate", "run.json", "--tokens", "1,0,9"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stderr(&o).contains("token index 9 skipped"), "{}", stderr(&o));
    let summary = fs::read_to_string(dir.path().join("out/ablation_summary.csv")).unwrap();
    let rows: Vec<&str> = summary.lines().collect();
    assert_eq!(rows[0], "token_index,k,mean,std");
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("0,1,"));
    assert!(rows[2].starts_with("1,1,"));
}

#[test]
fn ablate_single_index_gives_single_row() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    write_run_config(
        dir.path(),
        "run.json",
        r#"{"manifest": "data/manifest.json", "shots": [1], "trials": 3}"#,
    );
    let o = mcqfs(&["ablate", "run.json", "--tokens", "2", "--out", "out"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary = fs::read_to_string(dir.path().join("out/ablation_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 2);
    let table_rows = stdout(&o).lines().filter(|l| l.starts_with("2 ")).count();
    assert_eq!(table_rows, 1);
}

#[test]
fn ablate_with_no_usable_index_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    write_run_config(dir.path(), "run.json", r#"{"manifest": "data/manifest.json"}"#);
    let o = mcqfs(&["ablate", "run.json", "--tokens", "40"], dir.path());
    assert_eq!(code(&o), 2);
}

fn export_columns(dir: &Path, spec: &str) -> (usize, Vec<String>) {
    let out = format!("{spec}.csv");
    let o = mcqfs(
        &["export", "data/manifest.json", "--spec", spec, "--out", &out],
        dir,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(dir.join(out)).unwrap();
    let mut lines = text.lines();
    let header: Vec<String> = lines.next().unwrap().split(',').map(str::to_owned).collect();
    let rows: Vec<&str> = lines.collect();
    for row in &rows {
        assert_eq!(row.split(',').count(), header.len());
    }
    (rows.len(), header)
}

#[test]
fn export_feature_matrix_widths() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let (rows, header) = export_columns(dir.path(), "visual");
    assert_eq!(rows, 24);
    assert_eq!(header.len(), 2 + 1408);
    assert_eq!(&header[..3], ["image_id", "class_id", "f0"]);
    let (_, header) = export_columns(dir.path(), "concat_vis_llm");
    assert_eq!(header.len(), 2 + 3456);
    assert_eq!(header.last().unwrap(), "f3455");
}

#[test]
fn export_without_the_needed_tap_fails() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path());
    let text = fs::read_to_string(&manifest).unwrap();
    let mut value: serde_json::Value = serde_json::from_str(&text).unwrap();
    value["tap_files"].as_object_mut().unwrap().remove("visual_encoder");
    fs::write(&manifest, serde_json::to_string_pretty(&value).unwrap()).unwrap();
    let o = mcqfs(
        &["export", "data/manifest.json", "--spec", "visual", "--out", "v.csv"],
        dir.path(),
    );
    assert_ne!(code(&o), 0);
    assert!(stderr(&o).contains("visual_encoder"), "{}", stderr(&o));
}
