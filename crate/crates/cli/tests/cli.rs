//! End-to-end behaviour of the `mrnr` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mrnr::eval::{loo_on_features, EvalReport};
use mrnr::{generate, FeatureLayout, SynthConfig};

/// A small experiment keeps the binary runs quick.
const SMALL: &str = "synth_subjects = 4\nsynth_events_per_category = 4\nsynth_samples = 180\nsynth_dims = [8, 8, 8]\nsynth_regions = 10\nsynth_informative_regions = 2\n";

fn mrnr(args: &[&str], extra: &[&Path]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mrnr"));
    cmd.args(args);
    for p in extra {
        cmd.arg(p);
    }
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path
}

fn run_ok(args: &[&str], config: &Path, out: &Path) {
    let o = Command::new(env!("CARGO_BIN_EXE_mrnr"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Every file under `root`, relative, sorted.
fn tree(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn unknown_config_key_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "sigma_g = 1.0\nsigma_gg = 2.0\n");
    let out = dir.path().join("out");
    let o = mrnr(&["pipeline", "--config"], &[&cfg, Path::new("--out"), &out]);
    assert_eq!(o.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&o.stderr);
    let record: serde_json::Value = serde_json::from_str(stderr.trim()).unwrap();
    assert_eq!(record["error"], "config");
    assert!(record["message"].as_str().unwrap().contains("sigma_gg"), "{stderr}");
    assert_eq!(json(&out.join("error.json")), record);
}

#[test]
fn missing_data_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = mrnr(&["design", "--data"], &[&dir.path().join("nowhere"), Path::new("--out"), &dir.path().join("o")]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn snapshot_manifest_records_default_sigma_and_hashes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    for stage in ["simulate", "design", "snapshot"] {
        run_ok(&[stage], &cfg, &out);
    }
    let m = json(&out.join("manifests/snapshot.json"));
    assert_eq!(m["stage"], "snapshot");
    assert_eq!(m["config"]["sigma_g"], 1.0);
    assert_eq!(m["version"], mrnr::VERSION);
    let inputs = m["inputs"].as_array().unwrap();
    assert!(inputs.iter().any(|e| e["path"] == "data/sub-01/events.csv"));
    let paths: Vec<&str> = inputs.iter().map(|e| e["path"].as_str().unwrap()).collect();
    let mut sorted = paths.clone();
    sorted.sort();
    assert_eq!(paths, sorted);
    // Recorded hashes match the files.
    let design = fs::read(out.join("design/sub-01/design.csv")).unwrap();
    let entry = inputs.iter().find(|e| e["path"] == "out/design/sub-01/design.csv").unwrap();
    assert_eq!(entry["sha256"].as_str().unwrap().len(), 64);
    let outputs = json(&out.join("manifests/design.json"))["outputs"].clone();
    let produced = outputs.as_array().unwrap().iter().find(|e| e["path"] == "out/design/sub-01/design.csv").unwrap();
    assert_eq!(produced["sha256"], entry["sha256"]);
    assert!(!design.is_empty());
}

#[test]
fn flag_overrides_config_in_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{SMALL}sigma_g = 2.0\n"));
    let out = dir.path().join("out");
    run_ok(&["simulate"], &cfg, &out);
    run_ok(&["design", "--sigma-g", "1.5"], &cfg, &out);
    assert_eq!(json(&out.join("manifests/design.json"))["config"]["sigma_g"], 1.5);
}

#[test]
fn stages_compose_to_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let staged = dir.path().join("staged");
    for stage in ["simulate", "design", "snapshot", "extract", "train", "evaluate"] {
        run_ok(&[stage], &cfg, &staged);
    }
    let whole = dir.path().join("whole");
    run_ok(&["pipeline"], &cfg, &whole);
    let files = tree(&whole);
    assert_eq!(files, tree(&staged));
    for f in files {
        if f.starts_with("manifests") {
            continue;
        }
        assert!(fs::read(whole.join(&f)).unwrap() == fs::read(staged.join(&f)).unwrap(), "{f:?} differs");
    }
}

#[test]
fn runs_are_byte_identical_and_match_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run_ok(&["pipeline"], &cfg, &a);
    run_ok(&["pipeline"], &cfg, &b);
    for f in tree(&a) {
        if f.starts_with("manifests") {
            continue;
        }
        assert!(fs::read(a.join(&f)).unwrap() == fs::read(b.join(&f)).unwrap(), "{f:?} differs");
    }
    // Manifests differ only through the echoed paths.
    let (ma, mb) = (json(&a.join("manifests/evaluate.json")), json(&b.join("manifests/evaluate.json")));
    assert_eq!(ma["inputs"], mb["inputs"]);
    assert_eq!(ma["outputs"], mb["outputs"]);

    // The file-based run reproduces the in-memory evaluation.
    let synth = SynthConfig {
        subjects: 4,
        events_per_category: 4,
        t: 180,
        dims: [8, 8, 8],
        regions: 10,
        informative_regions: 2,
        ..SynthConfig::default()
    };
    let (exp, truth) = generate(&synth).unwrap();
    let subjects = exp.extract_all().unwrap();
    let layout = FeatureLayout::from_atlas(&exp.atlas);
    let want = loo_on_features(&subjects, &layout, &truth.categories[0], &exp.params.svm).unwrap();
    let got = EvalReport::from_json(&fs::read_to_string(a.join("report/report.json")).unwrap()).unwrap();
    assert_eq!(got, want);
}

#[test]
fn unknown_target_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = mrnr(&["pipeline", "--target", "nope", "--config"], &[&cfg, Path::new("--out"), &out]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope"));
}
