use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use density_core::cnn::MultiColumnConfig;
use density_core::evalkit::{read_roc_csv, round_significant};
use serde_json::{json, Value};
use tempfile::TempDir;

fn density(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_density"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = density(args);
    assert!(
        out.status.success(),
        "density {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

struct Workspace {
    _dir: TempDir,
    root: PathBuf,
    config: PathBuf,
}

impl Workspace {
    fn new(exams: usize, extra: Value) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let mut cfg = json!({
            "corpus_dir": root.join("corpus"),
            "out_dir": root.join("out"),
            "seed": 3,
            "generation": {
                "exams": exams,
                "phantom": { "height": 32, "width": 24 },
            },
            "baseline": { "epochs": 5, "bin_candidates": [10, 20] },
            "cnn": {
                "architecture": MultiColumnConfig::with_widths(32, 24, 4, [2, 4, 4], 8, 8),
                "epochs": 1,
            },
            "augmentation": { "max_translation": 2 },
            "study": {
                "fractions": [0.5, 1.0],
                "seeds": [0, 1],
                "scratch_epochs": 2,
                "transfer_epochs": 2,
                "pretrain_epochs": 1,
            },
            "reader_study": { "sample_size": 20 },
        });
        merge(&mut cfg, extra);
        let config = root.join("config.json");
        std::fs::write(&config, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
        Self {
            _dir: dir,
            root,
            config,
        }
    }

    fn run(&self, args: &[&str]) -> String {
        let mut all = vec!["--config", self.config.to_str().unwrap()];
        all.extend_from_slice(args);
        ok(&all)
    }

    fn fail(&self, args: &[&str]) -> (i32, String) {
        let mut all = vec!["--config", self.config.to_str().unwrap()];
        all.extend_from_slice(args);
        let out = density(&all);
        assert!(
            !out.status.success(),
            "density {args:?} unexpectedly succeeded"
        );
        (
            out.status.code().unwrap(),
            String::from_utf8(out.stderr).unwrap(),
        )
    }

    fn out(&self, name: &str) -> PathBuf {
        self.root.join("out").join(name)
    }
}

fn merge(base: &mut Value, extra: Value) {
    match (base, extra) {
        (Value::Object(b), Value::Object(e)) => {
            for (k, v) in e {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, e) => *b = e,
    }
}

#[test]
fn generate_is_byte_identical_for_a_fixed_seed() {
    let ws = Workspace::new(100, json!({}));
    let a = ws.root.join("a");
    let b = ws.root.join("b");
    for dir in [&a, &b] {
        ws.run(&["--seed", "7", "--out", dir.to_str().unwrap(), "generate"]);
    }
    for name in [
        "manifest.jsonl",
        "truth.jsonl",
        "generation.json",
        "images/E0000000_L-MLO.pgm",
    ] {
        assert_eq!(
            std::fs::read(a.join(name)).unwrap(),
            std::fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
    let lines = std::fs::read_to_string(a.join("manifest.jsonl"))
        .unwrap()
        .lines()
        .count();
    assert_eq!(lines, 100);

    ws.run(&["--seed", "8", "--out", b.to_str().unwrap(), "generate"]);
    assert_ne!(
        std::fs::read(a.join("manifest.jsonl")).unwrap(),
        std::fs::read(b.join("manifest.jsonl")).unwrap()
    );
}

#[test]
fn missing_artifacts_are_named() {
    let ws = Workspace::new(10, json!({}));
    let (code, stderr) = ws.fail(&["split"]);
    assert_eq!(code, 3);
    assert!(stderr.starts_with("error[missing-artifact]"), "{stderr}");
    assert!(stderr.contains("manifest.jsonl"), "{stderr}");
    assert_eq!(stderr.trim_end().lines().count(), 1);

    ws.run(&["generate"]);
    let (_, stderr) = ws.fail(&["train-baseline"]);
    assert!(stderr.contains("split.json"), "{stderr}");

    ws.run(&["split"]);
    let (code, stderr) = ws.fail(&["eval"]);
    assert_eq!(code, 3);
    assert!(
        stderr.contains(&ws.out("cnn.ntw").display().to_string()),
        "{stderr}"
    );
}

#[test]
fn bad_configs_are_rejected() {
    let ws = Workspace::new(10, json!({ "cnn": { "training_fraction": 1.5 } }));
    let (code, stderr) = ws.fail(&["generate"]);
    assert_eq!(code, 2);
    assert!(stderr.starts_with("error[config]"), "{stderr}");

    let ws = Workspace::new(10, json!({ "typo_field": 1 }));
    let (code, stderr) = ws.fail(&["generate"]);
    assert_eq!(code, 2);
    assert!(stderr.contains("typo_field"), "{stderr}");
}

#[test]
fn untrained_cnn_is_at_chance_on_balanced_data() {
    let ws = Workspace::new(
        800,
        json!({
            "generation": {
                "max_exams_per_patient": 1,
                "phantom": { "class_marginals": [0.25, 0.25, 0.25, 0.25], "missing_density_fraction": 0.0 },
            },
            "split_fractions": [0.4, 0.1, 0.5],
        }),
    );
    ws.run(&["generate"]);
    ws.run(&["split"]);
    ws.run(&["train-cnn", "--epochs", "0"]);
    let report: Value = serde_json::from_str(&ws.run(&["eval"])).unwrap();
    let top1 = report["top1"].as_f64().unwrap();
    assert!((top1 - 0.25).abs() <= 0.05, "top1 {top1}");
    assert_eq!(read_json(&ws.out("eval_cnn_test.json")), report);
}

#[test]
fn pipeline_artifacts_are_consistent() {
    let ws = Workspace::new(
        400,
        json!({
            "generation": { "phantom": { "class_marginals": [0.25, 0.25, 0.25, 0.25] } },
            "reader_study": {
                "readers": [
                    { "id": "A", "noise": { "kind": "exact" } },
                    { "id": "B", "noise": { "kind": "exact" } },
                ],
            },
        }),
    );
    ws.run(&["generate"]);
    ws.run(&["split"]);
    ws.run(&["train-baseline"]);
    ws.run(&["train-cnn"]);
    let sidecar = read_json(&ws.out("cnn.json"));
    assert_eq!(sidecar["kind"], "cnn");
    assert_eq!(sidecar["training"]["history"].as_array().unwrap().len(), 1);

    for model in ["cnn.ntw", "baseline.ntw"] {
        let path = ws.out(model);
        let stem = model.trim_end_matches(".ntw");
        ws.run(&[
            "eval",
            "--model",
            path.to_str().unwrap(),
            "--partition",
            "validation",
        ]);
        ws.run(&[
            "roc",
            "--model",
            path.to_str().unwrap(),
            "--partition",
            "validation",
        ]);
        let report = read_json(&ws.out(&format!("eval_{stem}_validation.json")));
        let per_class = report["per_class_auc"].as_array().unwrap();
        for c in 0..4 {
            let text =
                std::fs::read_to_string(ws.out(&format!("roc_{stem}_validation_class{c}.csv")))
                    .unwrap();
            let last = text.trim_end().lines().last().unwrap();
            assert!(last.starts_with("# auc="), "{last}");
            let curve = read_roc_csv(text.as_bytes()).unwrap();
            assert_eq!(
                round_significant(curve.auc, 6),
                per_class[c].as_f64().unwrap()
            );
        }
    }

    ws.run(&["simulate-readers"]);
    let rankings = ws.out("rankings.csv");
    ws.run(&["reader-study", "--rankings", rankings.to_str().unwrap()]);
    let study = read_json(&ws.out("reader_study.json"));
    let four = &study["four_class"];
    let two = &study["two_class"];
    assert_eq!(four["raters"], two["raters"]);
    assert_eq!(four["raters"], json!(["L", "N", "H", "A", "B"]));
    for matrix in [four, two] {
        let values = matrix["values"].as_array().unwrap();
        for i in [3, 4] {
            assert_eq!(values[0][i], 1.0);
        }
    }
    assert_eq!(study["human_mac_auc"], 1.0);

    // Drop one reader's row for the first sampled exam.
    let text = std::fs::read_to_string(&rankings).unwrap();
    let missing = study["exam_ids"][0].as_str().unwrap().to_string();
    let kept: Vec<&str> = text
        .lines()
        .filter(|l| !(l.starts_with("A,") && l.contains(&missing)))
        .collect();
    let partial = ws.root.join("partial.csv");
    std::fs::write(&partial, kept.join("\n") + "\n").unwrap();
    let (_, stderr) = ws.fail(&["reader-study", "--rankings", partial.to_str().unwrap()]);
    assert!(stderr.contains(&missing), "{stderr}");
}

#[test]
fn studies_report_both_arms() {
    let ws = Workspace::new(
        400,
        json!({ "generation": { "phantom": { "class_marginals": [0.25, 0.25, 0.25, 0.25] } } }),
    );
    ws.run(&["generate"]);
    ws.run(&["split"]);
    ws.run(&["transfer-study"]);
    let study = read_json(&ws.out("transfer_study.json"));
    for arm in ["scratch", "transfer"] {
        let runs = study[arm].as_array().unwrap();
        assert_eq!(runs.len(), 2);
        for r in runs {
            assert_eq!(r["validation_history"].as_array().unwrap().len(), 2);
        }
    }
    for audit in study["audits"].as_array().unwrap() {
        assert_eq!(audit["all_copies_bit_identical"], true);
        assert_eq!(
            audit["reinitialized"],
            json!(["head.output.bias", "head.output.weight"])
        );
    }

    ws.run(&["pretrain-birads"]);
    assert_eq!(read_json(&ws.out("birads.json"))["config"]["classes"], 3);
    let birads = ws.out("birads.ntw");
    ws.run(&["scale-study", "--init", birads.to_str().unwrap()]);
    let scale = read_json(&ws.out("scale_study.json"));
    for arm in ["scratch", "transfer"] {
        assert_eq!(scale[arm]["rows"].as_array().unwrap().len(), 4);
        assert_eq!(scale[arm]["median_mac_auc"].as_array().unwrap().len(), 2);
    }

    let first = std::fs::read(ws.out("transfer_study.json")).unwrap();
    ws.run(&["transfer-study"]);
    assert_eq!(first, std::fs::read(ws.out("transfer_study.json")).unwrap());
}
