//! End-to-end tests of the `progen` binary: exit codes, file formats, and
//! determinism of the command-line surface.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn progen() -> Command {
    Command::new(env!("CARGO_BIN_EXE_progen"))
}

fn run(args: &[&str], cwd: &Path) -> Output {
    progen()
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

/// Shared tiny corpus + trained checkpoints (training is the slow part, so
/// several checks share one fixture).
struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Fixture {
        let dir = tempfile::tempdir().unwrap();
        let out = run(
            &[
                "synth", "--out", "corpus", "--seed", "5", "--train", "24", "--val", "6",
                "--test", "6",
            ],
            dir.path(),
        );
        assert_ok(&out);
        write_config(
            dir.path(),
            "run.json",
            r#"{
                "seed": 3,
                "paths": {"annotations": "corpus/annotations.json",
                          "lexicon": "corpus/lexicon.json",
                          "out_dir": "run"},
                "training": {"epochs": 2, "lr_visual": 1e-3, "lr_other": 1e-3},
                "decode": {"beam_size": 2}
            }"#,
        );
        Fixture { dir }
    }

    fn path(&self) -> &Path {
        self.dir.path()
    }

    fn train(&self) {
        let out = run(&["train", "--config", "run.json"], self.path());
        assert_ok(&out);
    }
}

#[test]
fn synth_is_seed_deterministic_and_loadable() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a", "b"] {
        let out = run(
            &["synth", "--out", name, "--seed", "9", "--train", "5", "--val", "2", "--test", "2"],
            dir.path(),
        );
        assert_ok(&out);
    }
    let ann_a = std::fs::read(dir.path().join("a/annotations.json")).unwrap();
    let ann_b = std::fs::read(dir.path().join("b/annotations.json")).unwrap();
    assert_eq!(ann_a, ann_b);
    let img_a = std::fs::read(dir.path().join("a/images/train-0000.pgm")).unwrap();
    let img_b = std::fs::read(dir.path().join("b/images/train-0000.pgm")).unwrap();
    assert_eq!(img_a, img_b);
}

#[test]
fn extract_concepts_writes_records_for_every_report() {
    let dir = tempfile::tempdir().unwrap();
    assert_ok(&run(
        &["synth", "--out", "c", "--seed", "2", "--train", "6", "--val", "2", "--test", "2"],
        dir.path(),
    ));
    assert_ok(&run(
        &[
            "extract-concepts",
            "--annotations",
            "c/annotations.json",
            "--lexicon",
            "c/lexicon.json",
            "--out",
            "concepts.json",
        ],
        dir.path(),
    ));
    let text = std::fs::read_to_string(dir.path().join("concepts.json")).unwrap();
    let records: serde_json::Value = serde_json::from_str(&text).unwrap();
    let list = records.as_array().unwrap();
    assert_eq!(list.len(), 10);
    for r in list {
        assert!(r.get("id").is_some());
        assert!(r.get("context_tokens").unwrap().is_array());
        assert!(r.get("mentions").unwrap().is_array());
    }
}

#[test]
fn train_generate_evaluate_round_trip_with_determinism() {
    let fx = Fixture::new();
    fx.train();
    for file in ["vilm.ckpt", "lm.ckpt", "vilm_log.jsonl", "lm_log.jsonl", "concepts.json"] {
        assert!(fx.path().join("run").join(file).exists(), "{file} missing");
    }
    // log lines follow the {epoch, split, loss, bleu4} schema
    let log = std::fs::read_to_string(fx.path().join("run/vilm_log.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert_eq!(first["epoch"], 1);
    assert!(first["split"].is_string());
    assert!(first["loss"].is_number());

    // deterministic rerun: byte-identical checkpoints
    let ckpt_a = std::fs::read(fx.path().join("run/vilm.ckpt")).unwrap();
    let lm_a = std::fs::read(fx.path().join("run/lm.ckpt")).unwrap();
    std::fs::rename(fx.path().join("run"), fx.path().join("run_first")).unwrap();
    fx.train();
    let ckpt_b = std::fs::read(fx.path().join("run/vilm.ckpt")).unwrap();
    let lm_b = std::fs::read(fx.path().join("run/lm.ckpt")).unwrap();
    assert_eq!(ckpt_a, ckpt_b, "vilm checkpoint not reproducible");
    assert_eq!(lm_a, lm_b, "lm checkpoint not reproducible");

    // generation covers the split and is deterministic
    for out_name in ["gen_a.json", "gen_b.json"] {
        assert_ok(&run(
            &[
                "generate", "--vilm", "run/vilm.ckpt", "--lm", "run/lm.ckpt",
                "--annotations", "corpus/annotations.json", "--beam", "2", "--out", out_name,
            ],
            fx.path(),
        ));
    }
    let gen_a = std::fs::read(fx.path().join("gen_a.json")).unwrap();
    let gen_b = std::fs::read(fx.path().join("gen_b.json")).unwrap();
    assert_eq!(gen_a, gen_b, "generation not reproducible");
    let records: Vec<serde_json::Value> = serde_json::from_slice(&gen_a).unwrap();
    assert_eq!(records.len(), 6, "one record per test example");
    for r in &records {
        assert!(r.get("concepts").unwrap().is_string());
        assert!(r.get("report").is_some());
        assert!(r.get("truncated").unwrap().is_boolean());
    }

    // single-stage flag works against the visual checkpoint alone
    assert_ok(&run(
        &[
            "generate", "--vilm", "run/vilm.ckpt", "--single-stage",
            "--annotations", "corpus/annotations.json", "--beam", "1", "--out", "gen_single.json",
        ],
        fx.path(),
    ));
    let singles: Vec<serde_json::Value> =
        serde_json::from_str(&std::fs::read_to_string(fx.path().join("gen_single.json")).unwrap())
            .unwrap();
    assert_eq!(singles.len(), 6);
    assert!(singles[0].get("concepts").unwrap().is_null());

    // evaluate a self-comparison: all NLG metrics and CE hit 1.0 exactly
    let refs_as_gen: Vec<serde_json::Value> = {
        let ann: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(fx.path().join("corpus/annotations.json")).unwrap(),
        )
        .unwrap();
        ann["test"]
            .as_array()
            .unwrap()
            .iter()
            .map(|r| {
                serde_json::json!({
                    "id": r["id"], "concepts": null, "report": r["report"], "truncated": false
                })
            })
            .collect()
    };
    std::fs::write(
        fx.path().join("self.json"),
        serde_json::to_string(&refs_as_gen).unwrap(),
    )
    .unwrap();
    assert_ok(&run(
        &[
            "evaluate", "--generated", "self.json", "--references", "corpus/annotations.json",
            "--lexicon", "corpus/lexicon.json", "--out", "metrics_self.json", "--diff", "diff.txt",
        ],
        fx.path(),
    ));
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fx.path().join("metrics_self.json")).unwrap())
            .unwrap();
    for k in 0..4 {
        assert_eq!(metrics["bleu"][k], 1.0);
    }
    assert_eq!(metrics["rouge_l"], 1.0);
    assert_eq!(metrics["ce"]["f1"], 1.0);
    let diff = std::fs::read_to_string(fx.path().join("diff.txt")).unwrap();
    assert!(diff.contains("== test-0000"));
    assert!(diff.contains(" shared: "));
    assert!(diff.contains("#1"), "shared mentions are tagged: {diff}");

    // five-run averaging equals the arithmetic mean of per-run metrics
    let mut per_run = Vec::new();
    for i in 0..5 {
        let name = format!("run{i}.json");
        let mangled: Vec<serde_json::Value> = refs_as_gen
            .iter()
            .enumerate()
            .map(|(j, r)| {
                let mut r = r.clone();
                if (i + j) % 2 == 0 {
                    r["report"] = serde_json::json!(format!(
                        "{} there is no cross .",
                        r["report"].as_str().unwrap()
                    ));
                }
                r
            })
            .collect();
        std::fs::write(fx.path().join(&name), serde_json::to_string(&mangled).unwrap()).unwrap();
        let single_out = format!("m{i}.json");
        assert_ok(&run(
            &[
                "evaluate", "--generated", &name, "--references", "corpus/annotations.json",
                "--lexicon", "corpus/lexicon.json", "--out", &single_out,
            ],
            fx.path(),
        ));
        let m: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(fx.path().join(&single_out)).unwrap())
                .unwrap();
        per_run.push(m);
    }
    assert_ok(&run(
        &[
            "evaluate",
            "--generated", "run0.json", "--generated", "run1.json", "--generated", "run2.json",
            "--generated", "run3.json", "--generated", "run4.json",
            "--references", "corpus/annotations.json", "--lexicon", "corpus/lexicon.json",
            "--out", "avg.json",
        ],
        fx.path(),
    ));
    let avg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fx.path().join("avg.json")).unwrap()).unwrap();
    assert_eq!(avg["runs"], 5);
    for key in ["meteor", "rouge_l"] {
        let mean: f64 = per_run.iter().map(|m| m[key].as_f64().unwrap()).sum::<f64>() / 5.0;
        assert!((avg[key].as_f64().unwrap() - mean).abs() < 1e-12, "{key}");
    }
    for k in 0..4 {
        let mean: f64 = per_run
            .iter()
            .map(|m| m["bleu"][k].as_f64().unwrap())
            .sum::<f64>()
            / 5.0;
        assert!((avg["bleu"][k].as_f64().unwrap() - mean).abs() < 1e-12);
    }
}

#[test]
fn single_stage_training_writes_its_own_checkpoint() {
    let fx = Fixture::new();
    let out = run(&["train", "--config", "run.json", "--single-stage"], fx.path());
    assert_ok(&out);
    assert!(fx.path().join("run/single.ckpt").exists());
    assert!(fx.path().join("run/single_log.jsonl").exists());
    // baseline-vs-progressive harness: both outputs exist for the same split
    assert_ok(&run(
        &[
            "generate", "--vilm", "run/single.ckpt", "--single-stage",
            "--annotations", "corpus/annotations.json", "--beam", "2", "--out", "baseline.json",
        ],
        fx.path(),
    ));
    let records: Vec<serde_json::Value> =
        serde_json::from_str(&std::fs::read_to_string(fx.path().join("baseline.json")).unwrap())
            .unwrap();
    assert_eq!(records.len(), 6);
}

#[test]
fn corrupt_annotations_exit_code_2_with_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("corpus")).unwrap();
    std::fs::write(
        dir.path().join("corpus/annotations.json"),
        r#"{"train": [{"id": "x", "image_path": []}], "val": [], "test": []}"#,
    )
    .unwrap();
    write_config(
        dir.path(),
        "run.json",
        r#"{"paths": {"annotations": "corpus/annotations.json", "out_dir": "run"}}"#,
    );
    let out = run(&["train", "--config", "run.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("record 0"), "{stderr}");
    assert!(stderr.contains("report"), "{stderr}");
}

#[test]
fn unknown_config_key_exit_code_2() {
    let dir = tempfile::tempdir().unwrap();
    write_config(
        dir.path(),
        "run.json",
        r#"{"paths": {"annotations": "a.json", "out_dir": "run"}, "optimiser": "adam"}"#,
    );
    let out = run(&["train", "--config", "run.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("optimiser"));
}

#[test]
fn usage_errors_exit_code_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["train"], dir.path()); // missing --config
    assert_eq!(out.status.code(), Some(1));
    let out = run(&["no-such-command"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn numeric_divergence_exit_code_3() {
    let dir = tempfile::tempdir().unwrap();
    assert_ok(&run(
        &["synth", "--out", "c", "--seed", "3", "--train", "8", "--val", "2", "--test", "2"],
        dir.path(),
    ));
    // An absurd learning rate: Adam's first step displaces every parameter
    // by ~lr, and the next forward pass overflows f64 at the attention
    // products (the layer norms keep anything smaller finite).
    write_config(
        dir.path(),
        "run.json",
        r#"{
            "paths": {"annotations": "c/annotations.json", "out_dir": "run"},
            "training": {"epochs": 6, "lr_visual": 1e300, "lr_other": 1e300}
        }"#,
    );
    let out = run(&["train", "--config", "run.json"], dir.path());
    assert_eq!(
        out.status.code(),
        Some(3),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn evaluate_id_mismatch_exit_code_2_lists_ids() {
    let dir = tempfile::tempdir().unwrap();
    assert_ok(&run(
        &["synth", "--out", "c", "--seed", "4", "--train", "4", "--val", "2", "--test", "3"],
        dir.path(),
    ));
    let gen = serde_json::json!([
        {"id": "test-0000", "concepts": null, "report": "x", "truncated": false},
        {"id": "bogus-9999", "concepts": null, "report": "y", "truncated": false}
    ]);
    std::fs::write(dir.path().join("gen.json"), gen.to_string()).unwrap();
    let out = run(
        &[
            "evaluate", "--generated", "gen.json", "--references", "c/annotations.json",
            "--out", "m.json",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("bogus-9999"), "{stderr}");
    assert!(stderr.contains("test-0001"), "{stderr}");
}

#[test]
fn evaluate_disjoint_vocabulary_scores_zero() {
    let dir = tempfile::tempdir().unwrap();
    let refs = serde_json::json!([
        {"id": "a", "concepts": null, "report": "alpha beta gamma", "truncated": false},
        {"id": "b", "concepts": null, "report": "delta epsilon", "truncated": false}
    ]);
    let gen = serde_json::json!([
        {"id": "a", "concepts": null, "report": "one two three", "truncated": false},
        {"id": "b", "concepts": null, "report": "four five", "truncated": false}
    ]);
    std::fs::write(dir.path().join("refs.json"), refs.to_string()).unwrap();
    std::fs::write(dir.path().join("gen.json"), gen.to_string()).unwrap();
    let out = run(
        &[
            "evaluate", "--generated", "gen.json", "--references", "refs.json",
            "--out", "m.json",
        ],
        dir.path(),
    );
    assert_ok(&out);
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("m.json")).unwrap()).unwrap();
    for k in 0..4 {
        assert_eq!(m["bleu"][k], 0.0);
    }
    assert_eq!(m["meteor"], 0.0);
    assert_eq!(m["rouge_l"], 0.0);
}

#[test]
fn generate_missing_image_exit_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let fx = Fixture::new();
    fx.train();
    // annotations referencing images that do not exist
    std::fs::write(
        dir.path().join("ann.json"),
        r#"{"train": [], "val": [],
            "test": [{"id": "t", "image_path": ["missing.pgm"], "report": "x"}]}"#,
    )
    .unwrap();
    let vilm = fx.path().join("run/vilm.ckpt");
    let lm = fx.path().join("run/lm.ckpt");
    let out = run(
        &[
            "generate", "--vilm", vilm.to_str().unwrap(), "--lm", lm.to_str().unwrap(),
            "--annotations", "ann.json", "--out", "g.json",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn vocabularies_come_from_the_train_split_only() {
    let dir = tempfile::tempdir().unwrap();
    assert_ok(&run(
        &["synth", "--out", "c", "--seed", "8", "--train", "10", "--val", "3", "--test", "3"],
        dir.path(),
    ));
    // plant a token that only occurs in the validation split
    let ann_path = dir.path().join("c/annotations.json");
    let mut ann: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&ann_path).unwrap()).unwrap();
    let report = ann["val"][0]["report"].as_str().unwrap().to_string();
    ann["val"][0]["report"] = serde_json::json!(format!("zzqx {report}"));
    std::fs::write(&ann_path, ann.to_string()).unwrap();
    write_config(
        dir.path(),
        "run.json",
        r#"{
            "paths": {"annotations": "c/annotations.json", "out_dir": "run"},
            "training": {"epochs": 1, "lr_visual": 1e-4, "lr_other": 1e-4},
            "vocab": {"min_freq": 1}
        }"#,
    );
    assert_ok(&run(&["train", "--config", "run.json"], dir.path()));
    let lm = progen::model::TrainedModel::load(&dir.path().join("run/lm.ckpt")).unwrap();
    assert!(
        !lm.tgt_vocab.contains("zzqx"),
        "validation-only token leaked into the report vocabulary"
    );
    // and the val-only token simply encodes to UNK
    assert_eq!(lm.tgt_vocab.id("zzqx"), progen::data::UNK_ID);
}
