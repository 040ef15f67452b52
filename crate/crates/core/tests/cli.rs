use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use edda::augment::{AugmentedInstance, Generator};
use edda::corpus::LabeledInstance;
use edda::metrics::Prediction;
use edda::StanceLabel;
use tempfile::TempDir;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_edda"))
        .args(args)
        .current_dir(dir)
        .env_remove("EDDA_CACHE_DIR")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(out.status.success(), "edda {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// Ingests the toy corpus unsplit and returns the directory and instances.
fn ingested() -> (TempDir, Vec<LabeledInstance>) {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["ingest", "--input", fixture("sem16_toy.tsv").to_str().unwrap(), "--out-dir", "."]);
    let inst = edda::jsonl::read(dir.path().join("instances.jsonl")).unwrap();
    (dir, inst)
}

fn predictions(inst: &[LabeledInstance], f: impl Fn(&LabeledInstance) -> StanceLabel) -> Vec<Prediction> {
    inst.iter().map(|i| Prediction { id: i.id.clone(), pred: f(i), probs: vec![] }).collect()
}

fn augmented(n: usize) -> Vec<AugmentedInstance> {
    (0..n)
        .map(|k| AugmentedInstance {
            id: format!("aug:{k}"),
            text: format!("generated text number {k} about the plan"),
            target: "the plan".into(),
            pseudo_label: StanceLabel::Favor,
            rule_id: format!("rule:{k}"),
            rrs_applied: false,
            generator: Generator::Edda,
            model: "m".into(),
            label_rule_agreement: true,
        })
        .collect()
}

#[test]
fn evaluate_perfect_predictions() {
    let (dir, inst) = ingested();
    edda::jsonl::write(dir.path().join("pred.jsonl"), &predictions(&inst, |i| i.label)).unwrap();
    for metric in ["macro-avg", "macro-f1"] {
        let out = ok(dir.path(), &["evaluate", "--pred", "pred.jsonl", "--gold", "instances.jsonl", "--metric", metric]);
        assert_eq!(out.trim(), "1.0000");
    }
}

#[test]
fn evaluate_rejects_missing_ids() {
    let (dir, inst) = ingested();
    edda::jsonl::write(dir.path().join("pred.jsonl"), &predictions(&inst[1..], |i| i.label)).unwrap();
    let out = run(dir.path(), &["evaluate", "--pred", "pred.jsonl", "--gold", "instances.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(run(d, &["--help"]).status.code(), Some(0));
    assert_eq!(run(d, &["--version"]).status.code(), Some(0));
    assert_eq!(run(d, &["evaluate", "--bogus"]).status.code(), Some(1));
    assert_eq!(run(d, &["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(d, &["ren-check"]).status.code(), Some(1), "seed is required");
    assert_eq!(run(d, &["evaluate", "--pred", "nope.jsonl", "--gold", "nope.jsonl"]).status.code(), Some(2));
    assert!(!d.join("edda.manifest.json").exists(), "failed runs leave no manifest");
}

#[test]
fn sweep_from_prediction_files() {
    let (dir, inst) = ingested();
    let d = dir.path();
    edda::jsonl::write(d.join("aug.jsonl"), &augmented(4)).unwrap();
    edda::jsonl::write(d.join("pred-0.jsonl"), &predictions(&inst, |_| StanceLabel::Neutral)).unwrap();
    edda::jsonl::write(d.join("pred-2.jsonl"), &predictions(&inst, |i| if i.id.ends_with('1') { StanceLabel::Favor } else { i.label })).unwrap();
    edda::jsonl::write(d.join("pred-4.jsonl"), &predictions(&inst, |i| i.label)).unwrap();
    let table = ok(d, &[
        "sweep", "--aug", "aug.jsonl", "--gold", "instances.jsonl", "--sizes", "0,2,4",
        "--predictions", "pred-{size}.jsonl", "--metric", "macro-f1", "--out", "sweep.tsv",
    ]);
    let rows: Vec<Vec<&str>> = table.lines().skip(1).map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows.iter().map(|r| r[0]).collect::<Vec<_>>(), ["0", "2", "4"]);
    let baseline = ok(d, &["evaluate", "--pred", "pred-0.jsonl", "--gold", "instances.jsonl", "--metric", "macro-f1"]);
    assert_eq!(rows[0][1], baseline.trim());
    assert_eq!(rows[2][1], "1.0000");
    assert_eq!(std::fs::read_to_string(d.join("sweep.tsv")).unwrap(), table);
}

#[test]
fn sweep_rejects_oversized_and_malformed() {
    let (dir, inst) = ingested();
    let d = dir.path();
    edda::jsonl::write(d.join("aug.jsonl"), &augmented(2)).unwrap();
    let args = ["sweep", "--aug", "aug.jsonl", "--gold", "instances.jsonl", "--predictions", "p{size}.jsonl"];
    let mut too_big = args.to_vec();
    too_big.extend(["--sizes", "0,3"]);
    assert_eq!(run(d, &too_big).status.code(), Some(1));

    let mut bad = predictions(&inst, |i| i.label);
    bad[0].probs = vec![0.5, 0.5, 0.5];
    edda::jsonl::write(d.join("p0.jsonl"), &bad).unwrap();
    let mut malformed = args.to_vec();
    malformed.extend(["--sizes", "0"]);
    let out = run(d, &malformed);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("format violation"));
}

fn trainer_cmd() -> String {
    format!("python3 {}", fixture("trainer/fake_trainer.py").display())
}

#[test]
fn sweep_drives_external_trainer() {
    let (dir, _) = ingested();
    let d = dir.path();
    edda::jsonl::write(d.join("aug.jsonl"), &augmented(5)).unwrap();
    std::fs::write(d.join("rules.jsonl"), "").unwrap();
    let cmd = trainer_cmd();
    let table = ok(d, &[
        "sweep", "--aug", "aug.jsonl", "--gold", "instances.jsonl", "--sizes", "0,2,5",
        "--trainer-cmd", &cmd, "--train", "instances.jsonl", "--dev", "instances.jsonl",
        "--rules", "rules.jsonl", "--seed", "4", "--metric", "macro-f1",
    ]);
    let scores: Vec<&str> = table.lines().skip(1).map(|l| l.split('\t').nth(1).unwrap()).collect();
    assert_eq!(scores[1..], ["1.0000", "1.0000"]);
    assert_ne!(scores[0], "1.0000");

    let ckpt = |size: usize| -> serde_json::Value {
        serde_json::from_str(&std::fs::read_to_string(d.join(format!("sweep/size-{size}/checkpoint.json"))).unwrap()).unwrap()
    };
    assert_eq!(ckpt(0)["augmented"], false);
    assert_eq!(ckpt(2)["augmented"], true);
    let argv: Vec<String> = serde_json::from_value(ckpt(2)["argv"].clone()).unwrap();
    assert_eq!(argv[0], "train");
    assert!(argv.windows(2).any(|w| w == ["--seed", "4"]));

    let subset = |size: usize| -> Vec<AugmentedInstance> {
        edda::jsonl::read(d.join(format!("sweep/size-{size}/augmented.jsonl"))).unwrap()
    };
    let (small, large) = (subset(2), subset(5));
    assert_eq!(large.len(), 5);
    assert_eq!(small[..], large[..2], "subsets are nested");
}

#[test]
fn train_then_predict() {
    let (dir, _) = ingested();
    let d = dir.path();
    edda::jsonl::write(d.join("aug.jsonl"), &augmented(1)).unwrap();
    std::fs::write(d.join("rules.jsonl"), "").unwrap();
    let cmd = trainer_cmd();
    ok(d, &[
        "train", "--trainer-cmd", &cmd, "--train", "instances.jsonl", "--dev", "instances.jsonl",
        "--rules", "rules.jsonl", "--augmented", "aug.jsonl", "--test", "instances.jsonl",
        "--out-dir", "ckpt", "--seed", "1",
    ]);
    ok(d, &["check-format", "--kind", "predictions", "ckpt/predictions.jsonl"]);
    let score = ok(d, &["evaluate", "--pred", "ckpt/predictions.jsonl", "--gold", "instances.jsonl"]);
    assert_eq!(score.trim(), "1.0000");

    let failing = run(d, &[
        "train", "--trainer-cmd", "false", "--train", "instances.jsonl", "--dev", "instances.jsonl",
        "--rules", "rules.jsonl", "--out-dir", "ckpt2", "--seed", "1",
    ]);
    assert_eq!(failing.status.code(), Some(2));
}

#[test]
fn ren_check_exports_a_valid_weight_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = ok(d, &["ren-check", "--seed", "5", "--configs", "6", "--export", "w.txt"]);
    assert_eq!(out.lines().filter(|l| l.starts_with("PASS")).count(), 4, "{out}");
    ok(d, &["check-format", "--kind", "weights", "w.txt"]);
    let f = edda::ren::read_fixture(&d.join("w.txt")).unwrap();
    assert_eq!(edda::ren::ren_forward(&f.hx, &f.hr, &f.params).unwrap(), f.probs);

    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("w.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["outputs"][0]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn check_format_reports_violations() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("p.jsonl"), "{\"id\":\"a\",\"pred\":\"favor\"}\n{\"id\":\"a\",\"pred\":\"maybe\"}\n").unwrap();
    let out = run(d, &["check-format", "--kind", "predictions", "p.jsonl"]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr).into_owned() + &String::from_utf8_lossy(&out.stdout);
    assert!(stderr.contains("line 2"), "{stderr}");

    edda::jsonl::write(d.join("aug.jsonl"), &augmented(2)).unwrap();
    std::fs::write(d.join("rules.jsonl"), "").unwrap();
    let orphan = run(d, &["check-format", "--kind", "augmented", "--rules", "rules.jsonl", "aug.jsonl"]);
    assert!(!orphan.status.success(), "instances without their rules fail provenance");
}

#[test]
fn config_file_overrides_and_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("run.toml"), "seed = 8\n").unwrap();
    ok(d, &["--config", "run.toml", "ren-check", "--configs", "2"]);
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("edda.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 8);

    std::fs::write(d.join("bad.toml"), "sede = 8\n").unwrap();
    assert_ne!(run(d, &["--config", "bad.toml", "ren-check"]).status.code(), Some(0));
}
