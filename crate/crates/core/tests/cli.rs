use std::path::Path;
use std::process::{Command, Output};

fn hlnet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hlnet")).arg("--out-dir").arg(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = hlnet(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

const SMALL_GEN: [&str; 7] = ["gen", "--scenes", "8", "--val-scenes", "2", "--test-scenes", "4"];
const SMALL_MODEL: [&str; 8] = ["--epochs", "1", "--dim", "4", "--layers", "2", "--steps", "1"];

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn gen_train_eval_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &SMALL_GEN);
    for f in ["gen.cfg", "train.sg", "val.sg", "test.sg"] {
        assert!(d.join("corpus").join(f).is_file(), "missing {f}");
    }
    let mut train = vec!["train"];
    train.extend(SMALL_MODEL);
    ok(d, &train);
    let log = std::fs::read_to_string(d.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 2);
    let out = ok(d, &["eval", "--task", "sgcls"]);
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("sgcls") && !table.contains("predcls"));
    let metrics = std::fs::read_to_string(d.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("metric,task,K,value\n"));

    let gen = json(&d.join("gen.manifest.json"));
    let train = json(&d.join("train.manifest.json"));
    let eval = json(&d.join("eval.manifest.json"));
    assert_eq!(gen["corpus_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(gen["corpus_sha256"], train["corpus_sha256"]);
    assert_eq!(train["corpus_sha256"], eval["corpus_sha256"]);
    assert_eq!(train["checkpoint"], "model.ckpt");
    assert_eq!(eval["metrics"], "metrics.csv");
    assert!(train["config"].as_array().unwrap().iter().any(|v| v == "epochs=1"));
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["gen", "--homophily", "1.5"][..],
        &["train", "--beta", "1.0"],
        &["train", "--tau", "0"],
        &["eval", "--bogus"],
        &["sweep", "--param", "beta"],
    ] {
        let out = hlnet(dir.path(), args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn runtime_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = hlnet(d, &["train", "--epochs", "1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    ok(d, &SMALL_GEN);
    let mut train = vec!["train"];
    train.extend(SMALL_MODEL);
    ok(d, &train);
    ok(d, &["gen", "--corpus", "other", "--num-obj-classes", "5", "--scenes", "4", "--test-scenes", "2"]);
    let out = hlnet(d, &["eval", "--corpus", "other"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("classes"));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("run.cfg"), "train_scenes=6\ntest_scenes=3\nval_scenes=1\nepochs=1\ndim=6\nlayers=1\nsteps=1\n").unwrap();
    ok(d, &["--config", "run.cfg", "gen", "--test-scenes", "2"]);
    let gen = std::fs::read_to_string(d.join("corpus/gen.cfg")).unwrap();
    assert!(gen.contains("train_scenes=6") && gen.contains("test_scenes=2"));
    ok(d, &["--config", "run.cfg", "train", "--dim", "5"]);
    let m = json(&d.join("train.manifest.json"));
    let cfg = m["config"].as_array().unwrap();
    assert!(cfg.iter().any(|v| v == "dim=5") && cfg.iter().any(|v| v == "layers=1"));
}

fn svg_ok(path: &Path) -> usize {
    let text = std::fs::read_to_string(path).unwrap();
    let doc = roxmltree::Document::parse(&text).unwrap();
    assert!(doc.root_element().has_tag_name("svg"));
    doc.descendants().count()
}

#[test]
fn ablate_and_sweep_write_tables_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &SMALL_GEN);
    let mut ablate = vec!["ablate", "--seeds", "1"];
    ablate.extend(SMALL_MODEL);
    ok(d, &ablate);
    let csv = std::fs::read_to_string(d.join("ablation.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 9);
    assert!(rows[1].starts_with("1,0,0,0,") && rows[8].starts_with("8,1,1,1,"));
    assert!(svg_ok(&d.join("ablation.svg")) > 10);

    let mut sweep = vec!["sweep", "--param", "layers", "--seeds", "1"];
    sweep.extend(SMALL_MODEL);
    ok(d, &sweep);
    let csv = std::fs::read_to_string(d.join("sweep_layers.csv")).unwrap();
    let values: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(values, ["2", "3", "4", "5"]);
    assert!(svg_ok(&d.join("sweep_layers.svg")) > 10);
    assert!(d.join("sweep_layers.manifest.json").is_file());
}
