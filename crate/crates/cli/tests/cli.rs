use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use matformer_core::dataset::{load_corpus, Manifest, MANIFEST};
use matformer_core::metrics::MetricReport;
use matformer_core::sequencer::NodeOrdering;
use matformer_core::Library;
use matformer_gen::model::read_meta;
use matformer_gen::{EpochLog, Stage};
use matformer_nn::Checkpoint;
use sha2::{Digest, Sha256};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_matformer")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn digest(dir: &Path) -> BTreeMap<String, String> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), hex::encode(Sha256::digest(std::fs::read(&p).unwrap()))))
        .collect()
}

fn forge(dir: &Path, graphs: usize, augment: usize, seed: u64, max_nodes: usize) {
    ok(&[
        "forge-data",
        "--graphs",
        &graphs.to_string(),
        "--augment",
        &augment.to_string(),
        "--seed",
        &seed.to_string(),
        "--max-nodes",
        &max_nodes.to_string(),
        "--out",
        s(dir),
    ]);
}

#[test]
fn forge_data_counts_and_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    forge(&a, 10, 2, 7, 40);
    forge(&b, 10, 2, 7, 40);
    let da = digest(&a);
    assert_eq!(da.keys().filter(|k| k.ends_with(".mfg")).count(), 20);
    assert!(da.contains_key(MANIFEST));
    assert_eq!(da, digest(&b));
    let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(a.join(MANIFEST)).unwrap()).unwrap();
    assert_eq!(manifest.train.len() + manifest.validation.len(), 20);

    let bad = run(&["forge-data", "--graphs", "10", "--augment", "0", "--out", s(&tmp.path().join("c"))]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("augment"));
}

const MICRO: [&str; 6] = ["--layers", "1", "--heads", "2", "--dim", "8"];

fn train(corpus: &Path, stage: Stage, out: &Path, extra: &[&str]) {
    let stage = stage.to_string();
    let mut args = vec!["train", "--stage", &stage, "--order", "rr", "--corpus", s(corpus), "--out", s(out), "--lr", "1e-3"];
    args.extend_from_slice(&MICRO);
    args.extend_from_slice(extra);
    ok(&args);
}

fn epoch_log(ck: &Path) -> Vec<EpochLog> {
    serde_json::from_str(&std::fs::read_to_string(ck.with_extension("log.json")).unwrap()).unwrap()
}

#[test]
fn train_bundle_sample_validate_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    forge(&corpus, 6, 3, 1, 14);
    let ck = |st: Stage| tmp.path().join(format!("{st}.mfck"));
    for st in Stage::ALL {
        train(&corpus, st, &ck(st), &["--epochs", "2"]);
        let meta = read_meta(&Checkpoint::load(&ck(st)).unwrap()).unwrap();
        assert_eq!(meta.ordering, NodeOrdering::BackToFrontReversed);
        assert_eq!(meta.stage, st);
        assert_eq!(meta.library_hash, Library::builtin().content_hash());
        let log = epoch_log(&ck(st));
        assert_eq!(log.len(), 2);
        assert!(log.iter().all(|l| l.train_loss.is_finite() && l.val_loss.is_some_and(f64::is_finite)));
    }

    let models = tmp.path().join("models");
    ok(&["bundle", "--nodes", s(&ck(Stage::Nodes)), "--params", s(&ck(Stage::Params)), "--edges", s(&ck(Stage::Edges)), "--out", s(&models)]);

    let (out1, out2) = (tmp.path().join("s1"), tmp.path().join("s2"));
    ok(&["sample", "--models", s(&models), "--count", "12", "--seed", "9", "--out", s(&out1), "--render", "--resolution", "16"]);
    ok(&["sample", "--models", s(&models), "--count", "12", "--seed", "9", "--out", s(&out2), "--render", "--resolution", "16"]);
    let d1 = digest(&out1);
    assert_eq!(d1.keys().filter(|k| k.ends_with(".mfg")).count(), 12);
    assert!(d1.keys().any(|k| k.ends_with("_albedo.png")));
    assert_eq!(d1, digest(&out2), "fixed seed gives identical output");
    assert!(ok(&["validate", s(&out1)]).contains("12 valid, 0 invalid"));

    let report_path = tmp.path().join("report.json");
    ok(&["eval", "--generated", s(&out1), "--reference", s(&corpus), "--out", s(&report_path)]);
    let report: MetricReport = serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert!(report.graph_stat_emd.is_finite());
    assert_eq!(report.generated, 12);
    let big = digest(&out1)
        .keys()
        .filter(|k| k.ends_with(".mfg"))
        .filter(|k| matformer_core::graphfile::load(&out1.join(k), Library::builtin()).unwrap().node_count() >= 50)
        .count();
    assert_eq!(report.nearest_edit.eligible_generated, big);
    let table = ok(&["eval", "--generated", s(&corpus), "--reference", s(&corpus), "--out", s(&report_path)]);
    let same: MetricReport = serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(same.graph_stat_emd, 0.0);
    assert!(same.render_stat_distance.as_ref().is_ok_and(|d| d.is_finite()));
    assert!(table.contains("eligible (>= 50 nodes)"));

    // A bundle claiming another library is refused.
    let manifest = models.join("bundle.json");
    let text = std::fs::read_to_string(&manifest).unwrap();
    std::fs::write(&manifest, text.replace(Library::builtin().content_hash(), "0000")).unwrap();
    let refused = run(&["sample", "--models", s(&models), "--count", "1", "--out", s(&tmp.path().join("s3"))]);
    assert!(!refused.status.success());
    assert!(String::from_utf8_lossy(&refused.stderr).contains("library"));
}

#[test]
fn resumed_training_matches_uninterrupted_run() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    forge(&corpus, 6, 2, 3, 12);
    let full: PathBuf = tmp.path().join("full.mfck");
    let part: PathBuf = tmp.path().join("part.mfck");
    train(&corpus, Stage::Edges, &full, &["--epochs", "3", "--patience", "9"]);
    train(&corpus, Stage::Edges, &part, &["--epochs", "1", "--patience", "9"]);
    let resume = part.with_extension("resume.mfck");
    train(&corpus, Stage::Edges, &part, &["--epochs", "3", "--patience", "9", "--resume", s(&resume)]);
    assert_eq!(epoch_log(&full), epoch_log(&part));
    assert_eq!(std::fs::read(&full).unwrap(), std::fs::read(&part).unwrap());
}

#[test]
fn validate_reports_broken_files() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.mfg");
    let lib = Library::builtin();
    std::fs::write(&path, format!("mfgraph 1\nlibrary {} {}\nnode 0 invert\nedge 0:0 0:0\n", lib.version(), lib.content_hash()))
        .unwrap();
    let out = run(&["validate", s(&path)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("0 valid, 1 invalid"));
}

#[test]
fn forged_corpus_loads() {
    let tmp = tempfile::tempdir().unwrap();
    forge(tmp.path(), 4, 2, 0, 20);
    let corpus = load_corpus(tmp.path(), Library::builtin()).unwrap();
    assert_eq!(corpus.train.len() + corpus.validation.len(), 8);
}
