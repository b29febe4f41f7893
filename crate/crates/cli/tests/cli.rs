use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use apl_mdd::ctc::{beam_search, PosteriorMatrix};
use apl_mdd::matfile;
use apl_mdd::phoneset::{InventoryMode, PhoneInventory};
use serde_json::Value;
use tempfile::TempDir;

const SMALL: [&str; 6] = ["--set", "rnn_hidden=8", "--set", "ling_hidden=8", "--set", "embed_dim=8"];

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_apl-mdd"));
    c.env_remove("APL_MDD_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn dir(root: &TempDir, name: &str) -> PathBuf {
    let p = root.path().join(name);
    fs::create_dir_all(&p).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A 60-utterance corpus over 12 speakers.
fn corpus(root: &TempDir) -> PathBuf {
    let out = dir(root, "corpus");
    let o = run(&["synth", "--n-utts", "60", "--n-speakers", "12", "--seed", "3", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out
}

fn train(root: &TempDir, corpus: &Path, name: &str, extra: &[&str]) -> (PathBuf, Output) {
    let out = dir(root, name);
    let train = corpus.join("train.jsonl");
    let dev = corpus.join("dev.jsonl");
    let mut args = vec!["train", "--manifest", s(&train), "--dev-manifest", s(&dev), "--out", s(&out)];
    args.extend_from_slice(&SMALL);
    args.extend_from_slice(extra);
    let o = run(&args);
    (out, o)
}

fn lines_of(path: &Path, field: &str) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| {
            let v: Value = serde_json::from_str(l).unwrap();
            format!("{}\t{}", v["id"].as_str().unwrap(), v[field].as_array().unwrap().iter().map(|x| x.as_str().unwrap()).collect::<Vec<_>>().join(" "))
        })
        .collect()
}

#[test]
fn synth_is_deterministic_and_reports_rates() {
    let root = TempDir::new().unwrap();
    let (a, b, c) = (dir(&root, "a"), dir(&root, "b"), dir(&root, "c"));
    for d in [&a, &b] {
        let o = run(&["synth", "--n-utts", "200", "--seed", "7", "--out", s(d)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for f in ["manifest.jsonl", "train.jsonl", "test.jsonl", "inventory.txt", "config.txt", "features/synth00003.aplmat"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let o = run(&["synth", "--n-utts", "50", "--sub-rate", "0", "--out", s(&c)]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).lines().any(|l| l.split_whitespace().take(2).eq(["substitutions", "0"])), "{}", stdout(&o));
}

#[test]
fn usage_and_config_errors() {
    let root = TempDir::new().unwrap();
    let missing = root.path().join("nope");
    let o = run(&["synth", "--out", s(&missing)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("does not exist"), "{}", stderr(&o));

    assert_eq!(code(&run(&["synth", "--no-such-flag"])), 1);
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);

    let out = dir(&root, "o");
    let o = run(&["synth", "--set", "bogus=1", "--out", s(&out)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("bogus"));
    let o = run(&["synth", "--set", "sub_rate=1.5", "--out", s(&out)]);
    assert_eq!(code(&o), 1);
    let o = run(&["train", "--out", s(&out)]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    let o = run(&["synth", "--config", s(&root.path().join("absent.txt")), "--out", s(&out)]);
    assert_eq!(code(&o), 1);

    let o = bin().env("APL_MDD_THREADS", "zero").args(["synth", "--out", s(&out)]).output().unwrap();
    assert_eq!(code(&o), 1);
    let o = bin().env("APL_MDD_THREADS", "2").args(["synth", "--n-utts", "20", "--out", s(&out)]).output().unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn training_runs_are_reproducible() {
    let root = TempDir::new().unwrap();
    let data = corpus(&root);
    let (a, o) = train(&root, &data, "a", &["--variant", "APL", "--max-epochs", "2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (b, o) = train(&root, &data, "b", &["--variant", "APL", "--max-epochs", "2"]);
    assert_eq!(code(&o), 0);
    let log = fs::read_to_string(a.join("epochs.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    assert_eq!(log, fs::read_to_string(b.join("epochs.jsonl")).unwrap());
    for f in ["best.ckpt", "final.ckpt", "best.ckpt.config", "best.ckpt.inventory"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }

    // the written config alone reproduces the run
    let c = dir(&root, "c");
    let o = run(&["train", "--config", s(&a.join("config.txt")), "--out", s(&c)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(log, fs::read_to_string(c.join("epochs.jsonl")).unwrap());
    assert_eq!(fs::read(a.join("final.ckpt")).unwrap(), fs::read(c.join("final.ckpt")).unwrap());
    assert_eq!(fs::read(a.join("config.txt")).unwrap(), fs::read(c.join("config.txt")).unwrap());
}

#[test]
fn zero_epochs_writes_the_initial_model() {
    let root = TempDir::new().unwrap();
    let data = corpus(&root);
    let (out, o) = train(&root, &data, "t", &["--max-epochs", "0"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read_to_string(out.join("epochs.jsonl")).unwrap(), "");
    assert!(out.join("best.ckpt").is_file() && out.join("final.ckpt").is_file());
}

#[test]
fn al_ignores_embeddings_that_pl_needs() {
    let root = TempDir::new().unwrap();
    let data = corpus(&root);
    for f in fs::read_dir(data.join("embeddings")).unwrap() {
        fs::write(f.unwrap().path(), b"not a matrix").unwrap();
    }
    let (_, o) = train(&root, &data, "al", &["--variant", "AL", "--max-epochs", "1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (_, o) = train(&root, &data, "pl", &["--variant", "PL", "--max-epochs", "1"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    // oracle embeddings come from the segments instead
    let (_, o) = train(&root, &data, "plo", &["--variant", "PL", "--max-epochs", "1", "--embeddings", "oracle"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn inference_outputs() {
    let root = TempDir::new().unwrap();
    let data = corpus(&root);
    let (model, o) = train(&root, &data, "m", &["--variant", "APL", "--max-epochs", "2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ckpt = model.join("best.ckpt");
    let test = data.join("test.jsonl");

    let empty = root.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let out = dir(&root, "empty");
    let o = run(&["infer", "--checkpoint", s(&ckpt), "--manifest", s(&empty), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read_to_string(out.join("recognized.txt")).unwrap(), "");

    let out = dir(&root, "mismatch");
    let o = run(&["infer", "--checkpoint", s(&ckpt), "--manifest", s(&test), "--set", "inventory=timit39", "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    let ours = PhoneInventory::build(&InventoryMode::Timit39).unwrap().checksum();
    let theirs = PhoneInventory::build(&InventoryMode::L2ArcticExtended).unwrap().checksum();
    assert!(stderr(&o).contains(&ours) && stderr(&o).contains(&theirs), "{}", stderr(&o));

    let (a, b) = (dir(&root, "a"), dir(&root, "b"));
    for d in [&a, &b] {
        let o = run(&[
            "infer", "--checkpoint", s(&ckpt), "--manifest", s(&test), "--beam-width", "1", "--set", "posteriors=true", "--out", s(d),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let text = fs::read_to_string(a.join("recognized.txt")).unwrap();
    assert_eq!(text, fs::read_to_string(b.join("recognized.txt")).unwrap());
    let inv = PhoneInventory::build(&InventoryMode::L2ArcticExtended).unwrap();
    assert_eq!(text.lines().count(), lines_of(&test, "perceived").len());
    for line in text.lines() {
        let (id, phones) = line.split_once('\t').unwrap();
        let logp = matfile::load(&a.join("posteriors").join(format!("{id}.aplmat"))).unwrap();
        let post = PosteriorMatrix::new(logp, inv.blank_id()).unwrap();
        let ids = beam_search(&post, 1).unwrap();
        let labels: Vec<String> = inv.decode(&ids).unwrap().iter().map(|l| l.to_string()).collect();
        assert_eq!(phones, labels.join(" "));
    }
}

fn score(root: &TempDir, manifest: &Path, recognized: &str, name: &str) -> (PathBuf, Output) {
    let out = dir(root, name);
    let rec = out.join("input.txt");
    fs::write(&rec, recognized).unwrap();
    let o = run(&["score", "--manifest", s(manifest), "--recognized", s(&rec), "--out", s(&out)]);
    (out, o)
}

fn metric(out: &Path, name: &str) -> Value {
    let v: Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    v["aggregate"]["mdd"][name].clone()
}

#[test]
fn scoring_reference_cases() {
    let root = TempDir::new().unwrap();
    let data = corpus(&root);
    let test = data.join("test.jsonl");
    let perceived = lines_of(&test, "perceived").join("\n") + "\n";
    let canonical = lines_of(&test, "canonical").join("\n") + "\n";

    let (out, o) = score(&root, &test, &perceived, "p");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for m in ["frr", "far", "der"] {
        assert_eq!(metric(&out, m).as_f64(), Some(0.0), "{m}");
    }
    assert!(fs::read_to_string(out.join("report.txt")).unwrap().contains("f_measure"));

    let (out, o) = score(&root, &test, &canonical, "c");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(metric(&out, "recall").as_f64(), Some(0.0));

    let mut lines: Vec<&str> = perceived.lines().collect();
    let dropped = lines.pop().unwrap().split('\t').next().unwrap().to_string();
    let bad = format!("{}\nghost01\tsil\n", lines.join("\n"));
    let (_, o) = score(&root, &test, &bad, "bad");
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("ghost01") && stderr(&o).contains(&dropped), "{}", stderr(&o));
}

#[test]
fn ablation_table_shape_and_repeatability() {
    let root = TempDir::new().unwrap();
    let mut tables = Vec::new();
    for name in ["a", "b"] {
        let out = dir(&root, name);
        let mut args = vec![
            "ablation", "--variants", "AL,PL,APL", "--seeds", "5", "--set", "n_utts=60", "--set", "n_speakers=12",
            "--set", "max_epochs=1", "--out", s(&out),
        ];
        args.extend_from_slice(&SMALL);
        let o = run(&args);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        tables.push(fs::read_to_string(out.join("ablation.txt")).unwrap());
        assert!(out.join("ablation.json").is_file() && out.join("epochs_APL_seed5.jsonl").is_file());
    }
    assert_eq!(tables[0], tables[1]);
    let rows: Vec<Vec<&str>> = tables[0].lines().map(|l| l.split_whitespace().collect()).collect();
    assert_eq!(
        rows[0],
        ["variant", "correctness", "accuracy", "FRR", "FAR", "detection_accuracy", "precision", "recall", "f_measure", "DER"]
    );
    assert_eq!(rows.len(), 4);
    assert_eq!([rows[1][0], rows[2][0], rows[3][0]], ["AL", "PL", "APL"]);
}
