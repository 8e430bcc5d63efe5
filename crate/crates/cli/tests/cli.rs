use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn toy_corpus() -> PathBuf {
    root().join("fixtures/toy_corpus")
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_encoderlab"))
        .args(args)
        .current_dir(dir)
        .env_remove("ENCODERLAB_OUT")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn manifest_value(path: &Path, key: &str) -> String {
    let text = std::fs::read_to_string(format!("{}.manifest", path.display())).unwrap();
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("{key} missing from manifest of {}", path.display()))
        .to_string()
}

/// Corpus and wordpiece vocabulary in `dir`.
fn prepare(dir: &Path, vocab_size: &str) {
    ok(dir, &["corpus", "ingest", "--in", toy_corpus().to_str().unwrap(), "--out", "c.txt"]);
    ok(dir, &["vocab", "train", "--algo", "wordpiece", "--size", vocab_size, "--corpus", "c.txt", "--out", "v.txt"]);
}

#[test]
fn vocab_train_respects_size() {
    let dir = tempfile::tempdir().unwrap();
    prepare(dir.path(), "1000");
    let lines = std::fs::read_to_string(dir.path().join("v.txt")).unwrap().lines().count();
    assert!(lines <= 1000 && lines > 5);
    assert!(dir.path().join("v.txt.manifest").exists());
    assert!(dir.path().join("run.conf").exists());
    ok(dir.path(), &["vocab", "train", "--algo", "unigram", "--size", "300", "--corpus", "c.txt", "--out", "u.txt"]);
    let u = std::fs::read_to_string(dir.path().join("u.txt")).unwrap();
    assert!(u.lines().count() <= 300);
    assert!(u.lines().all(|l| l.contains('\t')));
}

#[test]
fn reruns_reproduce_hashes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [a.path(), b.path()] {
        prepare(d, "300");
        ok(d, &["pretrain-data", "build", "--corpus", "c.txt", "--vocab", "v.txt", "--out", "i.jsonl", "--max-len", "64", "--objective", "so", "--seed", "4"]);
    }
    for f in ["c.txt", "v.txt", "i.jsonl"] {
        let (ha, hb) = (manifest_value(&a.path().join(f), "output.sha256"), manifest_value(&b.path().join(f), "output.sha256"));
        assert_eq!(ha, hb, "{f}");
    }
    assert_eq!(manifest_value(&a.path().join("i.jsonl"), "seed"), "4");
}

#[test]
fn inputs_are_not_mutated() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    std::fs::create_dir(&raw).unwrap();
    let text = "Primeira frase. Segunda frase!\n\nOutro documento aqui.\n";
    std::fs::write(raw.join("a.txt"), text).unwrap();
    ok(dir.path(), &["corpus", "ingest", "--in", "raw", "--out", "c.txt", "--lowercase"]);
    assert_eq!(std::fs::read_to_string(raw.join("a.txt")).unwrap(), text);
    let c = std::fs::read_to_string(dir.path().join("c.txt")).unwrap();
    assert_eq!(c, "primeira frase.\nsegunda frase!\n\noutro documento aqui.\n");
}

#[test]
fn compare_reproduces_published_row() {
    let dir = tempfile::tempdir().unwrap();
    let scores = root().join("fixtures/published_scores.csv");
    let stdout = ok(dir.path(), &["compare", "--scores", scores.to_str().unwrap(), "--out", "cmp.csv"]);
    let row = stdout.lines().find(|l| l.starts_with("BertPT ")).unwrap();
    assert!(row.contains("   4   28    6"), "{row}");
    assert!(stdout.contains("reading: F1 cells only"));
    let csv = std::fs::read_to_string(dir.path().join("cmp.csv")).unwrap();
    assert!(csv.contains("BertPT,AlbertPT,4,28,6,38"));
    assert!(dir.path().join("cmp.txt.manifest").exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["vocab", "train", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));

    let out = run(dir.path(), &["compare", "--scores", "missing.csv"]);
    assert_eq!(out.status.code(), Some(1));

    let out = run(dir.path(), &["corpus", "ingest", "--in", "missing.txt", "--out", "c.txt"]);
    assert_eq!(out.status.code(), Some(1));

    prepare(dir.path(), "200");
    let out = run(dir.path(), &["pretrain-data", "build", "--corpus", "c.txt", "--vocab", "v.txt", "--objective", "xyz"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(dir.path(), &["pretrain", "--data", "x.jsonl", "--vocab", "v.txt", "--set", "hidden=15"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(dir.path(), &["pretrain", "--data", "x.jsonl", "--vocab", "v.txt", "--set", "novalue"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(dir.path(), &["pretrain", "--data", "x.jsonl", "--vocab", "v.txt"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn output_root_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_encoderlab"))
        .args(["corpus", "ingest", "--in", toy_corpus().to_str().unwrap()])
        .current_dir(dir.path())
        .env("ENCODERLAB_OUT", "artifacts")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("artifacts/corpus.txt").exists());
    assert!(dir.path().join("artifacts/corpus.txt.manifest").exists());
}

#[test]
fn train_finetune_eval_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    prepare(d, "300");
    ok(d, &["pretrain-data", "build", "--corpus", "c.txt", "--vocab", "v.txt", "--out", "i.jsonl", "--max-len", "64", "--seed", "1"]);
    std::fs::write(d.join("train.conf"), "# short run\ntotal_steps=12\nwarmup_steps=3\nbatch_size=8\n").unwrap();
    let args = ["pretrain", "--data", "i.jsonl", "--vocab", "v.txt", "--config", "train.conf", "--set", "total_steps=10", "--seed", "3"];
    ok(d, &[&args[..], &["--out", "p.ckpt"]].concat());
    ok(d, &[&["--serial"][..], &args[..], &["--out", "q.ckpt"]].concat());
    assert_eq!(std::fs::read(d.join("p.ckpt")).unwrap(), std::fs::read(d.join("q.ckpt")).unwrap());
    assert_eq!(manifest_value(&d.join("p.ckpt"), "config.total_steps"), "10");
    assert_eq!(manifest_value(&d.join("p.ckpt"), "config.batch_size"), "8");
    let trace = std::fs::read_to_string(d.join("p.ckpt.loss.csv")).unwrap();
    assert_eq!(trace.lines().next(), Some("step,mlm_loss,pair_loss,total"));
    assert_eq!(trace.lines().count(), 11);

    let corpus = std::fs::read_to_string(d.join("c.txt")).unwrap();
    let tsv: String = corpus
        .lines()
        .filter(|l| !l.is_empty())
        .take(60)
        .map(|l| format!("{}\t{l}\n", u8::from(l.ends_with('?'))))
        .collect();
    std::fs::write(d.join("task.tsv"), tsv).unwrap();
    let task = ["--data", "task.tsv", "--vocab", "v.txt", "--task-kind", "single-classification"];
    ok(d, &[&["finetune", "--checkpoint", "p.ckpt", "--out", "m.model", "--set", "total_steps=5", "--set", "warmup_steps=1"][..], &task[..]].concat());
    let s = ok(d, &["eval", "--model", "m.model", "--data", "task.tsv", "--vocab", "v.txt", "--out", "m.csv"]);
    assert!(s.contains("accuracy="), "{s}");
    let s = ok(
        d,
        &[&["eval", "--checkpoint", "p.ckpt", "--protocol", "stratified:3", "--set", "total_steps=3", "--set", "warmup_steps=1", "--out", "cv.csv"][..], &task[..]].concat(),
    );
    assert!(s.contains("(3 folds)"), "{s}");
    let csv = std::fs::read_to_string(d.join("cv.csv")).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("task,mean,accuracy,")));

    let bad = run(d, &["eval", "--model", "m.model", "--data", "task.tsv", "--vocab", "v.txt", "--task-kind", "pair-regression"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn demo_with_other_seed() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(dir.path(), &["demo", "--seed", "5", "--out", "demo"]);
    assert!(stdout.contains("seed: 5"));
    let report = std::fs::read_to_string(dir.path().join("demo/report.txt")).unwrap();
    assert!(report.contains("[eval] mean: accuracy="));
    for f in ["corpus.txt", "vocab.txt", "instances.jsonl", "loss.csv", "pretrain.ckpt", "metrics.csv", "report.txt"] {
        let p = dir.path().join("demo").join(f);
        assert!(p.exists(), "{f}");
        assert_eq!(manifest_value(&p, "seed"), "5");
    }
}
