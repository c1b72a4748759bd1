use std::path::Path;
use std::process::{Command, Output};

fn tog(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tog"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// A small corpus built from the shipped grammars.
fn small_corpus(dir: &Path) {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data");
    for g in ["domain_a.grammar", "domain_b.grammar"] {
        std::fs::copy(data.join(g), dir.join(g)).unwrap();
    }
    std::fs::write(
        dir.join("small.spec"),
        "seed=5\ngrammar_a=domain_a.grammar\ngrammar_b=domain_b.grammar\ntrain_a=24\ndev_a=4\nadapt_b=12\ntest_b=4\ndev_b=4\n",
    )
    .unwrap();
    let o = tog(&["gen-corpus", "--spec", p(&dir.join("small.spec")), "--out", p(&dir.join("corpus"))]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn no_arguments_prints_usage_and_exits_1() {
    let o = tog(&[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"));
}

#[test]
fn unknown_subcommand_or_flag_exits_1() {
    assert_eq!(tog(&["frobnicate"]).status.code(), Some(1));
    let o = tog(&["check", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--bogus"));
}

#[test]
fn help_exits_0() {
    let o = tog(&["score", "--help"]);
    assert_eq!(o.status.code(), Some(0));
    for flag in ["--config", "--seed", "--model", "--manifest", "--beam", "--lm", "--fusion-weight", "--workers"] {
        assert!(stdout(&o).contains(flag), "{flag} missing from help");
    }
}

#[test]
fn check_reports_small_errors() {
    let o = tog(&["check"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    let line = out.lines().find(|l| l.starts_with("rnnt loss oracle")).expect("oracle line");
    let err: f64 = line.split("= ").nth(1).unwrap().split_whitespace().next().unwrap().parse().unwrap();
    assert!(err < 1e-6, "{line}");
    assert_eq!(out.matches("[ok]").count(), 3, "{out}");
}

#[test]
fn runtime_failures_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = tog(&["score", "--model", p(&dir.path().join("missing.togm")), "--manifest", "nope.tsv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing.togm"));
}

#[test]
fn unknown_config_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "epochs=2\nlearning_rate=3\n").unwrap();
    let o = tog(&["train", "--config", p(&cfg), "--manifest", "x.tsv", "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("learning_rate"), "{}", stderr(&o));
}

#[test]
fn speech_only_model_cannot_be_text_adapted() {
    let dir = tempfile::tempdir().unwrap();
    small_corpus(dir.path());
    let corpus = dir.path().join("corpus");
    let model_dir = dir.path().join("speech");
    let o = tog(&[
        "train", "--speech-only", "--manifest", p(&corpus.join("train-a.tsv")), "--out", p(&model_dir),
        "--set", "epochs=1", "--set", "warmup_epochs=0",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = tog(&[
        "adapt", "--mode", "tog-p", "--model", p(&model_dir.join("model.togm")),
        "--manifest", p(&corpus.join("adapt-b.txt")), "--out", p(&dir.path().join("adapted")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("textogram"), "{}", stderr(&o));
}

#[test]
fn full_pipeline_and_reproduction_from_written_config() {
    let dir = tempfile::tempdir().unwrap();
    small_corpus(dir.path());
    let corpus = dir.path().join("corpus");
    let run = |args: &[&str]| {
        let o = tog(args);
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
        o
    };
    let base = dir.path().join("base");
    run(&[
        "train", "--manifest", p(&corpus.join("train-a.tsv")), "--out", p(&base), "--seed", "3",
        "--set", "epochs=2", "--set", "warmup_epochs=1",
    ]);
    for f in ["model.togm", "run.cfg", "metrics.log", "trainer.ckpt"] {
        assert!(base.join(f).exists(), "{f}");
    }
    assert_eq!(std::fs::read_to_string(base.join("metrics.log")).unwrap().lines().count(), 2);

    // Re-running from the written config reproduces the model bit for bit.
    let again = dir.path().join("again");
    run(&["train", "--config", p(&base.join("run.cfg")), "--manifest", p(&corpus.join("train-a.tsv")), "--out", p(&again)]);
    assert_eq!(std::fs::read(base.join("model.togm")).unwrap(), std::fs::read(again.join("model.togm")).unwrap());

    let head = dir.path().join("head");
    run(&[
        "lm-head-train", "--model", p(&base.join("model.togm")), "--manifest", p(&corpus.join("train-a.tsv")),
        "--out", p(&head), "--set", "head_epochs=2", "--set", "head_warmup_epochs=1",
    ]);
    let adapted = dir.path().join("adapted");
    run(&[
        "adapt", "--mode", "tog-p+nnlm", "--model", p(&head.join("model.togm")),
        "--manifest", p(&corpus.join("adapt-b.tsv")), "--out", p(&adapted),
        "--set", "adapt_epochs=2", "--set", "adapt_warmup_epochs=1",
    ]);
    assert!(std::fs::read_to_string(adapted.join("run.cfg")).unwrap().contains("adapt_mode=tog-p+nnlm"));
    let lm = dir.path().join("lm");
    run(&[
        "lm-train", "--manifest", p(&corpus.join("adapt-b.txt")), "--out", p(&lm),
        "--set", "lm_epochs=2", "--set", "lm_warmup_epochs=1",
    ]);
    let test = corpus.join("test-b.tsv");
    let model = adapted.join("model.togm");
    let o = run(&["score", "--model", p(&model), "--manifest", p(&test), "--beam", "2"]);
    assert!(stdout(&o).starts_with("WER "), "{}", stdout(&o));
    let scored = dir.path().join("scored");
    run(&[
        "score", "--model", p(&model), "--manifest", p(&test), "--beam", "2", "--lm", p(&lm.join("lm.togm")),
        "--fusion-weight", "0.3", "--out", p(&scored),
    ]);
    assert!(std::fs::read_to_string(scored.join("run.cfg")).unwrap().contains("fusion_weight=0.3"));
    assert_eq!(std::fs::read_to_string(scored.join("hyp.txt")).unwrap().lines().count(), 4);

    let o = run(&["decode", "--model", p(&model), "--manifest", p(&test), "--beam", "1"]);
    let lines: Vec<String> = stdout(&o).lines().map(String::from).collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("test-b-0000\t"));

    // Weight without an LM is a runtime error.
    let o = tog(&["decode", "--model", p(&model), "--manifest", p(&test), "--fusion-weight", "0.5"]);
    assert_eq!(o.status.code(), Some(2));
}
