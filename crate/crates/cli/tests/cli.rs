use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
[corpus]
train_size = 48
valid_size = 12
test_size = 12

[model]
utterance_hidden = 8
conv_layers = [
    { kernel = 3, stride = 1, channels = 8 },
    { kernel = 3, stride = 2, channels = 8 },
]

[train]
max_asr_epochs = 2
joint_epochs = 2
batch_size = 8
"#;

fn ctc_slu(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctc-slu"))
        .current_dir(dir)
        .env_remove("CTC_SLU_SEED")
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    dir
}

#[test]
fn gen_train_eval_decode() {
    let ws = workspace();
    let d = ws.path();
    ok(&ctc_slu(d, &["--config", "tiny.toml", "gen"]));
    for f in ["train.jsonl", "valid.jsonl", "test.jsonl", "manifest.json", "config.toml"] {
        assert!(d.join("data").join(f).is_file(), "{f}");
    }
    let out = ok(&ctc_slu(d, &["--config", "tiny.toml", "train", "--ablation", "full"]));
    assert!(out.contains("test accuracy"), "{out}");
    let run = d.join("runs/full");
    for f in ["model.ckpt", "asr.ckpt", "model.json", "train_log.csv", "summary.json", "config.toml"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let log = std::fs::read_to_string(run.join("train_log.csv")).unwrap();
    assert!(log.starts_with("epoch,phase,ctc_loss,slu_loss,valid_acc,valid_wer,seconds\n"));
    assert_eq!(log.lines().count(), 1 + 2 + 2);

    let out = ok(&ctc_slu(d, &["--config", "tiny.toml", "eval", "--before", "runs/full/asr.ckpt"]));
    assert!(out.contains("accuracy") && out.contains("WER"), "{out}");
    assert!(run.join("eval_test.json").is_file());

    ok(&ctc_slu(d, &["--config", "tiny.toml", "decode", "--output", "a.tsv"]));
    ok(&ctc_slu(d, &["--config", "tiny.toml", "decode", "--output", "b.tsv"]));
    let a = std::fs::read(d.join("a.tsv")).unwrap();
    assert_eq!(a, std::fs::read(d.join("b.tsv")).unwrap());
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().count(), 12);
    let ids: Vec<&str> = text.lines().map(|l| l.split('\t').next().unwrap()).collect();
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);
}

#[test]
fn cascade_and_no_ctc_runs() {
    let ws = workspace();
    let d = ws.path();
    ok(&ctc_slu(d, &["--config", "tiny.toml", "gen"]));
    ok(&ctc_slu(d, &["--config", "tiny.toml", "train", "--ablation", "cascade"]));
    assert!(d.join("runs/cascade/cascade.ckpt").is_file());
    ok(&ctc_slu(d, &["--config", "tiny.toml", "eval", "--ablation", "cascade"]));
    ok(&ctc_slu(d, &["--config", "tiny.toml", "train", "--ablation", "no_ctc"]));
    assert!(!d.join("runs/no_ctc/asr.ckpt").exists());
}

#[test]
fn exit_codes() {
    let ws = workspace();
    let d = ws.path();
    // training without a dataset
    assert_eq!(ctc_slu(d, &["--config", "tiny.toml", "train"]).status.code(), Some(3));
    // unknown config field and unknown ablation
    assert_eq!(ctc_slu(d, &["--set", "train.bogus=1", "gen"]).status.code(), Some(2));
    assert_eq!(ctc_slu(d, &["train", "--ablation", "nope"]).status.code(), Some(2));
    assert_eq!(ctc_slu(d, &["--config", "missing.toml", "gen"]).status.code(), Some(2));
    let env_bad = Command::new(env!("CARGO_BIN_EXE_ctc-slu"))
        .current_dir(d)
        .env("CTC_SLU_SEED", "abc")
        .arg("gen")
        .output()
        .unwrap();
    assert_eq!(env_bad.status.code(), Some(2));

    // a checkpoint from a different architecture
    ok(&ctc_slu(d, &["--config", "tiny.toml", "gen"]));
    ok(&ctc_slu(d, &["--config", "tiny.toml", "train"]));
    let other = ok(&ctc_slu(d, &["--config", "tiny.toml", "--set", "model.utterance_hidden=4", "--runs", "other", "train"]));
    assert!(!other.is_empty());
    let mismatch = ctc_slu(d, &["--config", "tiny.toml", "eval", "--checkpoint", "other/full/model.ckpt"]);
    assert_eq!(mismatch.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&mismatch.stderr).contains("does not match"));
}

#[test]
fn verify_passes_and_detects_a_sign_flip() {
    let ws = workspace();
    let d = ws.path();
    let out = ok(&ctc_slu(d, &["verify"]));
    assert!(out.lines().all(|l| l.starts_with("PASS")), "{out}");
    let flipped = ctc_slu(d, &["verify", "--inject-ctc-sign-flip"]);
    assert_eq!(flipped.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&flipped.stdout).contains("FAIL"));
}

#[test]
fn env_seed_changes_the_corpus() {
    let ws = workspace();
    let d = ws.path();
    ok(&ctc_slu(d, &["--config", "tiny.toml", "gen"]));
    let seeded = Command::new(env!("CARGO_BIN_EXE_ctc-slu"))
        .current_dir(d)
        .env("CTC_SLU_SEED", "77")
        .args(["--config", "tiny.toml", "--data", "seeded", "gen"])
        .output()
        .unwrap();
    ok(&seeded);
    let a = std::fs::read(d.join("data/train.jsonl")).unwrap();
    let b = std::fs::read(d.join("seeded/train.jsonl")).unwrap();
    assert_ne!(a, b);
    let echo = std::fs::read_to_string(d.join("seeded/config.toml")).unwrap();
    assert!(echo.contains("seed = 77"), "{echo}");
}
