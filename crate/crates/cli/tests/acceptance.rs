//! Acceptance run. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use ctc_slu::synth::generate_corpus;
use ctc_slu::trainer::{run_ablation_cached, AblationMode, AblationOutcome};
use ctc_slu_cli::config::{resolve, ConfigSources, RunConfig};
use ctc_slu_cli::verify::{
    ctc_gradient_error, ctc_sweep, edit_distance_disagreements, gradcheck_model, joint_gradient_error,
    Mutations,
};
use ctc_slu::metrics::edit_distance;
use ctc_slu::model::{TapMode, UtteranceEncoderKind};

struct Line {
    id: u32,
    passed: bool,
    text: String,
}

fn report(lines: &mut Vec<Line>, id: u32, passed: bool, text: String) {
    println!("{} criterion {id}: {text}", if passed { "PASS" } else { "FAIL" });
    lines.push(Line { id, passed, text });
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn ctc_criteria(lines: &mut Vec<Line>) {
    let start = Instant::now();
    let s = ctc_sweep(10, 2024).expect("ctc sweep");
    let elapsed = start.elapsed();
    report(
        lines,
        1,
        s.instances >= 200 && s.max_likelihood_error < 1e-9 && elapsed < Duration::from_secs(30),
        format!(
            "CTC vs enumeration over {} instances ({} feasible), max |error| {:.2e}, {:.2}s",
            s.instances,
            s.feasible,
            s.max_likelihood_error,
            secs(elapsed)
        ),
    );
    report(
        lines,
        3,
        s.max_frame_total_error < 1e-9,
        format!("per-frame alpha+beta totals, max |error| {:.2e}", s.max_frame_total_error),
    );
}

fn gradient_criterion(lines: &mut Vec<Line>) {
    let start = Instant::now();
    let ctc = ctc_gradient_error(50, 31, Mutations::default()).expect("ctc gradient");
    let joint = joint_gradient_error(
        gradcheck_model(TapMode::Logits, UtteranceEncoderKind::Dense),
        17,
        usize::MAX,
    )
    .expect("joint gradient");
    let elapsed = start.elapsed();
    report(
        lines,
        2,
        ctc < 1e-4 && joint < 1e-4 && elapsed < Duration::from_secs(60),
        format!(
            "finite differences at h=1e-5: CTC {ctc:.2e}, joint model {joint:.2e}, {:.1}s",
            secs(elapsed)
        ),
    );
}

fn metrics_criterion(lines: &mut Vec<Line>) {
    let (bad, pairs) = edit_distance_disagreements(6);
    let kitten: Vec<char> = "kitten".chars().collect();
    let sitting: Vec<char> = "sitting".chars().collect();
    let k = edit_distance(&kitten, &sitting).errors();
    report(
        lines,
        7,
        bad == 0 && k == 3,
        format!("edit distance disagreements {bad} of {pairs} pairs, kitten/sitting = {k}"),
    );
}

fn default_config() -> RunConfig {
    resolve(&ConfigSources::default()).expect("default config")
}

fn training_criteria(lines: &mut Vec<Line>) {
    let config = default_config();
    let corpus = generate_corpus(&config.corpus).expect("default corpus");
    let mut cache = BTreeMap::new();
    let mut runs: BTreeMap<&str, (AblationOutcome, Duration)> = BTreeMap::new();
    for mode in [AblationMode::Full, AblationMode::NoCtc, AblationMode::FrozenEncoder, AblationMode::HiddenTap] {
        let start = Instant::now();
        let outcome = run_ablation_cached(mode, &corpus, &config.model, &config.train, &mut cache)
            .expect("ablation run");
        let elapsed = start.elapsed();
        println!(
            "     {mode}: test accuracy {:.4}, WER {:.4}, {:.0}s",
            outcome.test.accuracy,
            outcome.test.wer,
            secs(elapsed)
        );
        runs.insert(mode.name(), (outcome, elapsed));
    }
    let pts = |m: &str| 100.0 * runs[m].0.test.accuracy;
    let (full, full_time) = &runs["full"];
    report(
        lines,
        4,
        full.test.accuracy >= 0.95 && full.test.wer <= 0.05 && *full_time < Duration::from_secs(600),
        format!(
            "full: test accuracy {:.4}, WER {:.4}, {:.0}s",
            full.test.accuracy,
            full.test.wer,
            secs(*full_time)
        ),
    );
    let (gap_ctc, gap_frozen) = (pts("full") - pts("no_ctc"), pts("full") - pts("frozen_encoder"));
    report(
        lines,
        5,
        gap_ctc >= 2.0 && gap_frozen >= 5.0,
        format!(
            "accuracy points full {:.2}, no_ctc {:.2} (gap {gap_ctc:+.2}), frozen_encoder {:.2} (gap {gap_frozen:+.2})",
            pts("full"),
            pts("no_ctc"),
            pts("frozen_encoder")
        ),
    );
    let tap_gap = pts("full") - pts("hidden_tap");
    report(
        lines,
        6,
        tap_gap.abs() <= 1.0,
        format!("logits tap {:.2} vs hidden tap {:.2} (gap {tap_gap:+.2})", pts("full"), pts("hidden_tap")),
    );
    let (before, after) = (full.valid_wer_before_joint.unwrap(), full.valid_wer_after_joint.unwrap());
    report(
        lines,
        9,
        after <= before + 0.02,
        format!("valid WER before joint {before:.4}, after {after:.4}"),
    );
}

fn determinism_criterion(lines: &mut Vec<Line>) {
    let ws = tempfile::tempdir().expect("tempdir");
    let d = ws.path();
    std::fs::write(
        d.join("run.toml"),
        "[corpus]\ntrain_size = 200\nvalid_size = 40\ntest_size = 40\n[train]\nmax_asr_epochs = 2\njoint_epochs = 2\n",
    )
    .expect("write config");
    let run = |args: &[&str]| {
        let out = Command::new(env!("CARGO_BIN_EXE_ctc-slu"))
            .current_dir(d)
            .env_remove("CTC_SLU_SEED")
            .args(["--config", "run.toml"])
            .args(args)
            .output()
            .expect("spawn ctc-slu");
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    };
    run(&["gen"]);
    run(&["--runs", "a", "train", "--ablation", "full"]);
    run(&["--runs", "b", "train", "--ablation", "full"]);
    let same = |f: &str| {
        let read = |r: &str| std::fs::read(Path::new(d).join(r).join("full").join(f)).expect("artifact");
        read("a") == read("b")
    };
    let (ckpt, log) = (same("model.ckpt"), same("train_log.csv"));
    report(
        lines,
        8,
        ckpt && log,
        format!("two `train --ablation full` runs: checkpoint identical {ckpt}, train log identical {log}"),
    );
}

fn main() {
    let mut lines = Vec::new();
    ctc_criteria(&mut lines);
    gradient_criterion(&mut lines);
    metrics_criterion(&mut lines);
    determinism_criterion(&mut lines);
    training_criteria(&mut lines);

    lines.sort_by_key(|l| l.id);
    println!("\nsummary");
    for l in &lines {
        println!("{} criterion {}: {}", if l.passed { "PASS" } else { "FAIL" }, l.id, l.text);
    }
    let failed = lines.iter().filter(|l| !l.passed).count();
    if failed > 0 {
        println!("{failed} of {} criteria failed", lines.len());
        std::process::exit(1);
    }
    println!("all {} criteria passed", lines.len());
}
