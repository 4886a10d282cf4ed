use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use ctc_slu::model::{ModelConfig, SluModel};
use ctc_slu::nn::ParamStore;
use ctc_slu::synth::{generate_corpus, read_corpus, write_corpus, Corpus, Manifest, Utterance};
use ctc_slu::trainer::{
    asr_metrics, evaluate_predictions, run_ablation_cached, AblationMode, AblationOutcome,
    BagOfTokens, Evaluation, ParamCounts, Phase, TrainConfig, TrainLog,
};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const CHECKPOINT: &str = "model.ckpt";
pub const ASR_CHECKPOINT: &str = "asr.ckpt";
pub const CASCADE_CHECKPOINT: &str = "cascade.ckpt";
pub const SIDECAR: &str = "model.json";
pub const LOG_FILE: &str = "train_log.csv";
pub const SUMMARY: &str = "summary.json";

/// Architecture record stored next to every checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub architecture_hash: String,
    pub model: ModelConfig,
    pub ablation: AblationMode,
    pub cascade: bool,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: AblationMode,
    pub test: Evaluation,
    pub valid_wer_before_joint: Option<f64>,
    pub valid_wer_after_joint: Option<f64>,
    pub best_valid_accuracy: Option<f64>,
    pub best_asr_epoch: Option<usize>,
    pub best_epoch: Option<usize>,
    pub params: ParamCounts,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> CliResult<Corpus> {
    if !dir.join("manifest.json").is_file() {
        return Err(CliError::Data(format!(
            "no dataset at {} (run `gen` first)",
            dir.display()
        )));
    }
    Ok(read_corpus(dir)?)
}

pub fn cmd_gen(config: &RunConfig) -> CliResult<Manifest> {
    let corpus = generate_corpus(&config.corpus)?;
    let dir = &config.out.data_dir;
    let manifest = write_corpus(&corpus, dir)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", dir.display())))?;
    config.write_echo(dir)?;
    println!(
        "wrote {} / {} / {} utterances with {} intents to {}",
        corpus.train.len(),
        corpus.valid.len(),
        corpus.test.len(),
        corpus.labels.len(),
        dir.display()
    );
    println!("config hash {}", manifest.config_hash);
    Ok(manifest)
}

fn check_compatible(model: &ModelConfig, corpus: &Corpus) -> CliResult<()> {
    if model.vocab_size != corpus.vocab.len() || model.num_labels != corpus.labels.len() {
        return Err(CliError::Config(format!(
            "model expects {} tokens and {} labels but the dataset has {} and {}",
            model.vocab_size,
            model.num_labels,
            corpus.vocab.len(),
            corpus.labels.len()
        )));
    }
    if let Some(u) = corpus.train.first() {
        if u.frames.cols() != model.feature_dim {
            return Err(CliError::Config(format!(
                "model expects {}-dimensional frames but the dataset has {}",
                model.feature_dim,
                u.frames.cols()
            )));
        }
    }
    Ok(())
}

fn best_valid_accuracy(log: &TrainLog) -> Option<f64> {
    let best = log.best_epoch?;
    log.records
        .iter()
        .filter(|r| r.phase != Phase::Asr)
        .find(|r| r.epoch == best)
        .and_then(|r| r.valid_acc)
}

fn summary_of(o: &AblationOutcome) -> RunSummary {
    RunSummary {
        mode: o.mode,
        test: o.test.clone(),
        valid_wer_before_joint: o.valid_wer_before_joint,
        valid_wer_after_joint: o.valid_wer_after_joint,
        best_valid_accuracy: best_valid_accuracy(&o.log),
        best_asr_epoch: o.log.best_asr_epoch,
        best_epoch: o.log.best_epoch,
        params: o.params,
    }
}

/// Writes checkpoints, sidecar, log and summary of one trained run.
pub fn write_run(dir: &Path, outcome: &AblationOutcome, train: &TrainConfig) -> CliResult<RunSummary> {
    fs::create_dir_all(dir)?;
    let model = &outcome.model;
    fs::write(dir.join(CHECKPOINT), model.params.to_checkpoint_bytes())?;
    match &outcome.asr_params {
        Some(p) => fs::write(dir.join(ASR_CHECKPOINT), p.to_checkpoint_bytes())?,
        None => remove_if_present(&dir.join(ASR_CHECKPOINT))?,
    }
    match &outcome.cascade {
        Some(c) => fs::write(dir.join(CASCADE_CHECKPOINT), c.params.to_checkpoint_bytes())?,
        None => remove_if_present(&dir.join(CASCADE_CHECKPOINT))?,
    }
    let sidecar = Sidecar {
        architecture_hash: model.config.architecture_hash(),
        model: model.config.clone(),
        ablation: outcome.mode,
        cascade: outcome.cascade.is_some(),
        train: TrainConfig { ablation: outcome.mode, ..train.clone() },
    };
    write_json(&dir.join(SIDECAR), &sidecar)?;
    fs::write(dir.join(LOG_FILE), outcome.log.to_csv())?;
    let summary = summary_of(outcome);
    write_json(&dir.join(SUMMARY), &summary)?;
    Ok(summary)
}

fn remove_if_present(path: &Path) -> CliResult<()> {
    match fs::remove_file(path) {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(e.into()),
        _ => Ok(()),
    }
}

fn print_summary(s: &RunSummary) {
    println!(
        "{}: test accuracy {:.4}, WER {:.4}, CER {:.4}",
        s.mode, s.test.accuracy, s.test.wer, s.test.cer
    );
    if let (Some(before), Some(after)) = (s.valid_wer_before_joint, s.valid_wer_after_joint) {
        println!("valid WER before joint {before:.4}, after joint {after:.4}");
    }
}

pub fn cmd_train(config: &RunConfig) -> CliResult<RunSummary> {
    let corpus = load_dataset(&config.out.data_dir)?;
    check_compatible(&config.model, &corpus)?;
    let dir = config.run_dir();
    config.write_echo(&dir)?;
    let outcome = run_ablation_cached(
        config.train.ablation,
        &corpus,
        &config.model,
        &config.train,
        &mut BTreeMap::new(),
    )?;
    let summary = write_run(&dir, &outcome, &config.train)?;
    print_summary(&summary);
    println!("artifacts in {}", dir.display());
    Ok(summary)
}

/// A trained system loaded from a run directory.
pub struct LoadedRun {
    pub sidecar: Sidecar,
    pub model: SluModel,
    pub cascade: Option<BagOfTokens>,
}

fn read_params(path: &Path) -> CliResult<ParamStore> {
    let bytes = fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(ParamStore::from_checkpoint_bytes(&bytes)?)
}

fn mismatch(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{} does not match the run architecture: {e}", path.display()))
}

pub fn load_run(dir: &Path, checkpoint: Option<&Path>) -> CliResult<LoadedRun> {
    let sidecar_path = dir.join(SIDECAR);
    let bytes = fs::read(&sidecar_path)
        .map_err(|e| CliError::Data(format!("{}: {e}", sidecar_path.display())))?;
    let sidecar: Sidecar = serde_json::from_slice(&bytes)
        .map_err(|e| CliError::Data(format!("{}: {e}", sidecar_path.display())))?;
    if sidecar.model.architecture_hash() != sidecar.architecture_hash {
        return Err(CliError::Data(format!(
            "{}: architecture hash does not match its model config",
            sidecar_path.display()
        )));
    }
    let ckpt = checkpoint.map_or_else(|| dir.join(CHECKPOINT), Path::to_path_buf);
    let model = SluModel::from_params(sidecar.model.clone(), read_params(&ckpt)?)
        .map_err(|e| mismatch(&ckpt, e))?;
    let cascade = if sidecar.cascade {
        let path = dir.join(CASCADE_CHECKPOINT);
        let c = model.config.clone();
        Some(BagOfTokens::from_params(c.vocab_size, c.num_labels, read_params(&path)?).map_err(|e| mismatch(&path, e))?)
    } else {
        None
    };
    Ok(LoadedRun { sidecar, model, cascade })
}

impl LoadedRun {
    pub fn predictions(&self, utterances: &[Utterance]) -> CliResult<Vec<ctc_slu::model::Prediction>> {
        utterances
            .iter()
            .map(|u| -> CliResult<_> {
                let mut p = self.model.predict(&u.frames)?;
                if let Some(c) = &self.cascade {
                    p.label = c.predict(&p.decoded)?;
                }
                Ok(p)
            })
            .collect()
    }
}

fn split_of<'a>(corpus: &'a Corpus, split: &str) -> CliResult<&'a [Utterance]> {
    corpus.split(split).map_err(|_| CliError::Data(format!("no split named {split:?}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: String,
    pub mode: AblationMode,
    pub metrics: Evaluation,
    /// WER and CER of the `--before` checkpoint on the same split.
    pub before: Option<(f64, f64)>,
}

pub fn format_eval(report: &EvalReport, labels: &[String]) -> String {
    let m = &report.metrics;
    let mut out = String::new();
    let _ = writeln!(out, "split {} ({} utterances, {})", report.split, m.count, report.mode);
    let _ = writeln!(out, "accuracy {:.4}", m.accuracy);
    match report.before {
        Some((wer, cer)) => {
            let _ = writeln!(out, "WER {:.4} (before {:.4})", m.wer, wer);
            let _ = writeln!(out, "CER {:.4} (before {:.4})", m.cer, cer);
        }
        None => {
            let _ = writeln!(out, "WER {:.4}", m.wer);
            let _ = writeln!(out, "CER {:.4}", m.cer);
        }
    }
    match m.error_subset_accuracy {
        Some(a) => {
            let _ = writeln!(out, "accuracy on {} utterances with ASR errors {:.4}", m.error_subset_size, a);
        }
        None => {
            let _ = writeln!(out, "accuracy on utterances with ASR errors: n/a (no ASR errors)");
        }
    }
    let _ = writeln!(out, "confusion (rows = reference, columns = predicted):");
    for (label, row) in labels.iter().zip(&m.confusion) {
        let cells: Vec<String> = row.iter().map(|c| format!("{c:>4}")).collect();
        let _ = writeln!(out, "  {label:<20} {}", cells.join(""));
    }
    out
}

pub fn cmd_eval(
    config: &RunConfig,
    run_dir: &Path,
    checkpoint: Option<&Path>,
    before: Option<&Path>,
    split: &str,
) -> CliResult<EvalReport> {
    let corpus = load_dataset(&config.out.data_dir)?;
    let run = load_run(run_dir, checkpoint)?;
    check_compatible(&run.model.config, &corpus)?;
    let utts = split_of(&corpus, split)?;
    let predictions = run.predictions(utts)?;
    let metrics = evaluate_predictions(utts, &predictions, &corpus.vocab, run.model.config.num_labels)?;
    let before = match before {
        Some(path) => {
            let prior = load_run(run_dir, Some(path))?;
            let p = prior.predictions(utts)?;
            let e = evaluate_predictions(utts, &p, &corpus.vocab, prior.model.config.num_labels)?;
            Some((e.wer, e.cer))
        }
        None => None,
    };
    let report = EvalReport {
        split: split.to_string(),
        mode: run.sidecar.ablation,
        metrics,
        before,
    };
    print!("{}", format_eval(&report, &corpus.labels));
    write_json(&run_dir.join(format!("eval_{split}.json")), &report)?;
    Ok(report)
}

/// `id<TAB>tokens` lines sorted by id.
pub fn decode_lines(run: &LoadedRun, utts: &[Utterance], vocab: &[String]) -> CliResult<String> {
    let mut rows: Vec<(&str, String)> = Vec::with_capacity(utts.len());
    for u in utts {
        let tokens = run.model.decode(&u.frames)?;
        let words: Vec<&str> = tokens.iter().map(|&t| vocab[t].as_str()).collect();
        rows.push((&u.id, words.join(" ")));
    }
    rows.sort();
    let mut out = String::new();
    for (id, text) in rows {
        out.push_str(id);
        out.push('\t');
        out.push_str(&text);
        out.push('\n');
    }
    Ok(out)
}

pub fn cmd_decode(config: &RunConfig, run_dir: &Path, split: &str, output: Option<&Path>) -> CliResult<PathBuf> {
    let corpus = load_dataset(&config.out.data_dir)?;
    let run = load_run(run_dir, None)?;
    check_compatible(&run.model.config, &corpus)?;
    let text = decode_lines(&run, split_of(&corpus, split)?, &corpus.vocab)?;
    let path = output.map_or_else(|| run_dir.join(format!("decode_{split}.tsv")), Path::to_path_buf);
    fs::write(&path, text)?;
    println!("wrote {}", path.display());
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mode: AblationMode,
    pub summary: Option<RunSummary>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingCheck {
    pub description: String,
    /// `None` when a row it needs failed.
    pub holds: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub alpha_ctc: f64,
    pub summary: Option<RunSummary>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub orderings: Vec<OrderingCheck>,
    pub grid: Vec<GridRow>,
}

impl AblationReport {
    pub fn accuracy(&self, mode: AblationMode) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.mode == mode)
            .and_then(|r| r.summary.as_ref())
            .map(|s| s.test.accuracy)
    }
}

/// Orderings between ablation rows, in accuracy points.
pub fn ordering_checks(acc: impl Fn(AblationMode) -> Option<f64>) -> Vec<OrderingCheck> {
    use AblationMode::*;
    let pts = |m| acc(m).map(|a| 100.0 * a);
    let check = |description: &str, holds: Option<bool>| OrderingCheck {
        description: description.to_string(),
        holds,
    };
    let pair = |a, b| Some((pts(a)?, pts(b)?));
    vec![
        check("full > no_ctc by at least 2 points", pair(Full, NoCtc).map(|(f, n)| f - n >= 2.0)),
        check(
            "full > frozen_encoder by at least 5 points",
            pair(Full, FrozenEncoder).map(|(f, z)| f - z >= 5.0),
        ),
        check(
            "full >= prob_tap within 0.5 points",
            pair(Full, ProbTap).map(|(f, p)| f >= p - 0.5),
        ),
        check(
            "hidden_tap within 1 point of full",
            pair(Full, HiddenTap).map(|(f, h)| (f - h).abs() <= 1.0),
        ),
        check("full > cascade", pair(Full, Cascade).map(|(f, c)| f > c)),
    ]
}

fn fmt_opt(v: Option<f64>, scale: f64) -> String {
    v.map(|x| format!("{:.2}", x * scale)).unwrap_or_else(|| "-".into())
}

pub fn format_ablation(report: &AblationReport) -> String {
    let mut out = String::from("mode\ttest_acc\ttest_wer\tvalid_wer_before\tvalid_wer_after\thead_params\ttotal_params\tstatus\n");
    for row in &report.rows {
        match &row.summary {
            Some(s) => {
                let _ = writeln!(
                    out,
                    "{}\t{:.2}\t{:.2}\t{}\t{}\t{}\t{}\tok",
                    row.mode,
                    100.0 * s.test.accuracy,
                    100.0 * s.test.wer,
                    fmt_opt(s.valid_wer_before_joint, 100.0),
                    fmt_opt(s.valid_wer_after_joint, 100.0),
                    s.params.head,
                    s.params.total
                );
            }
            None => {
                let _ = writeln!(
                    out,
                    "{}\t-\t-\t-\t-\t-\t-\tfailed: {}",
                    row.mode,
                    row.error.as_deref().unwrap_or("unknown error")
                );
            }
        }
    }
    out
}

pub fn format_orderings(checks: &[OrderingCheck]) -> String {
    let mut out = String::new();
    for c in checks {
        let status = match c.holds {
            Some(true) => "holds",
            Some(false) => "VIOLATED",
            None => "n/a",
        };
        let _ = writeln!(out, "{status:<9}{}", c.description);
    }
    out
}

pub fn format_grid(grid: &[GridRow]) -> String {
    let mut out = String::from("alpha_ctc\tbest_valid_acc\ttest_acc\ttest_wer\n");
    for g in grid {
        match &g.summary {
            Some(s) => {
                let _ = writeln!(
                    out,
                    "{}\t{}\t{:.2}\t{:.2}",
                    g.alpha_ctc,
                    fmt_opt(s.best_valid_accuracy, 100.0),
                    100.0 * s.test.accuracy,
                    100.0 * s.test.wer
                );
            }
            None => {
                let _ = writeln!(out, "{}\t-\t-\t-\tfailed: {}", g.alpha_ctc, g.error.as_deref().unwrap_or(""));
            }
        }
    }
    out
}

/// Runs the requested modes with a shared corpus, seed and ASR warm-up,
/// then any `alpha_ctc_grid` sweep of the full configuration.
pub fn run_ablations(config: &RunConfig, corpus: &Corpus, modes: &[AblationMode], out_dir: &Path) -> CliResult<AblationReport> {
    check_compatible(&config.model, corpus)?;
    let mut cache = BTreeMap::new();
    let mut rows = Vec::new();
    for &mode in modes {
        log::info!("ablation mode {mode}");
        let row = match run_ablation_cached(mode, corpus, &config.model, &config.train, &mut cache) {
            Ok(outcome) => AblationRow {
                mode,
                summary: Some(write_run(&out_dir.join(mode.name()), &outcome, &config.train)?),
                error: None,
            },
            Err(e) => {
                log::error!("mode {mode} failed: {e}");
                AblationRow { mode, summary: None, error: Some(e.to_string()) }
            }
        };
        rows.push(row);
    }
    let mut grid = Vec::new();
    for &alpha in &config.train.alpha_ctc_grid {
        let train = TrainConfig { alpha_ctc: alpha, ..config.train.clone() };
        let row = match run_ablation_cached(AblationMode::Full, corpus, &config.model, &train, &mut cache) {
            Ok(outcome) => GridRow { alpha_ctc: alpha, summary: Some(summary_of(&outcome)), error: None },
            Err(e) => GridRow { alpha_ctc: alpha, summary: None, error: Some(e.to_string()) },
        };
        grid.push(row);
    }
    let acc = |m: AblationMode| {
        rows.iter()
            .find(|r| r.mode == m)
            .and_then(|r| r.summary.as_ref())
            .map(|s| s.test.accuracy)
    };
    let orderings = ordering_checks(acc);
    Ok(AblationReport { rows, orderings, grid })
}

pub fn cmd_ablate(config: &RunConfig, modes: &[AblationMode]) -> CliResult<AblationReport> {
    let corpus = load_dataset(&config.out.data_dir)?;
    let dir = config.out.runs_dir.join("ablate");
    config.write_echo(&dir)?;
    let report = run_ablations(config, &corpus, modes, &dir)?;
    let table = format_ablation(&report);
    let orderings = format_orderings(&report.orderings);
    print!("{table}\n{orderings}");
    fs::write(dir.join("ablation.tsv"), &table)?;
    if !report.grid.is_empty() {
        let grid = format_grid(&report.grid);
        print!("\n{grid}");
        fs::write(dir.join("alpha_grid.tsv"), grid)?;
    }
    write_json(&dir.join("ablation.json"), &report)?;
    Ok(report)
}

/// Validation WER of a run's final and post-ASR checkpoints.
pub fn valid_wer_pair(run_dir: &Path, corpus: &Corpus) -> CliResult<(Option<f64>, f64)> {
    let after = load_run(run_dir, None)?;
    let (_, after_wer) = asr_metrics(&after.model, &corpus.valid)?;
    let asr = run_dir.join(ASR_CHECKPOINT);
    let before = if asr.is_file() {
        Some(asr_metrics(&load_run(run_dir, Some(&asr))?.model, &corpus.valid)?.1)
    } else {
        None
    };
    Ok((before, after_wer))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orderings_use_points() {
        use AblationMode::*;
        let acc = |m| match m {
            Full => Some(0.97),
            NoCtc => Some(0.95),
            FrozenEncoder => Some(0.5),
            ProbTap => Some(0.974),
            HiddenTap => Some(0.955),
            Cascade => None,
            CnnEncoder => Some(0.9),
        };
        let holds: Vec<Option<bool>> = ordering_checks(acc).into_iter().map(|c| c.holds).collect();
        assert_eq!(holds, vec![Some(true), Some(true), Some(true), Some(false), None]);
    }

    #[test]
    fn failed_rows_are_marked() {
        let report = AblationReport {
            rows: vec![AblationRow { mode: AblationMode::Cascade, summary: None, error: Some("boom".into()) }],
            orderings: Vec::new(),
            grid: Vec::new(),
        };
        let table = format_ablation(&report);
        assert!(table.lines().nth(1).unwrap().starts_with("cascade\t-"));
        assert!(table.contains("failed: boom"));
    }
}
