use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ctc_slu::trainer::AblationMode;
use ctc_slu_cli::commands;
use ctc_slu_cli::config::{parse_assignment, resolve, ConfigSources, RunConfig};
use ctc_slu_cli::error::{CliError, CliResult};
use ctc_slu_cli::verify::{self, Mutations};

#[derive(Parser)]
#[command(name = "ctc-slu", version, about = "CTC-based end-to-end spoken language understanding")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML file with `corpus`, `model`, `train` and `out` sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override any config field, e.g. `--set train.lr=0.001` (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Master seed for both corpus generation and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Dataset directory (`out.data_dir`).
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Parent directory of run outputs (`out.runs_dir`).
    #[arg(long, global = true)]
    runs: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus.
    Gen,
    /// Train one ablation mode (default: the full system).
    Train {
        #[arg(long)]
        ablation: Option<String>,
        #[arg(long)]
        alpha_ctc: Option<f64>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        joint_epochs: Option<usize>,
    },
    /// Report accuracy, WER, CER, error-subset accuracy and confusion counts.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "test")]
        split: String,
        /// Checkpoint to evaluate instead of the run's final one.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Second checkpoint (e.g. the run's asr.ckpt) for a before/after WER pair.
        #[arg(long)]
        before: Option<PathBuf>,
    },
    /// Write greedy transcripts as `id<TAB>tokens`, sorted by id.
    Decode {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train every ablation mode and print the comparison table.
    Ablate {
        /// Comma-separated subset of modes.
        #[arg(long, value_delimiter = ',')]
        modes: Vec<String>,
    },
    /// Run the oracle suites.
    Verify {
        #[arg(long, hide = true)]
        inject_ctc_sign_flip: bool,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Run directory (default: `<runs>/<train.ablation>`).
    #[arg(long)]
    run: Option<PathBuf>,
    #[arg(long)]
    ablation: Option<String>,
}

fn push(overrides: &mut Vec<String>, key: &str, value: Option<impl ToString>, quote: bool) {
    if let Some(v) = value {
        let v = v.to_string();
        overrides.push(if quote { format!("{key}={v:?}") } else { format!("{key}={v}") });
    }
}

fn load_config(common: &Common, extra: Vec<String>) -> CliResult<RunConfig> {
    let mut flags = Vec::new();
    push(&mut flags, "corpus.seed", common.seed, false);
    push(&mut flags, "train.seed", common.seed, false);
    push(&mut flags, "out.data_dir", common.data.as_ref().map(|p| p.display()), true);
    push(&mut flags, "out.runs_dir", common.runs.as_ref().map(|p| p.display()), true);
    flags.extend(common.set.iter().cloned());
    flags.extend(extra);
    let overrides = flags.iter().map(|s| parse_assignment(s)).collect::<CliResult<Vec<_>>>()?;
    resolve(&ConfigSources::from_env(common.config.clone(), overrides))
}

fn ablation_flag(flags: &mut Vec<String>, ablation: Option<&String>) -> CliResult<()> {
    if let Some(a) = ablation {
        a.parse::<AblationMode>()?;
        flags.push(format!("train.ablation={a:?}"));
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Gen => {
            commands::cmd_gen(&load_config(&cli.common, Vec::new())?)?;
        }
        Command::Train { ablation, alpha_ctc, lr, batch_size, joint_epochs } => {
            let mut flags = Vec::new();
            ablation_flag(&mut flags, ablation.as_ref())?;
            push(&mut flags, "train.alpha_ctc", alpha_ctc, false);
            push(&mut flags, "train.lr", lr, false);
            push(&mut flags, "train.batch_size", batch_size, false);
            push(&mut flags, "train.joint_epochs", joint_epochs, false);
            commands::cmd_train(&load_config(&cli.common, flags)?)?;
        }
        Command::Eval { run, split, checkpoint, before } => {
            let mut flags = Vec::new();
            ablation_flag(&mut flags, run.ablation.as_ref())?;
            let config = load_config(&cli.common, flags)?;
            let dir = run.run.unwrap_or_else(|| config.run_dir());
            commands::cmd_eval(&config, &dir, checkpoint.as_deref(), before.as_deref(), &split)?;
        }
        Command::Decode { run, split, output } => {
            let mut flags = Vec::new();
            ablation_flag(&mut flags, run.ablation.as_ref())?;
            let config = load_config(&cli.common, flags)?;
            let dir = run.run.unwrap_or_else(|| config.run_dir());
            commands::cmd_decode(&config, &dir, &split, output.as_deref())?;
        }
        Command::Ablate { modes } => {
            let config = load_config(&cli.common, Vec::new())?;
            let modes = if modes.is_empty() {
                AblationMode::ALL.to_vec()
            } else {
                modes.iter().map(|m| m.parse()).collect::<Result<Vec<AblationMode>, _>>()?
            };
            commands::cmd_ablate(&config, &modes)?;
        }
        Command::Verify { inject_ctc_sign_flip } => {
            let reports = verify::run_all(Mutations { flip_ctc_grad_sign: inject_ctc_sign_flip })?;
            for r in &reports {
                println!("{}", r.line());
            }
            let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
            if !failed.is_empty() {
                return Err(CliError::Verification(failed.join(", ")));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
