use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use episodic_cli::commands::{self, AnalyzeArgs};
use episodic_cli::{overrides, ExperimentConfig};
use episodic_core::sampler::SchemeKind;
use serde_json::json;

/// Episodic few-shot training with importance-weighted episode difficulty.
///
/// Any scalar config leaf can be overridden with a dotted flag, e.g.
/// `--train.batch_size 32` or `--scheme.kind=uniform`.
#[derive(Parser)]
#[command(name = "episodic", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset into dataset.path.
    GenData {
        #[arg(long)]
        config: PathBuf,
        /// Overwrite an existing dataset directory.
        #[arg(long)]
        force: bool,
    },
    /// Train, select the best validation checkpoint and evaluate it.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a checkpoint on test episodes.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// One training run per scheme, everything else fixed.
    CompareSchemes {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        schemes: Vec<SchemeKind>,
    },
    /// Difficulty analyses over a fixed set of test episodes.
    Analyze {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Size of the episode pool when no episode file is given.
        #[arg(long, default_value_t = 10_000)]
        episodes: usize,
        /// Reuse a saved episode list (class id, sample index) exactly.
        #[arg(long)]
        episode_file: Option<PathBuf>,
        #[arg(long)]
        qq: bool,
        #[arg(long, default_value_t = 50)]
        bins: usize,
        #[arg(long)]
        normality: bool,
        #[arg(long, num_args = 2, value_names = ["CKPT_A", "CKPT_B"])]
        spearman: Option<Vec<PathBuf>>,
        /// Run directory whose checkpoints are tracked.
        #[arg(long)]
        extremes: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        extremes_m: usize,
        /// Run directories whose episodes.csv are summarized.
        #[arg(long, num_args = 1..)]
        dispersion: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData { .. } => "gen-data",
            Command::Train { .. } => "train",
            Command::Evaluate { .. } => "evaluate",
            Command::CompareSchemes { .. } => "compare-schemes",
            Command::Analyze { .. } => "analyze",
        }
    }

    fn config_path(&self) -> &PathBuf {
        match self {
            Command::GenData { config, .. }
            | Command::Train { config }
            | Command::Evaluate { config, .. }
            | Command::CompareSchemes { config, .. }
            | Command::Analyze { config, .. } => config,
        }
    }
}

fn print(value: serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(&value).expect("serializable"));
}

fn run(command: Command, cfg: &ExperimentConfig) -> Result<()> {
    match command {
        Command::GenData { force, .. } => {
            let dir = commands::gen_data(cfg, force)?;
            print(json!({"dataset": dir}));
        }
        Command::Train { .. } => {
            let result = commands::train(cfg)?;
            print(serde_json::to_value(result)?);
        }
        Command::Evaluate {
            checkpoint, episodes, ..
        } => {
            let report = commands::evaluate_checkpoint(cfg, &checkpoint, episodes)?;
            print(serde_json::to_value(report)?);
        }
        Command::CompareSchemes { schemes, .. } => {
            let rows = commands::compare_schemes(cfg, &schemes)?;
            print(json!({
                "comparison": cfg.output_dir().join("comparison.csv"),
                "rows": rows.len(),
            }));
        }
        Command::Analyze {
            checkpoint,
            episodes,
            episode_file,
            qq,
            bins,
            normality,
            spearman,
            extremes,
            extremes_m,
            dispersion,
            out,
            ..
        } => {
            let args = AnalyzeArgs {
                checkpoint,
                episodes,
                episode_file,
                qq,
                bins,
                normality,
                spearman: spearman.map(|v| (v[0].clone(), v[1].clone())),
                extremes,
                extremes_m,
                dispersion,
                out,
            };
            let report = commands::analyze(cfg, &args)?;
            print(json!({
                "files": report.files,
                "rejection_rate": report.rejection_rate,
                "spearman": report.spearman,
            }));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let mut args: Vec<String> = std::env::args().collect();
    let overrides = match overrides::extract(&mut args) {
        Ok(o) => o,
        Err(e) => return fail("args", &e, None),
    };
    let cli = Cli::parse_from(args);
    let name = cli.command.name();
    let cfg = match ExperimentConfig::load(cli.command.config_path(), &overrides)
        .context("invalid configuration")
    {
        Ok(c) => c,
        Err(e) => return fail(name, &e, None),
    };
    match run(cli.command, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(name, &e, Some(cfg.output_dir())),
    }
}

/// Prints a JSON error record to stderr, and writes it to `error.json` in
/// the output directory when there is one.
fn fail(command: &str, err: &anyhow::Error, out: Option<PathBuf>) -> ExitCode {
    let record = json!({
        "command": command,
        "error": format!("{err:#}"),
    });
    let text = serde_json::to_string_pretty(&record).expect("serializable");
    eprintln!("{text}");
    if let Some(dir) = out {
        if std::fs::create_dir_all(&dir).is_ok() {
            let _ = std::fs::write(dir.join("error.json"), format!("{text}\n"));
        }
    }
    ExitCode::FAILURE
}
