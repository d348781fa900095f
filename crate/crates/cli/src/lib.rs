//! Command-line front end: argument parsing and command dispatch.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use commands::analyze::{self, Kind};
use commands::{load_inputs, preprocess, sweep, synth, train};
use config::RunConfig;
use error::{CliError, Result};
use output::RunDir;

#[derive(Debug, Parser)]
#[command(name = "neurodecode", version = output::SOURCE_REVISION, about = "EEG, image and text decoding pipeline")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// JSON run configuration layered over its profile.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Comma-separated seeds, replacing the config's list.
    #[arg(long, global = true, value_delimiter = ',')]
    pub seed: Option<Vec<u64>>,
    /// Output directory [default: runs/<command>].
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Reuse an existing output directory.
    #[arg(long, global = true)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Directory holding `train` and `test` trial files.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Feature bank stem or cached bank name.
    #[arg(long)]
    pub bank: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a planted synthetic dataset.
    Synth,
    /// Epoch and clean raw recordings.
    Preprocess {
        /// Dataset root with one directory per subject.
        #[arg(long)]
        data: PathBuf,
    },
    /// Masked-reconstruction pre-training of the encoder.
    Pretrain {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Contrastive alignment, optionally from pre-trained encoders.
    Align {
        #[command(flatten)]
        data: DataArgs,
        /// Output directory of a `pretrain` run.
        #[arg(long)]
        pretrained: Option<PathBuf>,
        /// Weight of the reconstruction term.
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Zero-shot retrieval from saved checkpoints.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        /// Output directory of an `align` run.
        #[arg(long)]
        checkpoints: PathBuf,
        #[arg(long, value_delimiter = ',')]
        top_k: Option<Vec<usize>>,
    },
    /// Restriction analyses, RSA and paired statistics.
    Analyze {
        kind: Kind,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        pretrained: Option<PathBuf>,
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        /// JSON file `{"ours": [..], "baselines": {"name": [..]}}` for `stats`.
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// Ablation grid from the config's `sweep` section.
    Sweep {
        #[command(flatten)]
        data: DataArgs,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Preprocess { .. } => "preprocess",
            Command::Pretrain { .. } => "pretrain",
            Command::Align { .. } => "align",
            Command::Eval { .. } => "eval",
            Command::Analyze { .. } => "analyze",
            Command::Sweep { .. } => "sweep",
        }
    }
}

/// Resolves the configuration with flag overrides applied.
fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(cli.global.config.as_deref())?;
    if let (Some(seeds), false) = (&cli.global.seed, matches!(cli.command, Command::Synth)) {
        cfg.seeds = seeds.clone();
    }
    match &cli.command {
        Command::Align { alpha: Some(a), .. } => cfg.pipeline.align.alpha = *a,
        Command::Eval { top_k: Some(k), .. } => cfg.pipeline.top_k = k.clone(),
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn dispatch(cli: &Cli, cfg: &RunConfig, dir: &mut RunDir) -> Result<Value> {
    let inputs = |d: &DataArgs| load_inputs(cfg, d.data.as_deref(), d.bank.as_deref());
    match &cli.command {
        Command::Synth => synth::run(cfg, cli.global.seed.as_deref(), dir),
        Command::Preprocess { data } => preprocess::run(cfg, data, dir),
        Command::Pretrain { data } => train::pretrain(cfg, &inputs(data)?, dir),
        Command::Align { data, pretrained, .. } => train::align(cfg, &inputs(data)?, pretrained.as_deref(), dir),
        Command::Eval { data, checkpoints, .. } => train::eval(cfg, &inputs(data)?, checkpoints, dir),
        Command::Analyze {
            kind,
            data,
            pretrained,
            checkpoints,
            scores,
        } => match kind {
            Kind::Stats => {
                let scores = scores
                    .as_deref()
                    .ok_or_else(|| CliError::Usage("analyze stats needs --scores".into()))?;
                analyze::stats(scores, dir)
            }
            Kind::Rsa => analyze::rsa(cfg, &inputs(data)?, checkpoints.as_deref(), dir),
            _ => analyze::restriction(*kind, cfg, &inputs(data)?, pretrained.as_deref(), dir),
        },
        Command::Sweep { data } => sweep::run(cfg, &inputs(data)?, dir),
    }
}

/// Runs one parsed invocation. The manifest is written whether or not the command succeeds.
pub fn run(cli: Cli) -> Result<Value> {
    let cfg = resolve_config(&cli)?;
    let name = cli.command.name();
    let out = cli
        .global
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(name));
    let mut dir = RunDir::create(&out, cli.global.force, &cfg)?;
    let outcome = dispatch(&cli, &cfg, &mut dir);
    dir.finish(name, &cfg, &outcome)?;
    outcome
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn global_flags_follow_the_subcommand() {
        let cli = Cli::try_parse_from(["neurodecode", "eval", "--checkpoints", "c", "--seed", "3,4", "--top-k", "1,5"])
            .unwrap();
        assert_eq!(cli.global.seed, Some(vec![3, 4]));
        let cfg = resolve_config(&cli).unwrap();
        assert_eq!(cfg.seeds, vec![3, 4]);
        assert_eq!(cfg.pipeline.top_k, vec![1, 5]);
    }

    #[test]
    fn bad_lists_are_parse_errors() {
        assert!(Cli::try_parse_from(["neurodecode", "synth", "--seed", "a"]).is_err());
    }
}
