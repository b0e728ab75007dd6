//! Command-line surface. Each subcommand resolves its configuration and
//! seed, delegates to the library, and writes the declared artifacts.
//! Failures print one `error: <category>: <message>` line on stderr and
//! exit with the category's code.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::align::Anchor;
use crate::checkpoint::Checkpoint;
use crate::compare;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{evaluate, SplitSpec};
use crate::report;
use crate::scenegen;
use crate::train;

/// Environment variable overriding the config seed. A `--seed` flag beats
/// the variable, which beats the config file.
pub const SEED_ENV: &str = "WMLM_SEED";

/// Stdout writer that treats a closed pipe as a normal exit instead of a
/// panic, so `wmlm gen | head` behaves.
fn write_stdout(args: std::fmt::Arguments<'_>, newline: bool) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let res = out
        .write_fmt(args)
        .and_then(|()| if newline { out.write_all(b"\n") } else { Ok(()) });
    match res {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => std::process::exit(0),
        Err(e) => Err(Error::Io(e)),
    }
}

macro_rules! say {
    ($($t:tt)*) => { write_stdout(format_args!($($t)*), true)? };
}
macro_rules! say_raw {
    ($($t:tt)*) => { write_stdout(format_args!($($t)*), false)? };
}

#[derive(Parser)]
#[command(
    name = "wmlm",
    version,
    about = "Synthetic V2I beam prediction: data generation, two-stage training, and evaluation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate the eight synthetic scenario datasets
    Gen(GenArgs),
    /// Stage 1: contrastive alignment of the modality encoders
    Align(AlignArgs),
    /// Stage 2 adaptation, RNN baseline, or fine-tuning
    Train(TrainArgs),
    /// Zero-shot evaluation of a checkpoint on held-out scenarios
    Eval(EvalArgs),
    /// The full anchor-comparison grid over splits, anchors, and seeds
    CompareAnchors(CompareArgs),
    /// Collate result files from a directory into csv, json, or svg
    Report(ReportArgs),
}

#[derive(Args)]
pub struct CommonArgs {
    /// Run configuration file (TOML); built-in defaults when omitted
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed; overrides WMLM_SEED and the config seed
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overwrite existing output files instead of failing
    #[arg(long, global = true, default_value_t = false)]
    pub force: bool,
}

#[derive(Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Directory for the dataset files S1.jsonl..S8.jsonl
    #[arg(long, default_value = "data")]
    pub out_dir: PathBuf,
}

#[derive(Args)]
pub struct AlignArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Dataset directory (from `gen`)
    #[arg(long, default_value = "data")]
    pub data: PathBuf,
    /// Anchor modality; overrides the config [default: config value (beam)]
    #[arg(long)]
    pub anchor: Option<Anchor>,
    /// Stage-1 checkpoint path; the history lands next to it
    #[arg(long, default_value = "stage1.ckpt")]
    pub out: PathBuf,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Wmlm,
    Rnn,
}

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Dataset directory (from `gen`)
    #[arg(long, default_value = "data")]
    pub data: PathBuf,
    /// Scenario split: S4, S6, or custom; overrides the config [default: config value (S4)]
    #[arg(long)]
    pub split: Option<String>,
    /// Initialize from a stage-1 or stage-2 checkpoint
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Freeze encoder weights when --init is given [default: true]
    #[arg(long, num_args = 0..=1, default_missing_value = "true", require_equals = true)]
    pub freeze_encoders: Option<bool>,
    /// Model family to train
    #[arg(long, value_enum, default_value_t = ModelKind::Wmlm)]
    pub model: ModelKind,
    /// Checkpoint path; the history lands next to it
    #[arg(long, default_value = "stage2.ckpt")]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Checkpoint to evaluate (stage-2 or rnn)
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Dataset directory (from `gen`)
    #[arg(long, default_value = "data")]
    pub data: PathBuf,
    /// Scenario split; overrides the split in the checkpoint's config [default: checkpoint value]
    #[arg(long)]
    pub split: Option<String>,
    /// Metrics report output path
    #[arg(long, default_value = "report.json")]
    pub report: PathBuf,
}

#[derive(Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Dataset directory; the corpus is generated from the config when omitted
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Directory for compare.json, cells.csv, and summary.csv
    #[arg(long, default_value = "compare")]
    pub out_dir: PathBuf,
    /// Seeds per grid cell
    #[arg(long, default_value_t = 3)]
    pub seeds_per_cell: usize,
    /// Maximum concurrent grid jobs
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Csv,
    Json,
    Svg,
}

#[derive(Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Directory containing report/compare/history files
    #[arg(long = "in")]
    pub in_dir: PathBuf,
    /// Output format
    #[arg(long, value_enum, default_value_t = ReportFormat::Csv)]
    pub format: ReportFormat,
    /// Output path; stdout when omitted
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// flag > WMLM_SEED > config.
pub fn resolve_seed(flag: Option<u64>, config_seed: u64) -> Result<u64> {
    if let Some(seed) = flag {
        return Ok(seed);
    }
    match std::env::var(SEED_ENV) {
        Ok(text) => text
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{SEED_ENV} must be an unsigned integer, got {text:?}"))),
        Err(std::env::VarError::NotPresent) => Ok(config_seed),
        Err(e) => Err(Error::Config(format!("{SEED_ENV}: {e}"))),
    }
}

fn load_config(common: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.validate()?;
    cfg.seed = resolve_seed(common.seed, cfg.seed)?;
    Ok(cfg)
}

fn check_clobber(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::Config(format!(
            "{} exists; pass --force to overwrite",
            path.display()
        )));
    }
    Ok(())
}

fn history_path(ckpt_path: &Path) -> PathBuf {
    ckpt_path.with_extension("history.jsonl")
}

fn run_gen(args: &GenArgs) -> Result<()> {
    let cfg = load_config(&args.common)?;
    let presets = scenegen::presets(cfg.seed, cfg.data.traversals);
    for preset in &presets {
        check_clobber(
            &args.out_dir.join(format!("S{}.jsonl", preset.scenario_id)),
            args.common.force,
        )?;
    }
    let scenarios: Vec<scenegen::ScenarioData> =
        presets.iter().map(scenegen::gen_scenario).collect::<Result<_>>()?;
    let paths = scenegen::write_corpus(&scenarios, &args.out_dir)?;
    for (data, path) in scenarios.iter().zip(&paths) {
        say!(
            "wrote {} (scenario {}, {} windows)",
            path.display(),
            data.config.scenario_id,
            data.windows().len()
        );
    }
    Ok(())
}

fn run_align(args: &AlignArgs) -> Result<()> {
    let mut cfg = load_config(&args.common)?;
    if let Some(anchor) = args.anchor {
        cfg.align.anchor = anchor;
    }
    check_clobber(&args.out, args.common.force)?;
    let hist = history_path(&args.out);
    check_clobber(&hist, args.common.force)?;
    let corpus = scenegen::read_corpus(&args.data)?;
    let artifacts = train::run_stage1(&cfg, &corpus, cfg.seed)?;
    artifacts.checkpoint.save(&args.out)?;
    train::write_history(&hist, artifacts.checkpoint.header.stage, &cfg, cfg.seed, &artifacts.history)?;
    if let Some(last) = artifacts.history.last() {
        say!(
            "stage 1 anchor={} epochs={} loss={:.4} retrieval={:.4}",
            cfg.align.anchor.tag(),
            artifacts.history.len(),
            last.loss,
            last.retrieval
        );
    } else {
        say!("stage 1 anchor=none: random-initialized encoders");
    }
    say!("wrote {} and {}", args.out.display(), hist.display());
    Ok(())
}

fn run_train(args: &TrainArgs) -> Result<()> {
    let mut cfg = load_config(&args.common)?;
    if let Some(split) = &args.split {
        cfg.eval.split = split.clone();
    }
    if let Some(freeze) = args.freeze_encoders {
        cfg.train.unfreeze_encoders = !freeze;
    }
    check_clobber(&args.out, args.common.force)?;
    let hist = history_path(&args.out);
    check_clobber(&hist, args.common.force)?;
    let corpus = scenegen::read_corpus(&args.data)?;
    let init = args.init.as_deref().map(Checkpoint::load).transpose()?;

    let artifacts = match args.model {
        ModelKind::Wmlm => train::run_stage2(&cfg, &corpus, init.as_ref(), cfg.seed)?,
        ModelKind::Rnn => {
            if init.is_some() {
                return Err(Error::Config("--init applies to --model wmlm only".into()));
            }
            train::train_rnn_baseline(&cfg, &corpus, cfg.seed)?
        }
    };
    artifacts.checkpoint.save(&args.out)?;
    train::write_history(&hist, artifacts.checkpoint.header.stage, &cfg, cfg.seed, &artifacts.history)?;
    let params: usize = artifacts.checkpoint.header.manifest.iter().map(|m| m.len).sum();
    let last = artifacts.history.last().expect("at least one epoch");
    say!(
        "{} parameters={} epochs={} best_epoch={} {}[loss={:.4} top1={:.3}/{:.3}/{:.3}]",
        artifacts.checkpoint.header.stage,
        params,
        artifacts.epochs_run,
        artifacts.best_epoch,
        last.split,
        last.loss,
        last.top1[0],
        last.top1[1],
        last.top1[2]
    );
    say!("wrote {} and {}", args.out.display(), hist.display());
    Ok(())
}

fn run_eval(args: &EvalArgs) -> Result<()> {
    check_clobber(&args.report, args.common.force)?;
    let ckpt = Checkpoint::load(&args.ckpt)?;
    let mut cfg = ckpt
        .header
        .config
        .clone()
        .ok_or_else(|| Error::Checkpoint("checkpoint lacks an embedded run config".into()))?;
    if let Some(split) = &args.split {
        cfg.eval.split = split.clone();
    }
    let spec = SplitSpec::from_eval_config(&cfg.eval)?;
    let corpus = scenegen::read_corpus(&args.data)?;
    let report = evaluate(&ckpt, &corpus, &spec)?;
    report.save(&args.report)?;
    say!(
        "model={} split={} test_windows={} top1={:.3}/{:.3}/{:.3} nmse={} persistence_top1_step3={:.3}",
        report.model,
        report.split.name,
        report.n_test_windows,
        report.top1[0],
        report.top1[1],
        report.top1[2],
        report.nmse.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".to_string()),
        report.persistence_top1[2]
    );
    say!("wrote {}", args.report.display());
    Ok(())
}

fn run_compare(args: &CompareArgs) -> Result<()> {
    let cfg = load_config(&args.common)?;
    for name in ["compare.json", "cells.csv", "summary.csv"] {
        check_clobber(&args.out_dir.join(name), args.common.force)?;
    }
    let corpus = match &args.data {
        Some(dir) => scenegen::read_corpus(dir)?,
        None => scenegen::presets(cfg.seed, cfg.data.traversals)
            .iter()
            .map(scenegen::gen_scenario)
            .collect::<Result<_>>()?,
    };
    let report = compare::compare_anchors(&cfg, &corpus, args.seeds_per_cell, args.jobs)?;
    let paths = compare::write_compare(&report, &args.out_dir)?;
    for s in &report.summary {
        say!(
            "{} anchor={:<6} median_top1_step3={:.3} median_nmse={:.4}",
            s.split, s.anchor, s.median_top1[2], s.median_nmse
        );
    }
    for p in paths {
        say!("wrote {}", p.display());
    }
    Ok(())
}

fn run_report(args: &ReportArgs) -> Result<()> {
    let format = match args.format {
        ReportFormat::Csv => "csv",
        ReportFormat::Json => "json",
        ReportFormat::Svg => "svg",
    };
    let (content, _) = report::render(&args.in_dir, format)?;
    match &args.out {
        Some(path) => {
            check_clobber(path, args.common.force)?;
            std::fs::write(path, &content)?;
            say!("wrote {}", path.display());
        }
        None => say_raw!("{content}"),
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Gen(args) => run_gen(args),
        Command::Align(args) => run_align(args),
        Command::Train(args) => run_train(args),
        Command::Eval(args) => run_eval(args),
        Command::CompareAnchors(args) => run_compare(args),
        Command::Report(args) => run_report(args),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_precedence_flag_beats_config() {
        // the env var layer is exercised in the CLI integration tests; unit
        // tests avoid mutating process-global state
        assert_eq!(resolve_seed(Some(9), 1).unwrap(), 9);
        if std::env::var(SEED_ENV).is_err() {
            assert_eq!(resolve_seed(None, 1).unwrap(), 1);
        }
    }

    #[test]
    fn cli_parses_all_subcommands() {
        Cli::try_parse_from(["wmlm", "gen", "--out-dir", "d"]).unwrap();
        Cli::try_parse_from(["wmlm", "align", "--anchor", "vision", "--out", "s1.ckpt"]).unwrap();
        let cli = Cli::try_parse_from([
            "wmlm",
            "train",
            "--split",
            "S6",
            "--init",
            "s1.ckpt",
            "--freeze-encoders=false",
            "--model",
            "rnn",
        ])
        .unwrap();
        match cli.command {
            Command::Train(args) => {
                assert_eq!(args.freeze_encoders, Some(false));
                assert!(args.model == ModelKind::Rnn);
            }
            _ => unreachable!(),
        }
        Cli::try_parse_from(["wmlm", "eval", "--ckpt", "s2.ckpt", "--report", "r.json"]).unwrap();
        Cli::try_parse_from(["wmlm", "compare-anchors", "--jobs", "2"]).unwrap();
        Cli::try_parse_from(["wmlm", "report", "--in", "results", "--format", "svg"]).unwrap();
    }

    #[test]
    fn freeze_flag_without_value_means_true() {
        let cli = Cli::try_parse_from(["wmlm", "train", "--freeze-encoders"]).unwrap();
        match cli.command {
            Command::Train(args) => assert_eq!(args.freeze_encoders, Some(true)),
            _ => unreachable!(),
        }
    }

    #[test]
    fn bad_anchor_is_a_parse_error() {
        assert!(Cli::try_parse_from(["wmlm", "align", "--anchor", "sonar"]).is_err());
    }
}
