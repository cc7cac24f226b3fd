//! Argument parsing and subcommand dispatch for the `neon` binary.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{RawConfig, Reader, Resolved};
use crate::error::CliError;
use crate::output::{ensure_dir, RunMeta};
use crate::toy::BaseCache;
use crate::{ar, exp1, exp2, fig2, standalone, transfer};

#[derive(Debug, Parser)]
#[command(name = "neon", version, about = "Negative extrapolation from self-training, at toy scale")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Gaussian two-direction grid of log W2.
    Fig2Grid(RunArgs),
    /// DDPM FID against merge weight per score scale and budget.
    ToyExp1(RunArgs),
    /// DDPM gradient cosine against score scale.
    ToyExp2(RunArgs),
    /// Categorical sampler-bias enumeration.
    ArVerify(RunArgs),
    /// Cross-model transfer of synthetic data.
    Transfer(RunArgs),
    /// Merge two checkpoint files.
    Merge(MergeArgs),
    /// Alignment report for a checkpoint and two sample files.
    Align(AlignArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Flat `key=value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Extra `key=value` overrides, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct MergeArgs {
    /// Base checkpoint `θ_r`.
    #[arg(long)]
    pub base: PathBuf,
    /// Self-trained checkpoint `θ_s`.
    #[arg(long)]
    pub synthetic: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    pub w: f64,
    /// Output checkpoint file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Real samples, CSV with header and two columns.
    #[arg(long)]
    pub real: PathBuf,
    /// Synthetic samples, same format.
    #[arg(long)]
    pub synthetic: PathBuf,
    #[arg(long, default_value_t = 1e-4)]
    pub alpha: f64,
    /// `identity` or `adam`.
    #[arg(long, default_value = "identity")]
    pub precond: String,
    /// Also estimate the curvature `z` and the proxy weight.
    #[arg(long)]
    pub curvature: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 4)]
    pub grad_repeats: usize,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

/// Config file plus `--seed` and `--set` overrides.
pub fn raw_config(args: &RunArgs) -> Result<RawConfig, CliError> {
    let mut raw = match &args.config {
        Some(p) => RawConfig::load(p)?,
        None => RawConfig::default(),
    };
    for kv in &args.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set expects key=value, got `{kv}`")))?;
        raw.set(k.trim(), v.trim());
    }
    if let Some(seed) = args.seed {
        raw.set("seed", seed);
    }
    Ok(raw)
}

fn finish(reader: Reader, experiment: &str, out: &Path) -> Result<Resolved, CliError> {
    let resolved = reader.finish(experiment)?;
    ensure_dir(out)?;
    let path = out.join("config.resolved");
    std::fs::write(&path, resolved.canonical()).map_err(|e| CliError::io(&path, e))?;
    Ok(resolved)
}

/// Runs one experiment subcommand; returns the files written.
pub fn run_experiment(experiment: &str, raw: &RawConfig, out: &Path, cache: &BaseCache) -> Result<Vec<PathBuf>, CliError> {
    let r = Reader::new(raw);
    match experiment {
        "fig2-grid" => {
            let cfg = fig2::Fig2Config::read(&r)?;
            let meta = RunMeta::new(&finish(r, experiment, out)?, cfg.seed);
            fig2::run(&cfg)?.write(out, &meta)
        }
        "toy-exp1" => {
            let cfg = exp1::Exp1Config::read(&r)?;
            let meta = RunMeta::new(&finish(r, experiment, out)?, cfg.seed);
            exp1::run(&cfg, cache)?.write(out, &meta)
        }
        "toy-exp2" => {
            let cfg = exp2::Exp2Config::read(&r)?;
            let meta = RunMeta::new(&finish(r, experiment, out)?, cfg.seed).with("n_seeds", cfg.n_seeds);
            exp2::run(&cfg, cache)?.write(out, &meta)
        }
        "ar-verify" => {
            let cfg = ar::ArConfig::read(&r)?;
            let meta = RunMeta::new(&finish(r, experiment, out)?, cfg.seed);
            ar::run(&cfg)?.write(out, &meta)
        }
        "transfer" => {
            let cfg = transfer::TransferConfig::read(&r)?;
            let meta = RunMeta::new(&finish(r, experiment, out)?, cfg.seed);
            transfer::run(&cfg, cache)?.write(out, &meta)
        }
        other => Err(CliError::Config(format!("unknown experiment `{other}`"))),
    }
}

pub fn execute(cli: Cli) -> Result<Vec<PathBuf>, CliError> {
    let cache = BaseCache::new();
    let experiment = |name: &str, args: &RunArgs| run_experiment(name, &raw_config(args)?, &args.out, &cache);
    match &cli.command {
        Command::Fig2Grid(a) => experiment("fig2-grid", a),
        Command::ToyExp1(a) => experiment("toy-exp1", a),
        Command::ToyExp2(a) => experiment("toy-exp2", a),
        Command::ArVerify(a) => experiment("ar-verify", a),
        Command::Transfer(a) => experiment("transfer", a),
        Command::Merge(a) => {
            standalone::merge_files(&a.base, &a.synthetic, a.w, &a.out)?;
            Ok(vec![a.out.clone()])
        }
        Command::Align(a) => {
            let mut raw = RawConfig::default();
            raw.set("checkpoint", a.checkpoint.display());
            raw.set("real", a.real.display());
            raw.set("synthetic", a.synthetic.display());
            raw.set("alpha", a.alpha);
            raw.set("precond", &a.precond);
            raw.set("curvature", a.curvature);
            raw.set("seed", a.seed);
            raw.set("grad_repeats", a.grad_repeats);
            let r = Reader::new(&raw);
            let cfg = standalone::AlignConfig::read(&r)?;
            let meta = RunMeta::new(&finish(r, "align", &a.out)?, cfg.seed);
            let report = standalone::align(&cfg)?;
            Ok(vec![standalone::write_alignment(&a.out, &report, &meta)?])
        }
    }
}

/// Sizes the global worker pool from `NEON_THREADS`; unset or `0` means auto.
pub fn init_threads(var: Option<&str>) -> Result<(), CliError> {
    let n = match var {
        None => 0,
        Some(s) => s
            .trim()
            .parse::<usize>()
            .map_err(|_| CliError::Config(format!("NEON_THREADS must be a count, got `{s}`")))?,
    };
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}
