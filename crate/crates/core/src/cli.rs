//! Command-line front end.
//!
//! Exit codes: 0 on success, 2 for usage and configuration problems, 3 when
//! the numerics fail (a non-finite iterate, an all-zero dictionary).

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use crate::error::{Error, Result};
use crate::experiment::{self, ExperimentConfig, SolverOverrides};
use crate::model::{AnchorSet, Mode};
use crate::simgen::{generate, DatasetSpec};
use crate::solver::fit;
use crate::storage::{read_bundle, read_json, read_matrix, write_bundle, write_fit_result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "atomdl", version, about = "Atom-assisted dictionary learning for task fMRI")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset bundle.
    Generate(GenerateArgs),
    /// Fit one model to a dataset bundle.
    Fit(FitArgs),
    /// Sweep a time shift of the imposed task regressor.
    SweepShift(SweepArgs),
    /// Sweep the width of the response used to build the task regressor.
    SweepHrf(SweepArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Dataset spec (JSON). Defaults to the built-in desk-scale layout.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Bundle directory written by `generate`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Solver overrides (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "atom_assisted")]
    pub method: Mode,
    /// Anchor time courses, `T × M` CSV. Defaults to the bundle's true task
    /// time course scaled to unit norm.
    #[arg(long)]
    pub anchors: Option<PathBuf>,
    #[arg(long)]
    pub n_outer: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub paper_budget: bool,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Use seeds 0..N.
    #[arg(long)]
    pub seeds: Option<u64>,
    /// Comma-separated subset of atom_assisted,sdl,blind.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<Mode>>,
    #[arg(long)]
    pub paper_budget: bool,
    /// Redraw the additive noise for every seed.
    #[arg(long)]
    pub reseed_noise: bool,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long)]
    pub workers: Option<usize>,
}

/// Clap parses `Mode` through `FromStr`.
impl clap::builder::ValueParserFactory for Mode {
    type Parser = clap::builder::ValueParser;
    fn value_parser() -> Self::Parser {
        clap::builder::ValueParser::new(|s: &str| s.parse::<Mode>().map_err(|e| e.to_string()))
    }
}

fn prepare_out_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let non_empty = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .next()
            .is_some();
        if non_empty && !force {
            return Err(Error::invalid(
                "out",
                format!("{} exists and is not empty (use --force)", dir.display()),
            ));
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<String> {
    let mut spec: DatasetSpec = match &args.config {
        Some(p) => read_json(p)?,
        None => DatasetSpec::default(),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let ds = generate(&spec)?;
    prepare_out_dir(&args.out, args.force)?;
    let manifest = write_bundle(&ds, &args.out)?;
    Ok(serde_json::to_string_pretty(&manifest)?)
}

pub fn cmd_fit(args: &FitArgs) -> Result<String> {
    let ds = read_bundle(&args.data)?;
    let overrides: SolverOverrides = match &args.config {
        Some(p) => read_json(p)?,
        None => SolverOverrides::default(),
    };
    let mut cfg = overrides.build(args.method, args.paper_budget);
    cfg.seed = args.seed;
    if let Some(n) = args.n_outer {
        cfg.n_outer = n;
    }
    let t = ds.x.n_time();
    let mut notes = String::new();
    cfg.anchors = match (args.method, &args.anchors) {
        (Mode::Blind, Some(p)) => {
            notes.push_str(&format!("warning: blind mode ignores anchors in {}\n", p.display()));
            AnchorSet::empty(t)
        }
        (Mode::Blind, None) => AnchorSet::empty(t),
        (_, Some(p)) => {
            let a = read_matrix(p)?;
            if a.nrows() != t {
                return Err(Error::invalid(
                    "anchors",
                    format!("{} has {} rows but the data has T = {t} time points", p.display(), a.nrows()),
                ));
            }
            AnchorSet::new(a)?
        }
        (_, None) => experiment::anchor_from(&experiment::true_task_course(&ds))?,
    };
    let result = fit(&ds.x, &cfg)?;
    prepare_out_dir(&args.out, args.force)?;
    let summary = write_fit_result(&result, &args.out)?;
    notes.push_str(&format!(
        "{} fit: K={} M={} objective={:.6e} residual={:.6e} feasible={}",
        summary.method,
        summary.k,
        summary.m,
        summary.final_objective,
        summary.final_residual,
        summary.feasible
    ));
    Ok(notes)
}

fn sweep_config(args: &SweepArgs) -> Result<ExperimentConfig> {
    let mut cfg: ExperimentConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(n) = args.seeds {
        cfg.seeds = (0..n).collect();
    }
    if let Some(m) = &args.methods {
        cfg.methods = m.clone();
    }
    cfg.paper_budget |= args.paper_budget;
    cfg.reseed_noise |= args.reseed_noise;
    Ok(cfg)
}

fn workers(args: &SweepArgs) -> usize {
    args.workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn cmd_sweep_shift(args: &SweepArgs) -> Result<String> {
    let cfg = sweep_config(args)?;
    let result = experiment::sweep_shift(&cfg, workers(args))?;
    let csv = result.to_csv();
    write_text(&args.out, &csv)?;
    Ok(csv)
}

pub fn cmd_sweep_hrf(args: &SweepArgs) -> Result<String> {
    let cfg = sweep_config(args)?;
    let result = experiment::sweep_hrf(&cfg, workers(args))?;
    let csv = result.to_csv();
    write_text(&args.out, &csv)?;
    Ok(csv)
}

pub fn exit_code(err: &Error) -> i32 {
    if err.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_USAGE
    }
}

/// Runs a parsed command, printing its output, and returns the exit code.
pub fn run(cli: Cli) -> i32 {
    let out = match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Fit(a) => cmd_fit(a),
        Command::SweepShift(a) => cmd_sweep_shift(a),
        Command::SweepHrf(a) => cmd_sweep_hrf(a),
    };
    match out {
        Ok(text) => {
            println!("{text}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
