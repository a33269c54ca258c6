//! `fadesim`: fade-duration experiments from the command line.

mod commands;
mod output;
mod reproduce;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use fadesim::experiment::{validate_config, ExperimentConfig, ModelSpec, WSpec};

use crate::output::Output;

#[derive(Parser)]
#[command(name = "fadesim", version, about = "Fade-duration statistics for OU fading channels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dump sample paths of the projected (and I/Q) system.
    Simulate(Common),
    /// Histograms of the square envelope at T with KS checks.
    Hist(Common),
    /// Monte Carlo CCDF of the fade duration.
    CcdfMc(Common),
    /// Solve the backward equation and save the value-function grid.
    KbeSolve(Common),
    /// Importance-sampling tail estimates from a saved grid.
    CcdfIs(Common),
    /// MC against IS at each w, with required sample counts.
    Compare(Common),
    /// Stationary moments and autocovariance against closed forms.
    Stats(Common),
    /// Exact and affine Rice drift on an r grid.
    DriftSweep(Common),
    /// Run a pinned figure or table target.
    Reproduce(ReproduceArgs),
}

#[derive(Args, Debug, Default, Clone)]
pub struct Common {
    /// JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory (default: config `out`, then $FADESIM_OUT, then ./fadesim-out).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Model class when no config is given: rayleigh, rice or hoyt.
    #[arg(long)]
    model: Option<String>,
    #[arg(long = "B", allow_hyphen_values = true)]
    b: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    sigma: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    gamma: Option<f64>,
    #[arg(long = "T", allow_hyphen_values = true)]
    t: Option<f64>,
    #[arg(long = "N")]
    n: Option<usize>,
    #[arg(long = "M")]
    m: Option<u64>,
    /// Comma-separated thresholds.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    w: Option<Vec<f64>>,
    #[arg(long, allow_hyphen_values = true)]
    w_min: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    w_max: Option<f64>,
    #[arg(long)]
    w_count: Option<usize>,
    #[arg(long)]
    grid_nt: Option<usize>,
    #[arg(long)]
    grid_nx: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    xb: Option<f64>,
    /// Value-function grid file (.json) to write or read.
    #[arg(long)]
    grid_file: Option<PathBuf>,
    /// Paths written by `simulate`.
    #[arg(long)]
    paths: Option<usize>,
    /// Histogram bins for `hist`.
    #[arg(long)]
    bins: Option<usize>,
}

#[derive(Args, Debug)]
struct ReproduceArgs {
    /// fig1..fig9 or table1.
    id: String,
    /// Replaces the pinned seed of every step.
    #[arg(long)]
    seed: Option<u64>,
    /// Replaces the pinned sample count of every step (for quick runs).
    #[arg(long = "M")]
    m: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read_config(common: &Common) -> Result<ExperimentConfig> {
    let (raw, origin) = match &common.config {
        Some(p) => (
            std::fs::read_to_string(p).with_context(|| format!("cannot read config {}", p.display()))?,
            p.display().to_string(),
        ),
        None => {
            let class = common.model.as_deref().unwrap_or("rayleigh");
            (serde_json::json!({"model": {"class": class}}).to_string(), "<flags>".to_string())
        }
    };
    let mut cfg = parse_config(&raw, &origin)?;
    if let (Some(class), Some(_)) = (&common.model, &common.config) {
        if class != cfg.model.class() {
            bail!("--model {class} conflicts with the config's model class \"{}\"", cfg.model.class());
        }
    }
    apply_overrides(&mut cfg, common)?;
    Ok(cfg)
}

pub fn parse_config(raw: &str, origin: &str) -> Result<ExperimentConfig> {
    validate_config(raw).map_err(|issues| {
        let lines: Vec<String> = issues.iter().map(|i| format!("  {origin}: {i}")).collect();
        anyhow!("invalid config ({} problem(s)):\n{}", issues.len(), lines.join("\n"))
    })
}

fn apply_overrides(cfg: &mut ExperimentConfig, c: &Common) -> Result<()> {
    if c.b.is_some() || c.sigma.is_some() {
        let ModelSpec::Rayleigh { b, sigma, .. } = &mut cfg.model else {
            bail!("--B and --sigma apply to the Rayleigh model only");
        };
        *b = c.b.unwrap_or(*b);
        *sigma = c.sigma.unwrap_or(*sigma);
    }
    if let Some(v) = c.seed {
        cfg.seed = v;
    }
    if let Some(v) = c.gamma {
        cfg.gamma = v;
    }
    if let Some(v) = c.t {
        cfg.t_final = v;
    }
    if let Some(v) = c.n {
        cfg.steps = v;
    }
    if let Some(v) = c.m {
        cfg.m = v;
    }
    match (&c.w, c.w_min, c.w_max, c.w_count) {
        (Some(_), Some(_), _, _) | (Some(_), _, Some(_), _) | (Some(_), _, _, Some(_)) => {
            bail!("use either --w or --w-min/--w-max/--w-count")
        }
        (Some(ws), ..) => cfg.w = Some(WSpec::List(ws.clone())),
        (None, None, None, None) => {}
        (None, lo, hi, n) => {
            let (dlo, dhi, dn) = match &cfg.w {
                Some(WSpec::Linspace { min, max, count }) => (*min, *max, *count),
                _ => (0.0, cfg.t_final, fadesim::mc::DEFAULT_W_POINTS),
            };
            cfg.w = Some(WSpec::Linspace {
                min: lo.unwrap_or(dlo),
                max: hi.unwrap_or(dhi),
                count: n.unwrap_or(dn),
            });
        }
    }
    if let Some(v) = c.grid_nt {
        cfg.kbe.nt = v;
    }
    if let Some(v) = c.grid_nx {
        cfg.kbe.nx = v;
    }
    if let Some(v) = c.xb {
        cfg.kbe.xb = Some(v);
    }
    if let Some(v) = c.paths {
        cfg.paths = v;
    }
    if let Some(v) = c.bins {
        cfg.bins = v;
    }
    if let Some(v) = &c.grid_file {
        cfg.kbe.grid_file = Some(v.display().to_string());
    }
    let v = cfg.violations();
    if !v.is_empty() {
        let lines: Vec<String> = v.iter().map(|(f, m)| format!("  {f}: {m}")).collect();
        bail!("invalid parameters after flag overrides:\n{}", lines.join("\n"));
    }
    Ok(())
}

fn set_workers(workers: Option<usize>) -> Result<()> {
    if let Some(n) = workers {
        if n == 0 {
            bail!("--workers must be >= 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| anyhow!("cannot start worker pool: {e}"))?;
    }
    Ok(())
}

pub fn run_step(name: &str, cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    let out = Output::create(dir.to_path_buf(), name, cfg)?;
    match name {
        "simulate" => commands::simulate(cfg, &out),
        "hist" => commands::hist(cfg, &out),
        "ccdf-mc" => commands::ccdf_mc(cfg, &out),
        "kbe-solve" => commands::kbe_solve(cfg, &out),
        "ccdf-is" => commands::ccdf_is(cfg, &out),
        "compare" => commands::compare(cfg, &out),
        "stats" => commands::stats(cfg, &out),
        "drift-sweep" => commands::drift_sweep(cfg, &out),
        other => bail!("unknown command `{other}`"),
    }
}

fn run(cli: Cli) -> Result<()> {
    let (name, common) = match cli.command {
        Command::Reproduce(a) => {
            set_workers(a.workers)?;
            return reproduce::run(&a.id, a.seed, a.m, a.out.as_deref());
        }
        Command::Simulate(c) => ("simulate", c),
        Command::Hist(c) => ("hist", c),
        Command::CcdfMc(c) => ("ccdf-mc", c),
        Command::KbeSolve(c) => ("kbe-solve", c),
        Command::CcdfIs(c) => ("ccdf-is", c),
        Command::Compare(c) => ("compare", c),
        Command::Stats(c) => ("stats", c),
        Command::DriftSweep(c) => ("drift-sweep", c),
    };
    set_workers(common.workers)?;
    let cfg = read_config(&common)?;
    let dir = output::resolve_dir(common.out.as_deref(), &cfg);
    run_step(name, &cfg, &dir)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
