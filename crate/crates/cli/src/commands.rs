//! One function per subcommand. Each reads a validated config and writes its
//! files through an [`Output`].

use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use fadesim::experiment::{ExperimentConfig, ModelSpec};
use fadesim::importance::{
    estimator_comparison, write_comparison_csv, write_points_csv, EstimatorContext, EstimatorRegistry,
};
use fadesim::kbe::{solve_kbe, ValueFunctionGrid};
use fadesim::mc::{collect_samples, histogram_in_range, mc_ccdf, IqSampler, ProjectedSampler, DEFAULT_CONFIDENCE};
use fadesim::sde::{simulate_iq_fade, simulate_projected_fade, FadePath};
use fadesim::validation::{
    gof_stationary, ks_report, stationary_moments, transient_law, write_gof_csv, write_moments_csv,
    write_rice_drift_sweep, StationaryPlan,
};
use fadesim::RngStream;
use serde_json::json;

use crate::output::Output;

/// Target relative error for the required-sample column of `compare`.
pub const TARGET_REL_ERROR: f64 = 0.05;
/// Two-sample KS bound reported by `hist`.
pub const KS_BOUND: f64 = 0.01;
const GOF_ALPHA: f64 = 0.01;
const GRID_STEM: &str = "value_grid";

fn projected_sampler(cfg: &ExperimentConfig, seed: u64) -> Result<ProjectedSampler> {
    Ok(ProjectedSampler {
        model: cfg.model.projected()?,
        r0: cfg.model.r0(),
        gamma: cfg.gamma,
        grid: cfg.grid()?,
        seed,
    })
}

fn iq_sampler(cfg: &ExperimentConfig, seed: u64) -> Result<IqSampler> {
    Ok(IqSampler {
        params: cfg.model.ou_params(),
        gamma: cfg.gamma,
        grid: cfg.grid()?,
        seed,
    })
}

/// The I/Q run uses its own stream family so the two systems are independent.
fn iq_seed(seed: u64) -> u64 {
    seed.wrapping_add(1)
}

fn write_paths(paths: &[FadePath], w: &mut impl std::io::Write) -> fadesim::Result<()> {
    writeln!(w, "path,t,r,z")?;
    for (k, p) in paths.iter().enumerate() {
        for (n, (r, z)) in p.r_values.iter().zip(&p.z_values).enumerate() {
            writeln!(w, "{k},{:?},{r:?},{z:?}", p.grid.time(n))?;
        }
    }
    Ok(())
}

pub fn simulate(cfg: &ExperimentConfig, out: &Output) -> Result<()> {
    let grid = cfg.grid()?;
    let model = cfg.model.projected()?;
    let r0 = cfg.model.r0();
    let paths = (0..cfg.paths as u64)
        .map(|k| simulate_projected_fade(&model, r0, cfg.gamma, &grid, RngStream::new(cfg.seed, k)))
        .collect::<fadesim::Result<Vec<_>>>()?;
    let f = out.write("paths_projected.csv", json!({"system": "projected"}), |w| write_paths(&paths, w))?;
    println!("wrote {} projected paths to {}", paths.len(), f.display());
    if cfg.compare_iq {
        let p = cfg.model.ou_params();
        let paths: Vec<_> = (0..cfg.paths as u64)
            .map(|k| simulate_iq_fade(&p, cfg.gamma, &grid, RngStream::new(iq_seed(cfg.seed), k)))
            .collect();
        let f = out.write(
            "paths_iq.csv",
            json!({"system": "iq", "seed": iq_seed(cfg.seed)}),
            |w| write_paths(&paths, w),
        )?;
        println!("wrote {} I/Q paths to {}", paths.len(), f.display());
    }
    Ok(())
}

pub fn hist(cfg: &ExperimentConfig, out: &Output) -> Result<()> {
    let proj: Vec<f64> = collect_samples(&projected_sampler(cfg, cfg.seed)?, cfg.m)?
        .iter()
        .map(|s| s.r_final)
        .collect();
    let iq: Vec<f64> = collect_samples(&iq_sampler(cfg, iq_seed(cfg.seed))?, cfg.m)?
        .iter()
        .map(|s| s.r_final)
        .collect();
    let hi = proj.iter().chain(&iq).copied().fold(0.0, f64::max);
    let hp = histogram_in_range(&proj, 0.0, hi, cfg.bins)?;
    let hq = histogram_in_range(&iq, 0.0, hi, cfg.bins)?;
    out.write("hist_projected.csv", json!({"system": "projected", "samples": proj.len()}), |w| {
        hp.write_csv(w)
    })?;
    out.write(
        "hist_iq.csv",
        json!({"system": "iq", "samples": iq.len(), "seed": iq_seed(cfg.seed)}),
        |w| hq.write_csv(w),
    )?;
    let seeds = [cfg.seed, iq_seed(cfg.seed)];
    let mut reports = vec![ks_report("ks-projected-vs-iq", &proj, &iq, KS_BOUND, &seeds)?];
    if let Some(law) = transient_law(&cfg.model.ou_params(), cfg.t_final)? {
        let mut r = gof_stationary(&proj, law, GOF_ALPHA, &seeds[..1])?;
        r.test = format!("{}-projected", r.test);
        reports.push(r);
        let mut r = gof_stationary(&iq, law, GOF_ALPHA, &seeds[1..])?;
        r.test = format!("{}-iq", r.test);
        reports.push(r);
    }
    out.write("hist_gof.csv", json!({"alpha": GOF_ALPHA}), |w| write_gof_csv(&reports, w))?;
    for r in &reports {
        println!("{}: statistic {:.5} (threshold {:.5})", r.test, r.statistic, r.threshold);
    }
    Ok(())
}

pub fn ccdf_mc(cfg: &ExperimentConfig, out: &Output) -> Result<()> {
    let ws = cfg.w_values();
    let est = mc_ccdf(&projected_sampler(cfg, cfg.seed)?, &ws, cfg.m, DEFAULT_CONFIDENCE)?;
    out.write(
        "ccdf_mc_projected.csv",
        json!({"system": "projected", "jump_at_zero": est.jump_at_zero}),
        |w| est.write_csv(w),
    )?;
    println!("projected: P(Z(T) = 0) = {:?}", est.jump_at_zero);
    if cfg.compare_iq {
        let iq = mc_ccdf(&iq_sampler(cfg, iq_seed(cfg.seed))?, &ws, cfg.m, DEFAULT_CONFIDENCE)?;
        out.write(
            "ccdf_mc_iq.csv",
            json!({"system": "iq", "jump_at_zero": iq.jump_at_zero, "seed": iq_seed(cfg.seed)}),
            |w| iq.write_csv(w),
        )?;
        let gap = est
            .p_hat
            .iter()
            .zip(&iq.p_hat)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        println!("iq: P(Z(T) = 0) = {:?}; sup gap to projected {gap:.5}", iq.jump_at_zero);
    }
    Ok(())
}

fn grid_path(cfg: &ExperimentConfig, out: &Output) -> PathBuf {
    match &cfg.kbe.grid_file {
        Some(f) => PathBuf::from(f),
        None => out.path(&format!("{GRID_STEM}.json")),
    }
}

pub fn kbe_solve(cfg: &ExperimentConfig, out: &Output) -> Result<()> {
    let Some(kc) = cfg.kbe_config() else {
        bail!("kbe-solve needs a Rayleigh model (got \"{}\")", cfg.model.class());
    };
    let grid = solve_kbe(&kc)?;
    let stem = match &cfg.kbe.grid_file {
        Some(f) => PathBuf::from(f).with_extension(""),
        None => out.path(GRID_STEM),
    };
    let (json_path, bin_path) = grid.save(&stem)?;
    let name = json_path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.sidecar(
        &name,
        json!({"data_file": bin_path.display().to_string(), "max_overshoot": grid.max_overshoot}),
    )?;
    println!(
        "solved {:?} grid ({:?}), max overshoot {:e}; wrote {}",
        kc.shape(),
        kc.scheme,
        grid.max_overshoot,
        json_path.display()
    );
    Ok(())
}

fn estimator_context(cfg: &ExperimentConfig, out: &Output) -> Result<EstimatorContext> {
    let ModelSpec::Rayleigh { .. } = cfg.model else {
        bail!(
            "importance sampling uses the optimal control, which is only derived for the Rayleigh model (got \"{}\")",
            cfg.model.class()
        );
    };
    let path = grid_path(cfg, out);
    if !path.exists() {
        bail!(
            "value-function grid {} not found; run `fadesim kbe-solve` with the same model, gamma and T first \
             (or point kbe.grid_file at an existing grid)",
            path.display()
        );
    }
    let grid = ValueFunctionGrid::load(&path, false).with_context(|| format!("loading {}", path.display()))?;
    Ok(EstimatorContext {
        model: cfg.model.projected()?,
        r0: cfg.model.r0(),
        gamma: cfg.gamma,
        grid: cfg.grid()?,
        value_grid: Some(Arc::new(grid)),
        confidence: DEFAULT_CONFIDENCE,
    })
}

pub fn ccdf_is(cfg: &ExperimentConfig, out: &Output) -> Result<()> {
    let ctx = estimator_context(cfg, out)?;
    let est = EstimatorRegistry::builtin().build("is", &ctx)?;
    let points = est.estimate(&cfg.w_values(), cfg.m, cfg.seed)?;
    out.write(
        "ccdf_is.csv",
        json!({"grid_file": grid_path(cfg, out).display().to_string()}),
        |w| write_points_csv(&points, w),
    )?;
    for p in &points {
        println!("w={:?}: p_hat {:e}, rel. error {:.4}", p.w, p.p_hat, p.rel_error);
    }
    Ok(())
}

pub fn compare(cfg: &ExperimentConfig, out: &Output) -> Result<()> {
    let ctx = estimator_context(cfg, out)?;
    let seed_is = iq_seed(cfg.seed);
    let rows = estimator_comparison(&ctx, &cfg.w_values(), cfg.m, cfg.m, cfg.seed, seed_is, TARGET_REL_ERROR)?;
    out.write(
        "compare.csv",
        json!({
            "seed_mc": cfg.seed,
            "seed_is": seed_is,
            "target_rel_error": TARGET_REL_ERROR,
            "grid_file": grid_path(cfg, out).display().to_string(),
        }),
        |w| write_comparison_csv(&rows, w),
    )?;
    println!("w,A_MC,A_IS,Var_MC,Var_IS");
    for r in &rows {
        println!("{:?},{:e},{:e},{:e},{:e}", r.w, r.a_mc, r.a_is, r.var_mc, r.var_is);
    }
    Ok(())
}

pub fn stats(cfg: &ExperimentConfig, out: &Output) -> Result<()> {
    let Some(p) = cfg.model.rayleigh() else {
        bail!("stats compares against the Rayleigh closed forms; got \"{}\"", cfg.model.class());
    };
    let plan = StationaryPlan {
        seed: cfg.seed,
        ..StationaryPlan::default()
    };
    let checks = stationary_moments(&p, &plan)?;
    out.write("stats.csv", json!({"plan": plan}), |w| write_moments_csv(&checks, w))?;
    for c in &checks {
        println!(
            "{} (lag {:?}): empirical {:.5} +/- {:.5}, closed form {:.5}",
            c.name, c.lag, c.estimate, c.std_error, c.target
        );
    }
    Ok(())
}

pub fn drift_sweep(cfg: &ExperimentConfig, out: &Output) -> Result<()> {
    if !matches!(cfg.model, ModelSpec::Rice { .. }) {
        bail!("drift-sweep needs a Rice model (got \"{}\")", cfg.model.class());
    }
    let times = [0.5, 1.0, 2.0, 4.0];
    let (r_max, points) = (8.0, 161);
    out.write(
        "rice_drift.csv",
        json!({"times": times, "r_max": r_max, "points": points}),
        |w| write_rice_drift_sweep(&cfg.model.ou_params(), &times, r_max, points, w),
    )?;
    println!("wrote exact and affine Rice drift at s = {times:?}");
    Ok(())
}
