//! Importance sampling of the fade-duration tail under the optimal drift tilt,
//! plus a name-keyed registry of tail estimators and MC-vs-IS comparison tables.
//!
//! Weighted terms are kept as log-weights and exponentiated against their
//! running maximum, so tails far below `f64::MIN_POSITIVE` relative to the
//! largest weight still sum correctly.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::kbe::{ControlPolicy, KbeScheme, ValueFunctionGrid};
use crate::mc::{
    fade_count_histogram, map_chunks, relative_error, samples_needed, CcdfEstimate, ControlledSampler,
    FadeSampler, ProjectedSampler,
};
use crate::projection::ProjectedModel;
use crate::quadrature::CompensatedSum;
use crate::sde::{fade_time_exceeds, TimeGrid};

/// Where the control of an [`IsEstimate`] came from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControlMeta {
    pub scheme: KbeScheme,
    pub nt: usize,
    pub nx: usize,
    pub xb: f64,
    pub v_floor: f64,
    pub zeta_cap: f64,
    pub max_overshoot: f64,
}

impl ControlMeta {
    fn of(policy: &ControlPolicy) -> Self {
        let c = &policy.grid.config;
        Self {
            scheme: c.scheme,
            nt: c.nt,
            nx: c.nx,
            xb: c.xb,
            v_floor: policy.v_floor,
            zeta_cap: policy.zeta_cap,
            max_overshoot: policy.grid.max_overshoot,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IsEstimate {
    pub w: f64,
    pub p_hat: f64,
    /// Single-sample variance of the weighted indicator (divisor `M - 1`).
    pub sample_variance: f64,
    pub rel_error: f64,
    pub m_samples: u64,
    pub confidence: f64,
    /// Paths that ended with `Z > w`.
    pub hits: u64,
    /// Largest weighted term over the sum of all weighted terms.
    pub max_weight_share: f64,
    /// `p_hat = 0`: no controlled path reached the event.
    pub degenerate: bool,
    pub control_meta: ControlMeta,
}

impl IsEstimate {
    pub fn std_error(&self) -> f64 {
        (self.sample_variance / self.m_samples as f64).sqrt()
    }

    pub fn ci_low(&self) -> f64 {
        (self.p_hat - self.confidence * self.std_error()).max(0.0)
    }

    pub fn ci_high(&self) -> f64 {
        self.p_hat + self.confidence * self.std_error()
    }
}

/// Rejects a policy whose grid was solved for a different channel, threshold or horizon.
pub fn check_policy(model: &ProjectedModel, policy: &ControlPolicy, gamma: f64, grid: &TimeGrid) -> Result<()> {
    let Some(p) = model.rayleigh_params() else {
        return Err(Error::config(format!(
            "importance sampling needs a Rayleigh-class model, got `{}`",
            model.name()
        )));
    };
    let c = &policy.grid.config;
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0);
    let mut bad = Vec::new();
    for (name, solved, wanted) in [
        ("B", c.b, p.b),
        ("sigma", c.sigma, p.sigma),
        ("gamma", c.gamma, gamma),
        ("T", c.t_final, grid.t_final),
    ] {
        if !close(solved, wanted) {
            bad.push(format!("{name}: grid has {solved}, run has {wanted}"));
        }
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::config(format!("value-function grid does not match the run ({})", bad.join("; "))))
    }
}

/// Weighted-indicator mean of `M` controlled paths for threshold `policy.w`.
///
/// Sample `k` uses stream `(seed, k)`, the same streams plain MC uses.
pub fn is_estimate(
    model: &ProjectedModel,
    policy: &ControlPolicy,
    r0: f64,
    gamma: f64,
    grid: &TimeGrid,
    m: u64,
    seed: u64,
    confidence: f64,
) -> Result<IsEstimate> {
    check_policy(model, policy, gamma, grid)?;
    if m < 2 {
        return Err(Error::config("importance sampling needs M >= 2"));
    }
    let w = policy.w;
    let sampler = ControlledSampler {
        model: model.clone(),
        control: Arc::new(policy.clone()),
        r0,
        gamma,
        grid: *grid,
        seed,
    };
    let parts = map_chunks(m, |range| {
        let mut lls = Vec::new();
        for k in range {
            let s = sampler.sample(k)?;
            if fade_time_exceeds(s.fade_steps, grid, w) {
                lls.push(s.log_likelihood);
            }
        }
        Ok(lls)
    })?;
    let lls: Vec<f64> = parts.into_iter().flatten().collect();
    let (p_hat, var, share) = weighted_moments(&lls, m)?;
    Ok(IsEstimate {
        w,
        p_hat,
        sample_variance: var,
        rel_error: relative_error(p_hat.min(1.0), var, m, confidence)?,
        m_samples: m,
        confidence,
        hits: lls.len() as u64,
        max_weight_share: share,
        degenerate: p_hat == 0.0,
        control_meta: ControlMeta::of(policy),
    })
}

/// Mean, single-sample variance and largest share of `M` terms, of which the
/// nonzero ones are `exp(lls[i])`.
fn weighted_moments(lls: &[f64], m: u64) -> Result<(f64, f64, f64)> {
    if let Some(bad) = lls.iter().find(|l| !l.is_finite()) {
        return Err(Error::numerical(format!("non-finite log-likelihood {bad}")));
    }
    if lls.is_empty() {
        return Ok((0.0, 0.0, 0.0));
    }
    let top = lls.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mf = m as f64;
    let sum: CompensatedSum = lls.iter().map(|l| (l - top).exp()).collect();
    let s = sum.value();
    let mean = s / mf;
    let sq: CompensatedSum = lls.iter().map(|l| ((l - top).exp() - mean).powi(2)).collect();
    let zeros = (m - lls.len() as u64) as f64;
    let var = (sq.value() + zeros * mean * mean) / (mf - 1.0);
    let scale = top.exp();
    let p = mean * scale;
    let v = var * scale * scale;
    if !p.is_finite() || !v.is_finite() {
        return Err(Error::numerical(format!("weighted mean overflowed (max log-weight {top})")));
    }
    Ok((p, v, 1.0 / s))
}

/// One estimator's value at one threshold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointEstimate {
    pub estimator: &'static str,
    pub w: f64,
    pub p_hat: f64,
    pub sample_variance: f64,
    pub rel_error: f64,
    pub m_samples: u64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// CSV with the plain-MC columns plus `estimator`.
pub fn write_points_csv<W: Write>(points: &[PointEstimate], mut out: W) -> Result<()> {
    writeln!(out, "w,p_hat,variance,rel_error,ci_low,ci_high,estimator")?;
    for p in points {
        writeln!(
            out,
            "{:?},{:?},{:?},{:?},{:?},{:?},{}",
            p.w, p.p_hat, p.sample_variance, p.rel_error, p.ci_low, p.ci_high, p.estimator
        )?;
    }
    Ok(())
}

/// Everything an estimator may need to run.
#[derive(Debug, Clone)]
pub struct EstimatorContext {
    pub model: ProjectedModel,
    pub r0: f64,
    pub gamma: f64,
    pub grid: TimeGrid,
    pub value_grid: Option<Arc<ValueFunctionGrid>>,
    pub confidence: f64,
}

/// A tail-probability estimator selectable by name.
pub trait TailEstimator: Send + Sync {
    fn name(&self) -> &'static str;

    fn estimate(&self, ws: &[f64], m: u64, seed: u64) -> Result<Vec<PointEstimate>>;
}

pub struct McEstimator {
    ctx: EstimatorContext,
}

impl TailEstimator for McEstimator {
    fn name(&self) -> &'static str {
        "mc"
    }

    fn estimate(&self, ws: &[f64], m: u64, seed: u64) -> Result<Vec<PointEstimate>> {
        let c = &self.ctx;
        let sampler = ProjectedSampler {
            model: c.model.clone(),
            r0: c.r0,
            gamma: c.gamma,
            grid: c.grid,
            seed,
        };
        let hist = fade_count_histogram(&sampler, m)?;
        let est = CcdfEstimate::from_histogram(c.grid, hist, ws, c.confidence)?;
        Ok((0..ws.len())
            .map(|k| PointEstimate {
                estimator: "mc",
                w: ws[k],
                p_hat: est.p_hat[k],
                sample_variance: est.sample_variance[k],
                rel_error: est.rel_error[k],
                m_samples: m,
                ci_low: est.ci_low(k),
                ci_high: est.ci_high(k),
            })
            .collect())
    }
}

pub struct IsEstimator {
    ctx: EstimatorContext,
    grid: Arc<ValueFunctionGrid>,
}

impl TailEstimator for IsEstimator {
    fn name(&self) -> &'static str {
        "is"
    }

    fn estimate(&self, ws: &[f64], m: u64, seed: u64) -> Result<Vec<PointEstimate>> {
        let c = &self.ctx;
        ws.iter()
            .map(|&w| {
                let policy = ControlPolicy::new(self.grid.clone(), w);
                let e = is_estimate(&c.model, &policy, c.r0, c.gamma, &c.grid, m, seed, c.confidence)?;
                Ok(PointEstimate {
                    estimator: "is",
                    w,
                    p_hat: e.p_hat,
                    sample_variance: e.sample_variance,
                    rel_error: e.rel_error,
                    m_samples: m,
                    ci_low: e.ci_low(),
                    ci_high: e.ci_high(),
                })
            })
            .collect()
    }
}

pub type EstimatorFactory = fn(&EstimatorContext) -> Result<Box<dyn TailEstimator>>;

/// Tail estimators by name.
pub struct EstimatorRegistry {
    factories: BTreeMap<&'static str, EstimatorFactory>,
}

impl EstimatorRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    /// `mc` and `is`.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register("mc", |ctx| Ok(Box::new(McEstimator { ctx: ctx.clone() })));
        r.register("is", |ctx| {
            let Some(grid) = ctx.value_grid.clone() else {
                return Err(Error::config("estimator `is` needs a solved value-function grid"));
            };
            check_policy(&ctx.model, &ControlPolicy::new(grid.clone(), 0.0), ctx.gamma, &ctx.grid)?;
            Ok(Box::new(IsEstimator { ctx: ctx.clone(), grid }))
        });
        r
    }

    pub fn register(&mut self, name: &'static str, factory: EstimatorFactory) {
        self.factories.insert(name, factory);
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.factories.keys().copied()
    }

    pub fn build(&self, name: &str, ctx: &EstimatorContext) -> Result<Box<dyn TailEstimator>> {
        match self.factories.get(name) {
            Some(f) => f(ctx),
            None => Err(Error::config(format!(
                "unknown estimator `{name}` (known: {})",
                self.names().collect::<Vec<_>>().join(", ")
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub w: f64,
    pub a_mc: f64,
    pub a_is: f64,
    pub var_mc: f64,
    pub var_is: f64,
    pub relerr_mc: f64,
    pub relerr_is: f64,
    pub m_needed_mc: f64,
    pub m_needed_is: f64,
}

/// Side-by-side MC and IS estimates; `M_needed` is the run count for
/// relative error `target_rel_error` at the context's confidence multiplier.
#[allow(clippy::too_many_arguments)]
pub fn estimator_comparison(
    ctx: &EstimatorContext,
    ws: &[f64],
    m_mc: u64,
    m_is: u64,
    seed_mc: u64,
    seed_is: u64,
    target_rel_error: f64,
) -> Result<Vec<ComparisonRow>> {
    if !(target_rel_error > 0.0) {
        return Err(Error::config("target relative error must be > 0"));
    }
    let reg = EstimatorRegistry::builtin();
    let mc = reg.build("mc", ctx)?.estimate(ws, m_mc, seed_mc)?;
    let is = reg.build("is", ctx)?.estimate(ws, m_is, seed_is)?;
    let c = ctx.confidence;
    Ok(mc
        .iter()
        .zip(&is)
        .map(|(a, b)| ComparisonRow {
            w: a.w,
            a_mc: a.p_hat,
            a_is: b.p_hat,
            var_mc: a.sample_variance,
            var_is: b.sample_variance,
            relerr_mc: a.rel_error,
            relerr_is: b.rel_error,
            m_needed_mc: samples_needed(a.p_hat, a.sample_variance, c, target_rel_error),
            m_needed_is: samples_needed(b.p_hat, b.sample_variance, c, target_rel_error),
        })
        .collect())
}

pub fn write_comparison_csv<W: Write>(rows: &[ComparisonRow], mut out: W) -> Result<()> {
    writeln!(out, "w,A_MC,A_IS,Var_MC,Var_IS,relerr_MC,relerr_IS,M_needed_MC,M_needed_IS")?;
    for r in rows {
        writeln!(
            out,
            "{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
            r.w, r.a_mc, r.a_is, r.var_mc, r.var_is, r.relerr_mc, r.relerr_is, r.m_needed_mc, r.m_needed_is
        )?;
    }
    Ok(())
}
