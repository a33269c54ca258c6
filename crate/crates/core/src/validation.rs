//! Statistical checks and independent oracles.
//!
//! The oracles here deliberately avoid the code paths they check: Bessel
//! values come from the power series, conditional expectations from the von
//! Mises form, and the reference sampler moves the I/Q components with the
//! exact OU transition instead of an Euler step.

use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::mc::{FadeSampler, Histogram};
use crate::ou_channel::OuParams;
use crate::quadrature::{integrate, CompensatedSum, QuadOptions};
use crate::rng::RngStream;
use crate::sde::{FadeSample, TimeGrid};
use crate::special_functions::bessel_i0_scaled;

/// Largest argument the series oracles accept (`e^{-x}` must stay normal).
pub const SERIES_MAX_ARG: f64 = 700.0;

fn series_scaled(x: f64, first: f64, denom: impl Fn(f64) -> f64) -> Result<f64> {
    if !(0.0..=SERIES_MAX_ARG).contains(&x) {
        return Err(Error::domain(
            "bessel series oracle",
            format!("need 0 <= x <= {SERIES_MAX_ARG}, got {x}"),
        ));
    }
    let q = 0.25 * x * x;
    let mut t = first * (-x).exp();
    let mut sum = CompensatedSum::default();
    let mut k = 0.0;
    loop {
        sum.add(t);
        k += 1.0;
        t *= q / denom(k);
        if t <= 1e-17 * sum.value() && k > 0.5 * x {
            break;
        }
    }
    Ok(sum.value())
}

/// `e^{-x} I0(x)` from `Σ (x²/4)^k / (k!)²`.
pub fn bessel_i0_series_scaled(x: f64) -> Result<f64> {
    series_scaled(x, 1.0, |k| k * k)
}

/// `e^{-x} I1(x)` from `(x/2) Σ (x²/4)^k / (k! (k+1)!)`.
pub fn bessel_i1_series_scaled(x: f64) -> Result<f64> {
    series_scaled(x, 0.5 * x, |k| k * (k + 1.0))
}

/// `E[I | I² + Q² = r]` for `I, Q ~ N(m, sigv)`: on the circle of radius
/// `sqrt(r)` the angle is von Mises about `π/4` with concentration
/// `κ = |m| sqrt(2r) / sigv`.
pub fn rice_cond_exp_von_mises(m: f64, sigv: f64, r: f64) -> Result<f64> {
    if m == 0.0 || r == 0.0 {
        return Ok(0.0);
    }
    let kappa = m.abs() * (2.0 * r).sqrt() / sigv;
    let ratio = bessel_i1_series_scaled(kappa)? / bessel_i0_series_scaled(kappa)?;
    Ok(m.signum() * (0.5 * r).sqrt() * ratio)
}

/// I/Q paths advanced with the exact OU transition; fade time monitored on
/// the same grid and with the same left-point rule as the Euler samplers.
#[derive(Debug, Clone)]
pub struct ExactIqSampler {
    pub params: OuParams,
    pub gamma: f64,
    pub grid: TimeGrid,
    pub seed: u64,
}

impl FadeSampler for ExactIqSampler {
    fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    fn seed(&self) -> u64 {
        self.seed
    }

    fn sample(&self, index: u64) -> Result<FadeSample> {
        let p = &self.params;
        let dt = self.grid.dt;
        let step = |k: f64, beta: f64| {
            let a = (-k * dt).exp();
            let s = if k > 0.0 {
                beta * (-(-2.0 * k * dt).exp_m1() / (2.0 * k)).sqrt()
            } else {
                beta * dt.sqrt()
            };
            (a, s)
        };
        let (a1, s1) = step(p.k1, p.beta1);
        let (a2, s2) = step(p.k2, p.beta2);
        let g2 = self.gamma * self.gamma;
        let mut normals = RngStream::new(self.seed, index).normals();
        let (mut i, mut q) = (p.i0, p.q0);
        let mut count = 0u32;
        for _ in 0..self.grid.steps {
            if i * i + q * q < g2 {
                count += 1;
            }
            let ei = normals.next_normal();
            let eq = normals.next_normal();
            i = p.theta1 + (i - p.theta1) * a1 + s1 * ei;
            q = p.theta2 + (q - p.theta2) * a2 + s2 * eq;
        }
        Ok(FadeSample {
            r_final: i * i + q * q,
            fade_steps: count,
            log_likelihood: 0.0,
        })
    }
}

fn sorted(xs: &[f64], what: &str) -> Result<Vec<f64>> {
    if xs.is_empty() {
        return Err(Error::config(format!("{what}: empty sample")));
    }
    if xs.iter().any(|x| x.is_nan()) {
        return Err(Error::config(format!("{what}: sample contains NaN")));
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Two-sample Kolmogorov–Smirnov statistic `sup |F_a - F_b|`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    let a = sorted(a, "ks_two_sample")?;
    let b = sorted(b, "ks_two_sample")?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d = 0.0f64;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// One-sample KS statistic of ascending `xs` against CDF values `cdf[k] = F(xs[k])`.
fn ks_from_sorted_cdf(cdf: &[f64]) -> f64 {
    let n = cdf.len() as f64;
    cdf.iter()
        .enumerate()
        .map(|(k, &f)| (f - k as f64 / n).max((k + 1) as f64 / n - f))
        .fold(0.0, f64::max)
}

/// One-sample KS statistic against a closed-form CDF.
pub fn ks_one_sample(xs: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    let v = sorted(xs, "ks_one_sample")?;
    let f: Vec<f64> = v.iter().map(|&x| cdf(x)).collect();
    Ok(ks_from_sorted_cdf(&f))
}

/// Asymptotic KS coefficient `c(α) = sqrt(-ln(α/2) / 2)`.
pub fn ks_coefficient(alpha: f64) -> f64 {
    (-(0.5 * alpha).ln() / 2.0).sqrt()
}

pub fn ks_critical_one_sample(alpha: f64, n: usize) -> f64 {
    ks_coefficient(alpha) / (n as f64).sqrt()
}

pub fn ks_critical_two_sample(alpha: f64, n: usize, m: usize) -> f64 {
    let (n, m) = (n as f64, m as f64);
    ks_coefficient(alpha) * ((n + m) / (n * m)).sqrt()
}

/// Laws the stationary or transient square envelope is checked against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EnvelopeLaw {
    /// Rate `1/σ²`, mean `σ²`.
    Exponential { rate: f64 },
    /// `I ~ N(0, s1v)`, `Q ~ N(0, s2v)` independent.
    SquaredHoyt { s1v: f64, s2v: f64 },
    /// `I ~ N(m1, sigv)`, `Q ~ N(m2, sigv)` independent.
    SquaredRice { m1: f64, m2: f64, sigv: f64 },
}

impl EnvelopeLaw {
    /// Parses a JSON object such as `{"law": "squared-hoyt", "s1v": 1, "s2v": 2}`.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config(format!("envelope law: {e}")))
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Exponential { .. } => "exponential",
            Self::SquaredHoyt { .. } => "squared-hoyt",
            Self::SquaredRice { .. } => "squared-rice",
        }
    }

    fn check(&self) -> Result<()> {
        let ok = match *self {
            Self::Exponential { rate } => rate > 0.0 && rate.is_finite(),
            Self::SquaredHoyt { s1v, s2v } => s1v > 0.0 && s2v > 0.0 && s1v.is_finite() && s2v.is_finite(),
            Self::SquaredRice { m1, m2, sigv } => sigv > 0.0 && sigv.is_finite() && m1.is_finite() && m2.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid {} parameters: {self:?}", self.name())))
        }
    }

    pub fn pdf(&self, r: f64) -> f64 {
        if r < 0.0 {
            return 0.0;
        }
        match *self {
            Self::Exponential { rate } => rate * (-rate * r).exp(),
            Self::SquaredHoyt { s1v, s2v } => {
                let d = 4.0 * s1v * s2v;
                let a = r * (s1v + s2v) / d;
                let y = r * (s1v - s2v).abs() / d;
                bessel_i0_scaled(y).unwrap_or(0.0) * (y - a).exp() / (2.0 * (s1v * s2v).sqrt())
            }
            Self::SquaredRice { m1, m2, sigv } => {
                let nu = m1.hypot(m2);
                let sr = r.sqrt();
                let y = nu * sr / sigv;
                bessel_i0_scaled(y).unwrap_or(0.0) * (-(sr - nu).powi(2) / (2.0 * sigv)).exp() / (2.0 * sigv)
            }
        }
    }

    /// `F` at each point of an ascending sequence, by summing the pdf integral
    /// over consecutive gaps.
    pub fn cdf_sorted(&self, xs: &[f64]) -> Result<Vec<f64>> {
        self.check()?;
        if let Self::Exponential { rate } = *self {
            return Ok(xs.iter().map(|&x| if x <= 0.0 { 0.0 } else { -(-rate * x).exp_m1() }).collect());
        }
        let opts = QuadOptions::abs(1e-13);
        let mut acc = CompensatedSum::default();
        let mut prev = 0.0;
        let mut out = Vec::with_capacity(xs.len());
        for &x in xs {
            let x = x.max(0.0);
            if x < prev {
                return Err(Error::config("cdf_sorted needs ascending input"));
            }
            if x > prev {
                // sqrt substitution keeps the Rice/Hoyt integrands smooth near 0.
                let (a, b) = (prev.sqrt(), x.sqrt());
                acc.add(integrate(|u| 2.0 * u * self.pdf(u * u), a, b, opts)?.value);
                prev = x;
            }
            out.push(acc.value().min(1.0));
        }
        Ok(out)
    }
}

/// Exact law of `I(s)² + Q(s)²`, when it is one of the [`EnvelopeLaw`]s.
///
/// Equal component variances give a squared Rice law (exponential when both
/// means vanish); zero means with unequal variances give a squared Hoyt law.
pub fn transient_law(p: &OuParams, s: f64) -> Result<Option<EnvelopeLaw>> {
    use crate::ou_channel::{transient_moments, Component};
    let (m1, v1) = transient_moments(p, s, Component::I)?;
    let (m2, v2) = transient_moments(p, s, Component::Q)?;
    if !(v1 > 0.0 && v2 > 0.0) {
        return Ok(None);
    }
    Ok(if v1 == v2 {
        if m1 == 0.0 && m2 == 0.0 {
            Some(EnvelopeLaw::Exponential { rate: 0.5 / v1 })
        } else {
            Some(EnvelopeLaw::SquaredRice { m1, m2, sigv: v1 })
        }
    } else if m1 == 0.0 && m2 == 0.0 {
        Some(EnvelopeLaw::SquaredHoyt { s1v: v1, s2v: v2 })
    } else {
        None
    })
}

/// One goodness-of-fit verdict.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GofReport {
    pub test: String,
    pub statistic: f64,
    pub threshold: f64,
    pub n_a: usize,
    pub n_b: Option<usize>,
    pub pass: bool,
    pub seeds: Vec<u64>,
}

impl GofReport {
    pub fn csv_header() -> &'static str {
        "test,statistic,threshold,n_a,n_b,pass,seeds"
    }

    pub fn csv_row(&self) -> String {
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        format!(
            "{},{:?},{:?},{},{},{},{}",
            self.test,
            self.statistic,
            self.threshold,
            self.n_a,
            self.n_b.map(|n| n.to_string()).unwrap_or_default(),
            self.pass,
            seeds.join(";")
        )
    }
}

pub fn write_gof_csv<W: Write>(reports: &[GofReport], mut out: W) -> Result<()> {
    writeln!(out, "{}", GofReport::csv_header())?;
    for r in reports {
        writeln!(out, "{}", r.csv_row())?;
    }
    Ok(())
}

/// KS test of `samples` against `law` at level `alpha`.
pub fn gof_stationary(samples: &[f64], law: EnvelopeLaw, alpha: f64, seeds: &[u64]) -> Result<GofReport> {
    let v = sorted(samples, "gof_stationary")?;
    let f = law.cdf_sorted(&v)?;
    let d = ks_from_sorted_cdf(&f);
    let threshold = ks_critical_one_sample(alpha, v.len());
    Ok(GofReport {
        test: format!("ks-{}", law.name()),
        statistic: d,
        threshold,
        n_a: v.len(),
        n_b: None,
        pass: d <= threshold,
        seeds: seeds.to_vec(),
    })
}

/// Two-sample KS verdict at level `alpha`, or against an explicit bound.
pub fn ks_report(name: &str, a: &[f64], b: &[f64], bound: f64, seeds: &[u64]) -> Result<GofReport> {
    let d = ks_two_sample(a, b)?;
    Ok(GofReport {
        test: name.to_string(),
        statistic: d,
        threshold: bound,
        n_a: a.len(),
        n_b: Some(b.len()),
        pass: d <= bound,
        seeds: seeds.to_vec(),
    })
}

/// Pearson chi-square of a histogram against `cdf`. The outer bins are taken
/// as open-ended and neighbouring bins are merged until each expects at least
/// five counts. Returns `(statistic, degrees of freedom)`.
pub fn chi_square_histogram(h: &Histogram, cdf: impl Fn(f64) -> f64) -> Result<(f64, usize)> {
    let n = h.total() as f64;
    let nb = h.counts.len();
    if nb < 2 {
        return Err(Error::config("chi-square needs at least two bins"));
    }
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let (mut obs, mut exp) = (0.0, 0.0);
    for b in 0..nb {
        let (lo, hi) = h.edges(b);
        let flo = if b == 0 { 0.0 } else { cdf(lo) };
        let fhi = if b + 1 == nb { 1.0 } else { cdf(hi) };
        obs += h.counts[b] as f64;
        exp += n * (fhi - flo);
        if exp >= 5.0 {
            cells.push((obs, exp));
            obs = 0.0;
            exp = 0.0;
        }
    }
    if exp > 0.0 || obs > 0.0 {
        match cells.last_mut() {
            Some(last) => {
                last.0 += obs;
                last.1 += exp;
            }
            None => cells.push((obs, exp)),
        }
    }
    if cells.len() < 2 {
        return Err(Error::config("chi-square: fewer than two cells after merging"));
    }
    let stat = cells.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    Ok((stat, cells.len() - 1))
}

/// Upper `alpha` quantile of the chi-square law with `dof` degrees of freedom.
pub fn chi_square_critical(dof: usize, alpha: f64) -> Result<f64> {
    let d = ChiSquared::new(dof as f64).map_err(|e| Error::config(format!("chi-square dof {dof}: {e}")))?;
    Ok(d.inverse_cdf(1.0 - alpha))
}

/// Estimate with its standard error and closed-form target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentCheck {
    pub name: &'static str,
    /// Lag for autocovariances, 0 otherwise.
    pub lag: f64,
    pub estimate: f64,
    pub std_error: f64,
    pub target: f64,
}

impl MomentCheck {
    pub fn z_score(&self) -> f64 {
        (self.estimate - self.target) / self.std_error
    }

    pub fn relative_gap(&self) -> f64 {
        (self.estimate - self.target).abs() / self.target.abs()
    }
}

/// Sampling plan for [`stationary_moments`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationaryPlan {
    pub dt: f64,
    /// Discarded lead-in time.
    pub burn_in: f64,
    /// Averaging window after the burn-in.
    pub window: f64,
    pub lags: Vec<f64>,
    pub paths: u64,
    pub seed: u64,
}

impl Default for StationaryPlan {
    fn default() -> Self {
        Self {
            dt: 0.005,
            burn_in: 10.0,
            window: 10.0,
            lags: vec![0.1, 0.25, 0.5, 0.75, 1.0],
            paths: 20_000,
            seed: 7,
        }
    }
}

/// Stationary mean, variance and autocovariances of the projected Rayleigh
/// envelope against `σ²`, `σ⁴` and `σ⁴e^{-BΔ}`.
///
/// Each path contributes its window time average, so the standard errors come
/// from independent per-path statistics.
pub fn stationary_moments(p: &crate::ou_channel::RayleighParams, plan: &StationaryPlan) -> Result<Vec<MomentCheck>> {
    if !(plan.dt > 0.0) || !(plan.burn_in >= 0.0) || !(plan.window > 0.0) || plan.paths < 2 {
        return Err(Error::config(format!(
            "stationary plan needs dt > 0, burn_in >= 0, window > 0 and paths >= 2, got {plan:?}"
        )));
    }
    let lag_steps: Vec<usize> = plan.lags.iter().map(|l| (l / plan.dt).round() as usize).collect();
    let max_lag = lag_steps.iter().copied().max().unwrap_or(0);
    let skip = (plan.burn_in / plan.dt).round() as usize;
    let width = (plan.window / plan.dt).round() as usize;
    if width <= max_lag {
        return Err(Error::config("window must be longer than the largest lag"));
    }
    let grid = TimeGrid::new((skip + width) as f64 * plan.dt, skip + width)?;
    let model = crate::projection::ProjectedModel::rayleigh(*p)?;
    let s2 = p.sigma * p.sigma;
    let r0 = p.i0 * p.i0 + p.q0 * p.q0;
    // Centre at the known mean: the per-path statistics stay independent.
    let per_path = crate::mc::map_chunks(plan.paths, |range| {
        let mut rows = Vec::with_capacity((range.end - range.start) as usize);
        for k in range {
            let path = crate::sde::simulate_projected_fade(&model, r0, 0.0, &grid, RngStream::new(plan.seed, k))?;
            let x = &path.r_values[skip..];
            let mean = x.iter().sum::<f64>() / x.len() as f64;
            let var = x.iter().map(|v| (v - s2) * (v - s2)).sum::<f64>() / x.len() as f64;
            let mut row = vec![mean, var];
            for &l in &lag_steps {
                let n = x.len() - l;
                row.push((0..n).map(|i| (x[i] - s2) * (x[i + l] - s2)).sum::<f64>() / n as f64);
            }
            rows.push(row);
        }
        Ok(rows)
    })?
    .into_iter()
    .flatten()
    .collect::<Vec<_>>();
    let m = per_path.len() as f64;
    let column = |c: usize| {
        let mean = per_path.iter().map(|r| r[c]).sum::<f64>() / m;
        let var = per_path.iter().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / (m - 1.0);
        (mean, (var / m).sqrt())
    };
    let (mean, mean_se) = column(0);
    let (var, var_se) = column(1);
    let mut out = vec![
        MomentCheck {
            name: "mean",
            lag: 0.0,
            estimate: mean,
            std_error: mean_se,
            target: s2,
        },
        MomentCheck {
            name: "variance",
            lag: 0.0,
            estimate: var,
            std_error: var_se,
            target: s2 * s2,
        },
    ];
    for (c, (&lag, &l)) in plan.lags.iter().zip(&lag_steps).enumerate() {
        let (est, se) = column(2 + c);
        out.push(MomentCheck {
            name: "autocovariance",
            lag: l as f64 * plan.dt,
            estimate: est,
            std_error: se,
            target: s2 * s2 * (-p.b * lag).exp(),
        });
    }
    Ok(out)
}

/// CSV with columns `quantity,lag,estimate,std_error,target`.
pub fn write_moments_csv<W: Write>(checks: &[MomentCheck], mut out: W) -> Result<()> {
    writeln!(out, "quantity,lag,estimate,std_error,target")?;
    for c in checks {
        writeln!(out, "{},{:?},{:?},{:?},{:?}", c.name, c.lag, c.estimate, c.std_error, c.target)?;
    }
    Ok(())
}

/// Exact and affine Rice conditional expectations on an `r` grid at times `s`.
///
/// CSV columns: `s,r,exact,affine,drift_exact,drift_affine`.
pub fn write_rice_drift_sweep<W: Write>(p: &OuParams, times: &[f64], r_max: f64, points: usize, mut out: W) -> Result<()> {
    use crate::projection::RiceMode;
    writeln!(out, "s,r,exact,affine,drift_exact,drift_affine")?;
    for &s in times {
        for r in crate::mc::linspace(0.0, r_max, points) {
            let (m, sigv) = crate::ou_channel::transient_moments(p, s, crate::ou_channel::Component::I)?;
            let ex = crate::projection::rice_cond_exp(m, sigv, r, RiceMode::Exact)?;
            let af = crate::projection::rice_cond_exp(m, sigv, r, RiceMode::Affine)?;
            let (de, _) = crate::projection::rice_coeffs(p, s, r, RiceMode::Exact)?;
            let (da, _) = crate::projection::rice_coeffs(p, s, r, RiceMode::Affine)?;
            writeln!(out, "{s:?},{r:?},{ex:?},{af:?},{de:?},{da:?}")?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special_functions::bessel_i1_scaled;

    #[test]
    fn series_matches_tabulated() {
        // I0(1), I1(1), I0(10) e^{-10}
        assert!((bessel_i0_series_scaled(1.0).unwrap() * 1f64.exp() - 1.266_065_877_752_008_4).abs() < 1e-15);
        assert!((bessel_i1_series_scaled(1.0).unwrap() * 1f64.exp() - 0.565_159_103_992_485_0).abs() < 1e-15);
        assert!((bessel_i0_series_scaled(10.0).unwrap() - 0.127_833_337_163_428_6).abs() < 1e-15);
        assert_eq!(bessel_i0_series_scaled(0.0).unwrap(), 1.0);
        assert_eq!(bessel_i1_series_scaled(0.0).unwrap(), 0.0);
        assert!(bessel_i0_series_scaled(-1.0).is_err());
        assert!(bessel_i1_series_scaled(701.0).is_err());
    }

    #[test]
    fn series_agrees_with_library_bessels() {
        for k in 0..200 {
            let x = 0.05 * k as f64 * (1.0 + k as f64 / 20.0);
            let a = bessel_i0_series_scaled(x).unwrap();
            let b = bessel_i0_scaled(x).unwrap();
            assert!((a - b).abs() <= 1e-12 * b, "I0 at {x}: {a} vs {b}");
            let a = bessel_i1_series_scaled(x).unwrap();
            let b = bessel_i1_scaled(x).unwrap();
            assert!((a - b).abs() <= 1e-12 * b.max(1e-300), "I1 at {x}: {a} vs {b}");
        }
    }

    #[test]
    fn ks_trivial_cases() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(ks_two_sample(&a, &a).unwrap(), 0.0);
        assert_eq!(ks_two_sample(&a, &[10.0, 11.0]).unwrap(), 1.0);
        assert!((ks_two_sample(&[1.0, 2.0], &[2.0, 3.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(ks_two_sample(&[], &a).is_err());
        let d = ks_one_sample(&[0.5], |x| x).unwrap();
        assert!((d - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ks_critical_values() {
        // c(0.05) = 1.3581
        assert!((ks_coefficient(0.05) - 1.358_1).abs() < 1e-4);
        assert!((ks_critical_two_sample(0.05, 100, 100) - 0.192_06).abs() < 1e-4);
    }

    #[test]
    fn laws_integrate_to_one() {
        for law in [
            EnvelopeLaw::Exponential { rate: 0.5 },
            EnvelopeLaw::SquaredHoyt { s1v: 0.3, s2v: 1.7 },
            EnvelopeLaw::SquaredRice { m1: 1.0, m2: 0.5, sigv: 0.4 },
        ] {
            let f = law.cdf_sorted(&[0.5, 2.0, 200.0]).unwrap();
            assert!(f[0] < f[1]);
            assert!((f[2] - 1.0).abs() < 1e-6, "{law:?}: {}", f[2]);
        }
        // Equal variances: Hoyt and zero-mean Rice reduce to an exponential with mean 2·s.
        let h = EnvelopeLaw::SquaredHoyt { s1v: 0.5, s2v: 0.5 };
        let r = EnvelopeLaw::SquaredRice { m1: 0.0, m2: 0.0, sigv: 0.5 };
        for x in [0.1f64, 1.0, 3.0] {
            let e = (-x).exp();
            assert!((h.pdf(x) - e).abs() < 1e-14);
            assert!((r.pdf(x) - e).abs() < 1e-14);
        }
    }

    #[test]
    fn unknown_law_is_config_error() {
        assert!(EnvelopeLaw::from_json(r#"{"law": "nakagami", "m": 2}"#).is_err());
        let l = EnvelopeLaw::from_json(r#"{"law": "squared-hoyt", "s1v": 1, "s2v": 2}"#).unwrap();
        assert_eq!(l, EnvelopeLaw::SquaredHoyt { s1v: 1.0, s2v: 2.0 });
    }

    #[test]
    fn von_mises_oracle_limits() {
        assert_eq!(rice_cond_exp_von_mises(0.0, 1.0, 2.0).unwrap(), 0.0);
        let v = rice_cond_exp_von_mises(3.0, 0.02, 2.0).unwrap();
        assert!((v - 1.0).abs() < 3e-3);
        let v = rice_cond_exp_von_mises(-3.0, 0.02, 2.0).unwrap();
        assert!((v + 1.0).abs() < 3e-3);
    }

    #[test]
    fn chi_square_critical_tabulated() {
        // 49 degrees of freedom, 1% upper tail: 74.919
        assert!((chi_square_critical(49, 0.01).unwrap() - 74.919).abs() < 1e-2);
    }

    #[test]
    fn exact_sampler_without_noise_is_exponential_decay() {
        let p = OuParams {
            k1: 0.5,
            k2: 0.5,
            theta1: 0.0,
            theta2: 0.0,
            beta1: 0.0,
            beta2: 0.0,
            i0: 1.0,
            q0: 1.0,
        };
        let s = ExactIqSampler {
            params: p,
            gamma: 0.5,
            grid: TimeGrid::new(4.0, 100).unwrap(),
            seed: 0,
        };
        let out = s.sample(0).unwrap();
        assert!((out.r_final - 2.0 * (-4.0f64).exp()).abs() < 1e-12);
        // r(t) = 2e^{-t} < 0.25 once t > ln 8
        let first = (8f64.ln() / 0.04).ceil() as u32;
        assert_eq!(out.fade_steps, 100 - first);
    }
}
